import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskmpc.errors import ConfigError
from riskmpc.harness import (
    AGGREGATE_COLUMNS,
    REFERENCE_TABLE1,
    ExperimentConfig,
    RunStats,
    aggregate_csv,
    demo_paradox,
    expand_risk_spec,
    format_table,
    load_experiment,
    reference_comparison,
    run_monte_carlo,
    runs_csv,
    sample_stats,
    summarize,
    write_outputs,
)

SCALAR = {"Nx": 1, "Nu": 1, "scenarios": [{"A": [[0.9]], "B": [[1.0]]}], "pmf": [1.0],
          "Q": [[1.0]], "R": [[1.0]]}


def test_single_run_stats():
    assert sample_stats([5.0]) == (5.0, 0.0, 0.0)


def test_two_run_stats():
    mean, disp, std = sample_stats([0.0, 10.0])
    assert (mean, disp) == (5.0, 2.5)
    assert np.isclose(std, np.sqrt(50.0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50))
def test_dispersion_bounded_by_std(costs):
    mean, disp, std = sample_stats(costs)
    assert 0.0 <= disp <= std * (1 + 1e-12) + 1e-12


def test_stats_independent_of_order():
    rng = np.random.default_rng(0)
    J = rng.exponential(size=101)
    assert sample_stats(J) == sample_stats(J[::-1]) == sample_stats(rng.permutation(J))


def test_reference_row_rendered_verbatim():
    mean, disp, std, sec = REFERENCE_TABLE1[1.0]
    row = RunStats("mus", 1.0, np.array([mean]), mean, disp, std, sec)
    table = format_table([row])
    for text in ("3.6072", "0.0903", "0.1335", "4.6498"):
        assert text in table
    assert aggregate_csv([row]).splitlines()[0].split(",") == AGGREGATE_COLUMNS


def test_expand_sweep():
    specs = expand_risk_spec({"family": "mus", "c": [0, 0.5, 1]})
    assert [s["c"] for s in specs] == [0, 0.5, 1]
    assert expand_risk_spec("worst_case") == [{"family": "worst_case"}]


@pytest.mark.parametrize("bad", [
    {"risk": {"family": "mus", "c": 0.5}},  # no seed
    {"seed": 1},  # no risk
    {"seed": 1, "risk": "expectation", "runs": 0},
    {"seed": 1, "risk": "expectation", "T": 1.5},
    {"seed": -1, "risk": "expectation"},
    {"seed": 1, "risk": {"family": "mus", "c": 2.0}},
    {"seed": 1, "risk": "expectation", "colour": "red"},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_load_experiment_from_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"seed": 3, "risk": {"family": "mus", "c": [0, 1]}, "runs": 2}))
    cfg = load_experiment(path)
    assert len(cfg.families) == 2 and cfg.seed == 3
    with pytest.raises(ConfigError):
        load_experiment(tmp_path / "missing.json")


def test_zero_initial_state():
    cfg = ExperimentConfig(system="reference", risks="expectation", x0=[0.0, 0.0], runs=3, seed=1)
    (stats,) = run_monte_carlo(cfg)
    assert np.all(stats.costs == 0.0)
    assert (stats.mean, stats.dispersion, stats.std) == (0.0, 0.0, 0.0)


def test_deterministic_system_runs_identical():
    cfg = ExperimentConfig(system=SCALAR, risks="worst_case", x0=[1.0], runs=4, T=10, seed=2)
    (stats,) = run_monte_carlo(cfg)
    assert np.all(stats.costs == stats.costs[0]) and stats.costs[0] > 0
    assert stats.dispersion == 0.0 and stats.std == 0.0


def small_cfg(runs, seed=7):
    return ExperimentConfig(system="reference", risks={"family": "mus", "c": [0.0, 1.0]}, runs=runs,
                            T=4, seed=seed)


def test_run_prefix_independent_of_run_count():
    short = run_monte_carlo(small_cfg(2))
    long = run_monte_carlo(small_cfg(4))
    for a, b in zip(short, long):
        assert np.array_equal(a.costs, b.costs[:2])


def test_outputs_are_reproducible(tmp_path):
    cfg = small_cfg(3)
    write_outputs(cfg, run_monte_carlo(cfg), tmp_path / "a")
    write_outputs(cfg, run_monte_carlo(cfg), tmp_path / "b")
    for name in ("runs_mus_0.csv", "runs_mus_1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    sidecar = json.loads((tmp_path / "a" / "experiment.json").read_text())
    assert sidecar["config_sha256"] == cfg.digest()
    assert "aggregate.csv" in sidecar["files"]


def test_runs_csv_layout():
    s = RunStats.from_costs([1.5, 2.0], "mus", 0.5, steps=[3, 4])
    assert runs_csv(s).splitlines() == ["run,cost,steps", "0,1.5,3", "1,2.0,4"]
    report = summarize([s])
    assert report["csv"].startswith(",".join(AGGREGATE_COLUMNS))
    assert reference_comparison([s])[0]["reference_mean"] == REFERENCE_TABLE1[0.5][0]
    with pytest.raises(ValueError):
        summarize([])


def test_paradox_report():
    rep = demo_paradox()
    assert rep.static_value == 48.0
    assert np.array_equal(rep.conditional_values, [60.0, 60.0])
    assert rep.nested_value == 60.0
    assert rep.nested_value > rep.deterministic_cost > rep.static_value
    assert "rho_0(Z) = 48" in rep.text and "= 60" in rep.text
