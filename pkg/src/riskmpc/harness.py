"""Closed-loop Monte Carlo experiments and reporting.

A run starts at ``x0``, applies the receding-horizon law and draws the
scenario index i.i.d. from the pmf at every step.  The realized cost is the
sum of stage costs until ``|x_k| < stop_norm`` or ``k == T``.  Run ``i`` uses
the generator ``default_rng([seed, i])``, so the disturbance stream of a run
depends only on the master seed and its index (and is shared across risk
settings, which makes the settings directly comparable).

Statistics per risk setting: sample mean, sample dispersion
``mean((J_i - mean)^+)`` (the empirical upper semideviation), sample
standard deviation with the ``n - 1`` divisor, and the mean wall-clock time
of one MPC solve.
"""
import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import ConfigError, InvalidRiskParameter, SolverFailed
from .mpc import MpcController
from .riskcore import (
    CostTree,
    CustomV,
    eval_nested,
    eval_static_paths,
    family_from_spec,
    family_param,
    family_to_spec,
    make_envelope,
    nested_levels,
)
from .synthesis import synthesize_terminal
from .sysmodel import load_system, reference_system

log = logging.getLogger(__name__)

AGGREGATE_COLUMNS = ["risk_family", "param", "mean", "dispersion", "std", "mean_iter_seconds"]
RUN_COLUMNS = ["run", "cost", "steps"]

# Published results of the reference experiment: c -> (mean, dispersion, std, seconds per iteration)
REFERENCE_TABLE1 = {
    0.0: (2.9998, 0.2889, 0.4245, 4.8861),
    0.25: (3.3012, 0.2643, 0.3520, 5.2003),
    0.5: (3.4178, 0.2004, 0.2977, 4.4007),
    0.75: (3.5898, 0.1601, 0.2231, 4.4577),
    1.0: (3.6072, 0.0903, 0.1335, 4.6498),
}


@dataclass
class ExperimentConfig:
    system: object  # config mapping, JSON path, or "reference"
    risks: list  # risk specs, one per sweep value
    N: int = 3
    x0: list = field(default_factory=lambda: [1.0, 1.0])
    runs: int = 100
    T: int = 50
    seed: int = 0
    out: str | None = None
    stop_norm: float = 1e-6
    tol: float = 1e-7

    def __post_init__(self):
        if isinstance(self.risks, (dict, str)):
            self.risks = expand_risk_spec(self.risks)
        if not self.risks:
            raise ConfigError("no risk setting given")
        try:
            self.families = [family_from_spec(r) for r in self.risks]
        except (InvalidRiskParameter, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid risk spec: {exc}") from exc
        for name in ("N", "runs", "T"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
            setattr(self, name, int(value))
        if self.seed is None or isinstance(self.seed, bool) or int(self.seed) != self.seed \
                or self.seed < 0:
            raise ConfigError("a non-negative integer seed is required")
        self.seed = int(self.seed)
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        self.x0 = [float(v) for v in np.ravel(self.x0)]

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        if "seed" not in d:
            raise ConfigError("experiment config needs a seed")
        risk = d.get("risk", d.get("risks"))
        if risk is None:
            raise ConfigError("experiment config needs a 'risk' entry")
        known = {"system", "risk", "risks", "N", "x0", "runs", "T", "seed", "out", "stop_norm", "tol"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        kwargs = {k: d[k] for k in ("N", "x0", "runs", "T", "seed", "out", "stop_norm", "tol") if k in d}
        return cls(system=d.get("system", "reference"), risks=risk, **kwargs)

    def load_system(self):
        if isinstance(self.system, str) and self.system == "reference":
            return reference_system()
        return load_system(self.system)

    def to_dict(self):
        return {
            "system": self.system,
            "risks": [family_to_spec(f) for f in self.families],
            "N": self.N,
            "x0": self.x0,
            "runs": self.runs,
            "T": self.T,
            "seed": self.seed,
            "stop_norm": self.stop_norm,
            "tol": self.tol,
        }

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def expand_risk_spec(spec):
    """Turn ``{"family": "mus", "c": [0, 0.5, 1]}`` into one spec per value."""
    if isinstance(spec, list):
        out = []
        for s in spec:
            out.extend(expand_risk_spec(s))
        return out
    if isinstance(spec, str):
        return [{"family": spec}]
    if not isinstance(spec, dict):
        raise ConfigError(f"risk spec must be an object, got {spec!r}")
    for key in ("c", "alpha"):
        if isinstance(spec.get(key), list):
            return [{**spec, key: v} for v in spec[key]]
    return [spec]


@dataclass
class RunStats:
    risk_family: str
    param: float
    costs: np.ndarray  # J_i in run order
    mean: float
    dispersion: float
    std: float
    mean_iter_seconds: float
    steps: np.ndarray | None = None

    @classmethod
    def from_costs(cls, costs, risk_family="", param=float("nan"), iter_seconds=(), steps=None):
        costs = np.asarray(costs, dtype=np.float64).ravel()
        if costs.size == 0:
            raise ValueError("need at least one run")
        if not np.all(np.isfinite(costs)):
            raise ValueError("run costs must be finite")
        mean, disp, std = sample_stats(costs)
        secs = np.asarray(iter_seconds, dtype=np.float64)
        return cls(risk_family, float(param), costs, mean, disp, std,
                   float(secs.mean()) if secs.size else 0.0,
                   None if steps is None else np.asarray(steps))


def sample_stats(costs):
    """(mean, dispersion, std) computed from the sorted sample.

    Sorting first makes the floating-point sums independent of run order.
    """
    J = np.sort(np.asarray(costs, dtype=np.float64))
    n = J.size
    mean = math.fsum(J) / n
    disp = math.fsum(np.maximum(J - mean, 0.0)) / n
    std = math.sqrt(math.fsum((J - mean) ** 2) / (n - 1)) if n > 1 else 0.0
    return mean, disp, std


def simulate_run(sys, policy, x0, rng, T, stop_norm=1e-6, timings=None):
    """One closed-loop trajectory; returns (realized cost, steps taken)."""
    x = np.asarray(x0, dtype=np.float64).copy()
    total = 0.0
    k = 0
    while k < T and np.linalg.norm(x) >= stop_norm:
        t0 = time.perf_counter()
        u = policy(x)
        if timings is not None:
            timings.append(time.perf_counter() - t0)
        total += sys.stage_cost(x, u)
        j = rng.choice(sys.L, p=sys.pmf)
        x = sys.A[j] @ x + sys.B[j] @ u
        k += 1
    return total, k


def run_monte_carlo(cfg, progress=None):
    """Closed-loop statistics for every risk setting in ``cfg``."""
    sys = cfg.load_system()
    x0 = np.asarray(cfg.x0, dtype=np.float64)
    if x0.size != sys.Nx:
        raise ConfigError(f"x0 has {x0.size} entries, system has Nx={sys.Nx}")
    results = []
    for family in cfg.families:
        env = make_envelope(family, sys.pmf)
        cert = synthesize_terminal(sys, env)
        ctrl = MpcController(sys, env, cfg.N, cert, tol=cfg.tol)
        policy = ctrl.policy()
        costs = np.zeros(cfg.runs)
        steps = np.zeros(cfg.runs, dtype=np.int64)
        timings = []
        for i in range(cfg.runs):
            rng = np.random.default_rng([cfg.seed, i])
            try:
                costs[i], steps[i] = simulate_run(sys, policy, x0, rng, cfg.T, cfg.stop_norm, timings)
            except SolverFailed as exc:
                raise SolverFailed(f"run {i} ({family_label(family)}): {exc}", exc.solution) from exc
            if progress is not None:
                progress(family, i)
        stats = RunStats.from_costs(costs, family_label(family), family_param(family), timings, steps)
        log.info("%s param=%s mean=%.4f dispersion=%.4f std=%.4f", stats.risk_family, stats.param,
                 stats.mean, stats.dispersion, stats.std)
        results.append(stats)
    return results


def family_label(family):
    return family.name


def _fmt(value):
    """Shortest round-trip text for a float; empty for NaN."""
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def aggregate_csv(stats_list):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for s in stats_list:
        w.writerow([s.risk_family, _fmt(s.param), _fmt(s.mean), _fmt(s.dispersion), _fmt(s.std),
                    _fmt(s.mean_iter_seconds)])
    return buf.getvalue()


def runs_csv(stats):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    steps = stats.steps if stats.steps is not None else [""] * stats.costs.size
    for i, (J, k) in enumerate(zip(stats.costs, steps)):
        w.writerow([i, _fmt(J), k])
    return buf.getvalue()


def format_table(stats_list):
    """Plain-text table with the reference experiment's column layout."""
    header = f"{'risk':<14}{'param':>8}{'mean':>10}{'dispersion':>12}{'std':>10}{'sec/iter':>12}"
    lines = [header, "-" * len(header)]
    for s in stats_list:
        param = "" if math.isnan(s.param) else f"{s.param:g}"
        lines.append(f"{s.risk_family:<14}{param:>8}{s.mean:>10.4f}{s.dispersion:>12.4f}"
                     f"{s.std:>10.4f}{s.mean_iter_seconds:>12.4f}")
    return "\n".join(lines)


def summarize(stats_list):
    """Report dict with the aggregate CSV text and a pretty table."""
    stats_list = list(stats_list)
    if not stats_list:
        raise ValueError("nothing to summarize")
    return {"csv": aggregate_csv(stats_list), "table": format_table(stats_list)}


def run_file_name(stats):
    param = "" if math.isnan(stats.param) else f"_{stats.param:g}"
    return f"runs_{stats.risk_family}{param}.csv"


def write_outputs(cfg, stats_list, out_dir):
    """Per-setting run CSVs, the aggregate CSV and a JSON sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for s in stats_list:
        path = out / run_file_name(s)
        path.write_text(runs_csv(s))
        files.append(path.name)
    (out / "aggregate.csv").write_text(aggregate_csv(stats_list))
    sidecar = {
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "version": __version__,
        "backend": BACKEND,
        "files": files + ["aggregate.csv"],
        "timings": {f"{s.risk_family}{'' if math.isnan(s.param) else ' ' + format(s.param, 'g')}":
                    {"mean_iter_seconds": s.mean_iter_seconds} for s in stats_list},
    }
    (out / "experiment.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out


def reference_comparison(stats_list):
    """Rows pairing MUS results with the reference table (for logging only)."""
    rows = []
    for s in stats_list:
        if s.risk_family == "mus" and s.param in REFERENCE_TABLE1:
            ref = REFERENCE_TABLE1[s.param]
            rows.append({"c": s.param, "mean": s.mean, "reference_mean": ref[0],
                         "dispersion": s.dispersion, "reference_dispersion": ref[1],
                         "std": s.std, "reference_std": ref[2]})
    return rows


@dataclass
class ParadoxReport:
    static_value: float  # rho_0(Z) with the static (whole-tree) measure
    conditional_values: np.ndarray  # rho_1(Z) in each state after the first step
    nested_value: float
    deterministic_cost: float
    text: str


def demo_paradox():
    """Two-stage up/down tree where static risk evaluation is time-inconsistent.

    The envelope holds two measures, up-probability 0.4 and 0.6, applied to
    a final cost of 100 on the mixed paths UD, DU and 0 on UU, DD.
    """
    env = make_envelope(CustomV(((0.4, 0.6), (0.6, 0.4))), [0.5, 0.5])
    tree = CostTree.leaves_only(2, 2, [0.0, 100.0, 100.0, 0.0])
    static = eval_static_paths(env, tree)
    levels = nested_levels(env, tree)
    conditional = levels[1]
    nested = eval_nested(env, tree)
    W = 50.0
    lines = [
        "Time-consistency paradox (two-stage up/down tree)",
        "  final cost Z: UU=0, UD=100, DU=100, DD=0; deterministic alternative W=50",
        "  envelope: P(up) in {0.4, 0.6}",
        f"  static rho_0(Z) = {static:g}",
        f"  rho_1(Z) after U = {conditional[0]:g}, after D = {conditional[1]:g}",
        f"  nested (time-consistent) value = {nested:g}",
        f"  ordering: nested {nested:g} > W {W:g} > static {static:g}",
        "  Z is riskier than W in every state at time 1, yet the static measure",
        "  ranks W riskier at time 0; the nested composition does not.",
    ]
    return ParadoxReport(static, conditional, nested, W, "\n".join(lines))


def load_experiment(path_or_dict):
    if isinstance(path_or_dict, dict):
        return ExperimentConfig.from_dict(path_or_dict)
    try:
        data = json.loads(Path(path_or_dict).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read experiment config: {exc}") from exc
    return ExperimentConfig.from_dict(data)


__all__ = [
    "AGGREGATE_COLUMNS", "ExperimentConfig", "ParadoxReport", "RunStats", "REFERENCE_TABLE1",
    "aggregate_csv", "demo_paradox", "expand_risk_spec", "format_table", "load_experiment",
    "reference_comparison", "run_monte_carlo", "runs_csv", "sample_stats", "simulate_run",
    "summarize", "write_outputs",
]
