"""The compiled kernels and the pure-Python fallback must agree."""
import numpy as np
import pytest

from riskmpc import _backend, _kernels_py

compiled = pytest.importorskip("riskmpc._kernels")


def _random_sym(rng, d):
    G = rng.standard_normal((d, d))
    return G + G.T


@pytest.mark.parametrize("d", [1, 2, 5, 12])
def test_jacobi_backends_agree(d):
    rng = np.random.default_rng(d)
    M = _random_sym(rng, d)
    w1, V1 = compiled.jacobi_eigh(M)
    w2, V2 = _kernels_py.jacobi_eigh(M)
    assert np.allclose(w1, w2, atol=1e-10)
    for V in (V1, V2):
        assert np.linalg.norm(V @ np.diag(w1) @ V.T - M) <= 1e-9 * (1 + np.linalg.norm(M))


def _layout(rng):
    n_nonneg = int(rng.integers(0, 4))
    soc = np.array(rng.integers(1, 5, size=rng.integers(0, 3)), dtype=np.int64)
    psd = np.array(rng.integers(1, 4, size=rng.integers(0, 3)), dtype=np.int64)
    size = 2 + n_nonneg + int(soc.sum()) + int((psd * (psd + 1) // 2).sum())
    return n_nonneg, soc, psd, size


def test_project_cones_backends_agree():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n_nonneg, soc, psd, size = _layout(rng)
        y = rng.standard_normal(size)
        a, b = y.copy(), y.copy()
        compiled.project_cones(a, 2, n_nonneg, soc, psd)
        _kernels_py.project_cones(b, 2, n_nonneg, soc, psd)
        assert np.allclose(a, b, atol=1e-10)
        # the two leading (free) entries are untouched
        assert np.array_equal(a[:2], y[:2])


def test_backend_selection_reports_name():
    assert _backend.BACKEND in ("cython", "python")


def test_pure_python_fallback_selected_by_environment():
    import os
    import subprocess
    import sys

    code = "from riskmpc import _backend; print(_backend.BACKEND)"
    env = dict(os.environ, RISKMPC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_fallback_gives_same_mpc_solution():
    import json
    import os
    import subprocess
    import sys

    code = (
        "import json\n"
        "from riskmpc.mpc import MpcController\n"
        "from riskmpc.riskcore import MeanUpperSemideviation, make_envelope\n"
        "from riskmpc.synthesis import synthesize_terminal\n"
        "from riskmpc.sysmodel import reference_system\n"
        "s = reference_system(); env = make_envelope(MeanUpperSemideviation(0.5), s.pmf)\n"
        "sol = MpcController(s, env, 2, synthesize_terminal(s, env)).solve([1.0, 1.0])\n"
        "print(json.dumps([sol.value] + sol.u0.tolist()))\n"
    )
    results = []
    for flag in ("0", "1"):
        env = dict(os.environ, RISKMPC_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                             check=True)
        results.append(np.array(json.loads(out.stdout.strip().splitlines()[-1])))
    assert np.allclose(results[0], results[1], rtol=1e-6, atol=1e-8)
