import itertools

import numpy as np
import pytest

from riskmpc.conic import (
    INFEASIBLE,
    NONNEG,
    OPTIMAL,
    PSD,
    RSOC,
    SOC,
    UNBOUNDED,
    ZERO,
    ConicProgram,
    bmat,
    concat,
    psd_project,
    smat,
    solve,
    svec,
)
from riskmpc.errors import InvalidProgram


def test_min_x_above_one():
    p = ConicProgram()
    x = p.variable()
    p.add(NONNEG, x - 1.0)
    p.minimize(x)
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert abs(x.value(sol.x) - 1.0) <= 1e-6


def test_second_order_cone_norm():
    p = ConicProgram()
    t = p.variable()
    p.add(SOC, concat([t, 3.0, 4.0]))
    p.minimize(t)
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert abs(t.value(sol.x) - 5.0) <= 1e-6


def test_rotated_cone():
    # min t s.t. 2 * t * 0.5 >= 3^2
    p = ConicProgram()
    t = p.variable()
    p.add(RSOC, concat([t, 0.5, 3.0]))
    p.minimize(t)
    sol = solve(p)
    assert abs(t.value(sol.x) - 9.0) <= 1e-5


def test_psd_two_by_two_boundary():
    p = ConicProgram()
    t = p.variable()
    p.add(PSD, bmat([[np.eye(1), t.reshape((1, 1))], [t.reshape((1, 1)), np.eye(1)]]))
    p.maximize(t)
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert abs(t.value(sol.x) - 1.0) <= 1e-5


def test_infeasible_detected():
    p = ConicProgram()
    x = p.variable()
    p.add(NONNEG, x - 1.0)
    p.add(NONNEG, -x)
    p.minimize(x)
    sol = solve(p)
    assert sol.status == INFEASIBLE
    assert sol.certificate is not None


def test_unbounded_detected():
    p = ConicProgram()
    x = p.variable()
    p.add(NONNEG, -x)
    p.minimize(x)
    assert solve(p).status == UNBOUNDED


def test_nonfinite_data_rejected():
    p = ConicProgram()
    x = p.variable()
    p.add(NONNEG, x - np.inf)
    p.minimize(x)
    with pytest.raises(InvalidProgram):
        solve(p)


def test_empty_program_rejected():
    with pytest.raises(InvalidProgram):
        solve(ConicProgram())


def test_psd_project_examples():
    assert np.allclose(psd_project(svec(np.diag([1.0, -1.0]))), svec(np.diag([1.0, 0.0])))
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert np.abs(psd_project(svec(M)) - svec(M)).max() <= 1e-12
    out = smat(psd_project(svec([[0.0, 1.0], [1.0, 0.0]])))
    assert np.allclose(out, 0.5 * np.ones((2, 2)))


def test_psd_project_idempotent_and_nearest():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 6))
        G = rng.standard_normal((d, d))
        v = svec(G + G.T)
        once = psd_project(v)
        assert np.abs(psd_project(once) - once).max() <= 1e-10
        # eigen-oracle: clamp the spectrum directly
        w, V = np.linalg.eigh(G + G.T)
        assert np.allclose(smat(once), V @ np.diag(np.maximum(w, 0)) @ V.T, atol=1e-9)


def test_svec_preserves_inner_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        A, B = rng.standard_normal((2, 4, 4))
        A, B = A + A.T, B + B.T
        assert np.isclose(svec(A) @ svec(B), np.trace(A @ B))
        assert np.allclose(smat(svec(A)), A)


# -- LPs against an exhaustive vertex-enumeration oracle ---------------------

def vertex_lp(c, G, h):
    """min c'x over {G x <= h} by trying every n-subset of rows (bounded)."""
    n = c.size
    best = np.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, c @ x)
    return best


def random_lp(rng):
    n = int(rng.integers(1, 6))
    k = int(rng.integers(0, 4))
    # a box keeps every instance bounded; extra random cuts keep the origin feasible
    G = np.vstack([np.eye(n), -np.eye(n), rng.standard_normal((k, n))])
    h = np.concatenate([rng.uniform(0.5, 2.0, 2 * n), rng.uniform(0.1, 1.0, k)])
    return rng.standard_normal(n), G, h


def test_random_lps_match_vertex_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        c, G, h = random_lp(rng)
        p = ConicProgram()
        x = p.variable((c.size,))
        p.add(NONNEG, h - G @ x)
        p.minimize(x.dot(c))
        sol = solve(p, tol=1e-9)
        assert sol.status == OPTIMAL
        assert abs(sol.primal_objective - vertex_lp(c, G, h)) <= 1e-6
        # weak duality
        assert sol.primal_objective >= sol.dual_objective - 1e-7 * (1 + abs(sol.primal_objective))


def test_optimal_residuals_within_tolerance():
    rng = np.random.default_rng(5)
    c, G, h = random_lp(rng)
    p = ConicProgram()
    x = p.variable((c.size,))
    p.add(NONNEG, h - G @ x)
    p.minimize(x.dot(c))
    tol = 1e-7
    sol = solve(p, tol=tol)
    assert sol.primal_residual <= tol and sol.dual_residual <= tol and sol.gap <= tol


def test_warm_restart_converges_quickly():
    p = ConicProgram()
    t = p.variable()
    y = p.variable((2,))
    p.add(SOC, concat([t, y - np.array([3.0, 4.0])]))
    p.add(ZERO, y.sum() - 1.0)
    p.minimize(t)
    first = solve(p)
    again = solve(p, warm_start={"x": first.x, "y": first.y, "s": first.s})
    assert again.status == OPTIMAL
    assert again.iterations <= 5


def test_solver_is_deterministic():
    p = ConicProgram()
    X = p.symmetric_variable(3)
    C = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]])
    p.add(PSD, X)
    p.add(ZERO, X[0, 0] + X[1, 1] + X[2, 2] - 1.0)
    p.minimize(X.flatten().dot(C.ravel()))
    a, b = solve(p), solve(p)
    assert a.iterations == b.iterations
    assert np.array_equal(a.x, b.x)
    # min trace(CX) over the spectraplex is the smallest eigenvalue
    assert abs(a.primal_objective - np.linalg.eigvalsh(C)[0]) <= 1e-5


def test_small_rotated_cone_program_converges():
    # a tiny one-step program whose accelerated iterates used to collapse onto w = 0
    p = ConicProgram()
    t, g, x1, u = p.variable(), p.variable(), p.variable(), p.variable()
    P = 3.5
    p.add(ZERO, x1 - 0.5 - u)
    p.add(RSOC, concat([t, 0.5, 1.0, u]))
    p.add(RSOC, concat([g, 0.5, np.sqrt(P) * x1]))
    p.minimize(t + g)
    sol = solve(p)
    assert sol.status == OPTIMAL
    u_star = -0.5 * P / (1 + P)
    assert abs(u.value(sol.x) - u_star) <= 1e-5
