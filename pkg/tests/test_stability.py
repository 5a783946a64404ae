import numpy as np
import pytest

from riskmpc.errors import CapacityExceeded, DegenerateFit, InvalidLyapunov
from riskmpc.riskcore import Expectation, MeanUpperSemideviation, WorstCase, make_envelope
from riskmpc.stability import (
    check_lyapunov,
    closed_loop_levels,
    estimate_decay,
    risk_of_squared_state,
)
from riskmpc.sysmodel import make_system


def scalar(a, b=0.0, L=1):
    a = np.broadcast_to(np.asarray(a, dtype=float), (L,))
    return make_system([[[ai]] for ai in a], [[[b]]] * L, np.full(L, 1.0 / L), [[1.0]], [[1.0]])


def test_zero_state_has_zero_risk(reference_sys, reference_certs):
    env, cert = reference_certs["worst"]
    assert risk_of_squared_state(reference_sys, env, cert, [0.0, 0.0], 3) == 0.0


def test_deterministic_path():
    sysm = scalar(0.5)
    env = make_envelope(Expectation(), sysm.pmf)
    assert np.isclose(risk_of_squared_state(sysm, env, None, [1.0], 3), 0.5 ** 6, rtol=1e-14)


def test_worst_branch_two_steps():
    sysm = scalar([0.5, 0.8], L=2)
    env = make_envelope(WorstCase(), sysm.pmf)
    assert np.isclose(risk_of_squared_state(sysm, env, None, [1.0], 2), 0.8 ** 4, rtol=1e-14)


def test_decay_contraction_and_expansion():
    est = estimate_decay(scalar(0.5), make_envelope(Expectation(), [1.0]), None, [1.0], 6)
    assert abs(est.lam_fit - 0.25) <= 1e-6 and est.stable and est.bounded
    est = estimate_decay(scalar(2.0), make_envelope(Expectation(), [1.0]), None, [1.0], 6)
    assert abs(est.lam_fit - 4.0) <= 1e-6 and not est.stable


def test_decay_degenerate_fit():
    sysm = scalar(0.0)
    with pytest.raises(DegenerateFit):
        estimate_decay(sysm, make_envelope(Expectation(), [1.0]), None, [1.0], 3)


def test_capacity_limit(reference_sys, reference_certs):
    env, cert = reference_certs["worst"]
    with pytest.raises(CapacityExceeded):
        risk_of_squared_state(reference_sys, env, cert, [1.0, 1.0], 13)


def test_reference_linear_law_decays(reference_sys, reference_certs):
    env, cert = reference_certs["worst"]
    est = estimate_decay(reference_sys, env, cert.F, [1.0, 1.0], 6)
    assert est.lam_fit < 1.0
    assert est.monotone_from(2)
    assert np.all(est.r >= 0)


def test_lyapunov_scalar_examples():
    env = make_envelope(WorstCase(), [1.0])
    rep = check_lyapunov(scalar(0.5), env, [[1.0]], None, samples=10)
    assert np.isclose(rep.b3, 0.75) and rep.valid
    assert rep.b1 == rep.b2 == 1.0
    rep = check_lyapunov(scalar(1.1), env, [[1.0]], None, samples=10)
    assert np.isclose(rep.b3, -0.21) and not rep.valid


def test_lyapunov_rejects_indefinite():
    env = make_envelope(Expectation(), [1.0])
    with pytest.raises(InvalidLyapunov):
        check_lyapunov(scalar(0.5), env, [[-1.0]], None)
    with pytest.raises(InvalidLyapunov):
        check_lyapunov(scalar(0.5), env, [[0.0]], None)


def test_certificate_bounds_lyapunov_decrease(reference_sys, reference_certs):
    for key in ("expectation", "mus0.5", "worst"):
        env, cert = reference_certs[key]
        rep = check_lyapunov(reference_sys, env, cert.P, cert, samples=2000)
        assert rep.valid
        # the terminal inequality adds Q + F'RF >= I, so the decrease beats the margin
        assert rep.b3 >= cert.margin - 1e-9
        assert rep.b3_exact >= cert.margin - 1e-9


def test_sampled_decrease_matches_closed_form(reference_sys, reference_certs):
    env, cert = reference_certs["mus0.75"]
    rep = check_lyapunov(reference_sys, env, cert.P, cert.F, samples=10_000, seed=1)
    assert rep.b3 >= rep.b3_exact - 1e-9
    assert abs(rep.b3 - rep.b3_exact) <= 0.02 * abs(rep.b3_exact)


def test_expectation_matches_monte_carlo(reference_sys, reference_certs):
    env, cert = reference_certs["expectation"]
    x0 = np.array([1.0, -0.5])
    k = 4
    exact = risk_of_squared_state(reference_sys, env, cert.F, x0, k)
    rng = np.random.default_rng(0)
    Acl = reference_sys.closed_loop(cert.F)
    idx = rng.choice(reference_sys.L, size=(10_000, k), p=reference_sys.pmf)
    X = np.tile(x0, (10_000, 1))
    for h in range(k):
        X = np.einsum("kab,kb->ka", Acl[idx[:, h]], X)
    sq = np.einsum("ij,ij->i", X, X)
    assert abs(sq.mean() - exact) <= 3 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_risk_dominates_expectation(reference_sys, reference_certs):
    _, cert = reference_certs["mus1"]
    x0 = [0.3, 1.0]
    base = make_envelope(Expectation(), reference_sys.pmf)
    for fam in (MeanUpperSemideviation(0.4), MeanUpperSemideviation(1.0), WorstCase()):
        env = make_envelope(fam, reference_sys.pmf)
        for k in range(1, 6):
            assert (risk_of_squared_state(reference_sys, env, cert.F, x0, k)
                    >= risk_of_squared_state(reference_sys, base, cert.F, x0, k) - 1e-12)


def test_callable_policy_matches_gain(reference_sys, reference_certs):
    env, cert = reference_certs["mus0.25"]
    lin = closed_loop_levels(reference_sys, cert.F, [1.0, 1.0], 3)
    fun = closed_loop_levels(reference_sys, lambda x: cert.F @ x, [1.0, 1.0], 3)
    for a, b in zip(lin, fun):
        assert np.allclose(a, b, atol=1e-14)
