"""Risk-sensitive stability tools.

* :func:`risk_of_squared_state` evaluates the nested risk of ``|x_k|^2``
  (zero cost at every earlier stage) over the closed-loop scenario tree.
* :func:`estimate_decay` fits ``r_k ~ c * lam**k * |x_0|^2``.
* :func:`check_lyapunov` samples the quadratic Lyapunov decrease
  ``rho(V(f(x, w))) - V(x) <= -b3 |x|^2`` and, for linear laws, also
  computes ``b3`` exactly from the vertex matrices.

A policy is either an ``Nu x Nx`` gain (``u = F x``), an object with an
``F`` attribute (e.g. a terminal certificate), ``None`` for zero input, or
any callable ``x -> u`` such as an MPC law.  Callables are evaluated once per
tree node, so they are only practical for short horizons.
"""
from dataclasses import dataclass

import numpy as np

from . import matlib
from .errors import CapacityExceeded, DegenerateFit, InvalidLyapunov, ShapeMismatch
from .riskcore import eval_static
from .sysmodel import MAX_TREE_LEAVES

BOUND_SLACK = 0.10  # relative slack on the fitted envelope constant
MPC_POLICY_DEPTH = 5  # deepest tree the CLI evaluates with an MPC law


def policy_function(sys, policy):
    """Vectorised ``(k, Nx) -> (k, Nu)`` map for any supported policy kind."""
    if policy is None:
        return lambda X: np.zeros((X.shape[0], sys.Nu))
    gain = getattr(policy, "F", policy)
    if not callable(gain):
        F = np.atleast_2d(np.asarray(gain, dtype=np.float64))
        if F.shape != (sys.Nu, sys.Nx):
            raise ShapeMismatch(f"gain must be {sys.Nu}x{sys.Nx}, got {F.shape}")
        return lambda X: X @ F.T
    return lambda X: np.array([np.asarray(policy(x), dtype=np.float64).reshape(sys.Nu) for x in X]
                              ).reshape(X.shape[0], sys.Nu)


def is_linear(policy):
    return policy is None or not callable(getattr(policy, "F", policy))


def closed_loop_levels(sys, policy, x0, depth, max_leaves=MAX_TREE_LEAVES):
    """States of the closed-loop tree, one ``(L**h, Nx)`` array per depth h."""
    if sys.L ** depth > max_leaves:
        raise CapacityExceeded(f"L^k = {sys.L ** depth} leaves exceeds the limit {max_leaves}")
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.size != sys.Nx:
        raise ShapeMismatch(f"x0 has {x0.size} entries, system has Nx={sys.Nx}")
    pol = policy_function(sys, policy)
    levels = [x0[None, :]]
    for _ in range(depth):
        X = levels[-1]
        U = pol(X)
        # child j of node i sits at i*L + j
        nxt = np.einsum("lab,kb->kla", sys.A, X) + np.einsum("lab,kb->kla", sys.B, U)
        levels.append(nxt.reshape(-1, sys.Nx))
    return levels


def _nested_leaf_risk(env, leaf_values):
    value = leaf_values
    while value.size > 1:
        value = eval_static(env, value.reshape(-1, env.L))
    return float(value[0]) if value.ndim else float(value)


def risk_of_squared_state(sys, env, policy, x0, k, max_leaves=MAX_TREE_LEAVES):
    """Nested risk of ``x_k' x_k`` under the closed loop, zero earlier costs."""
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    if env.L != sys.L:
        raise ShapeMismatch("envelope size does not match the number of scenarios")
    levels = closed_loop_levels(sys, policy, x0, int(k), max_leaves)
    X = levels[-1]
    return _nested_leaf_risk(env, np.einsum("ij,ij->i", X, X))


@dataclass
class DecayEstimate:
    K: int
    r: np.ndarray  # r_1 .. r_K
    c_fit: float
    lam_fit: float
    max_ratio: float  # max_k r_k / (lam_fit**k |x0|^2)
    bounded: bool  # max_ratio <= c_fit * (1 + BOUND_SLACK)

    @property
    def stable(self):
        return self.lam_fit < 1.0

    def monotone_from(self, start=2, rtol=1e-12):
        """Whether r_k is non-increasing for k >= start (1-based)."""
        tail = self.r[start - 1:]
        return bool(np.all(np.diff(tail) <= rtol * np.maximum(tail[:-1], 1.0)))


def estimate_decay(sys, env, policy, x0, K, max_leaves=MAX_TREE_LEAVES):
    """Log-linear least-squares fit of the risk of the squared state."""
    if int(K) != K or K < 2:
        raise ValueError("K must be an integer >= 2")
    K = int(K)
    if env.L != sys.L:
        raise ShapeMismatch("envelope size does not match the number of scenarios")
    levels = closed_loop_levels(sys, policy, x0, K, max_leaves)
    r = np.array([_nested_leaf_risk(env, np.einsum("ij,ij->i", X, X)) for X in levels[1:]])
    if np.any(r <= 0.0):
        raise DegenerateFit("risk of the squared state hit zero: the trajectory reached the origin "
                            "exactly (stable)")
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    norm0 = float(x0 @ x0)
    ks = np.arange(1, K + 1, dtype=np.float64)
    slope, intercept = np.polyfit(ks, np.log(r / norm0), 1)
    lam = float(np.exp(slope))
    c = float(np.exp(intercept))
    max_ratio = float(np.max(r / (lam ** ks * norm0)))
    return DecayEstimate(K, r, c, lam, max_ratio, max_ratio <= c * (1.0 + BOUND_SLACK))


@dataclass
class LyapunovCheckReport:
    b1: float
    b2: float
    b3: float
    worst_violation: float  # max over samples of (rho(V(f(x,w))) - V(x)) / |x|^2, clipped at 0
    samples: int
    b3_exact: float | None = None  # closed form for linear laws

    @property
    def valid(self):
        return self.b1 > 0 and self.b2 > 0 and self.b3 > 0 and self.worst_violation == 0.0


def sphere_samples(rng, count, dim):
    """``count`` points drawn uniformly from the unit sphere in R^dim."""
    X = rng.standard_normal((count, dim))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def lyapunov_decrement_matrices(sys, env, M, F):
    """For ``u = F x``: ``sum_j q_j Acl_j' M Acl_j - M``, one per vertex."""
    Acl = sys.closed_loop(np.atleast_2d(np.asarray(F, dtype=np.float64)))
    S = np.einsum("lji,jk,lkm->lim", Acl, M, Acl)
    return [np.tensordot(q, S, axes=1) - M for q in env.vertices]


def check_lyapunov(sys, env, M, policy, samples=10_000, seed=0):
    """Sample the decrease condition for ``V(x) = x' M x``.

    ``samples`` is either a count of unit-sphere draws (seeded by ``seed``)
    or an explicit ``(k, Nx)`` array of states.
    """
    try:
        M = matlib.sym_matrix(M)
    except Exception as exc:
        raise InvalidLyapunov(f"V matrix is invalid: {exc}") from exc
    if M.shape != (sys.Nx, sys.Nx):
        raise InvalidLyapunov(f"V matrix must be {sys.Nx}x{sys.Nx}")
    if not matlib.is_pos_def(M):
        raise InvalidLyapunov("V matrix must be positive definite")
    if np.ndim(samples) == 0:
        if int(samples) < 1:
            raise ValueError("need at least one sample")
        X = sphere_samples(np.random.default_rng(seed), int(samples), sys.Nx)
    else:
        X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if X.shape[1] != sys.Nx:
            raise ShapeMismatch(f"samples must have {sys.Nx} columns")
        X = X[np.linalg.norm(X, axis=1) > 0]
        if X.shape[0] == 0:
            raise ValueError("need at least one non-zero sample")
    U = policy_function(sys, policy)(X)
    succ = np.einsum("lab,kb->kla", sys.A, X) + np.einsum("lab,kb->kla", sys.B, U)
    v_succ = np.einsum("kla,ab,klb->kl", succ, M, succ)
    v_now = np.einsum("ka,ab,kb->k", X, M, X)
    decrement = (eval_static(env, v_succ) - v_now) / np.einsum("ij,ij->i", X, X)
    b3_exact = None
    if is_linear(policy) and policy is not None:
        F = np.atleast_2d(np.asarray(getattr(policy, "F", policy), dtype=np.float64))
        mats = lyapunov_decrement_matrices(sys, env, M, F)
        b3_exact = float(min(-matlib.max_eig(D) for D in mats))
    elif policy is None:
        mats = lyapunov_decrement_matrices(sys, env, M, np.zeros((sys.Nu, sys.Nx)))
        b3_exact = float(min(-matlib.max_eig(D) for D in mats))
    return LyapunovCheckReport(
        b1=float(matlib.min_eig(M)),
        b2=float(matlib.max_eig(M)),
        b3=float(-decrement.max()),
        worst_violation=float(max(decrement.max(), 0.0)),
        samples=X.shape[0],
        b3_exact=b3_exact,
    )
