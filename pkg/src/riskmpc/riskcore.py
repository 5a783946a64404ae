"""Polytopic risk envelopes and static / nested risk evaluation.

Envelopes live in the "q-form": a polytope of probability mass functions
inside the simplex, so that the one-step risk of a cost vector ``Z`` is

    rho(Z) = max_{q in envelope} sum_j q[j] * Z[j].

Because the polytope is bounded this is a maximum over its vertices, which
are computed once per envelope.  The same envelope is reused at every stage
of a scenario tree (time-invariant, state-independent risk).
"""
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    CapacityExceeded,
    EmptyEnvelope,
    InvalidRiskParameter,
    InvalidVertex,
    ShapeMismatch,
)

PMF_TOL = 1e-12
SIMPLEX_TOL = 1e-10
VERTEX_TOL = 1e-9
MAX_ENUM_DIM = 12
MAX_ENUM_COMBOS = 5_000_000


def as_pmf(probs):
    """Validate a probability mass function with strictly positive entries."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    if p.size < 1 or not np.all(np.isfinite(p)):
        raise InvalidRiskParameter("pmf must be a non-empty finite vector")
    if np.any(p <= 0):
        raise InvalidRiskParameter("pmf entries must be strictly positive")
    if abs(p.sum() - 1.0) > PMF_TOL * max(1, p.size):
        raise InvalidRiskParameter(f"pmf sums to {p.sum()!r}, not 1")
    return p


# -- envelope families ---------------------------------------------------

@dataclass(frozen=True)
class Expectation:
    name = "expectation"


@dataclass(frozen=True)
class MeanUpperSemideviation:
    c: float
    name = "mus"

    def __post_init__(self):
        if not (0.0 <= self.c <= 1.0):
            raise InvalidRiskParameter(f"semideviation weight c={self.c} not in [0, 1]")


@dataclass(frozen=True)
class WorstCase:
    name = "worst_case"


@dataclass(frozen=True)
class CVaR:
    alpha: float
    name = "cvar"

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidRiskParameter(f"CVaR level alpha={self.alpha} not in (0, 1]")


@dataclass(frozen=True, eq=False)
class CustomH:
    """Envelope ``{q in simplex : SI q <= TI, SE q = TE}``."""

    SI: np.ndarray | None = None
    TI: np.ndarray | None = None
    SE: np.ndarray | None = None
    TE: np.ndarray | None = None
    name = "custom_h"


@dataclass(frozen=True, eq=False)
class CustomV:
    vertices: tuple
    name = "custom_v"


def family_from_spec(spec):
    """Parse a JSON-style risk spec such as ``{"family": "mus", "c": 0.5}``."""
    if isinstance(spec, (Expectation, MeanUpperSemideviation, WorstCase, CVaR, CustomH, CustomV)):
        return spec
    if isinstance(spec, str):
        spec = {"family": spec}
    kind = str(spec.get("family", "")).lower().replace("-", "_")
    if kind in ("expectation", "mean", "risk_neutral"):
        return Expectation()
    if kind in ("mus", "mean_upper_semideviation", "semideviation"):
        return MeanUpperSemideviation(float(spec["c"]))
    if kind in ("worst_case", "worstcase", "max"):
        return WorstCase()
    if kind == "cvar":
        return CVaR(float(spec["alpha"]))
    if kind == "custom_h":
        return CustomH(*(np.asarray(spec[k], dtype=float) if spec.get(k) is not None else None
                         for k in ("SI", "TI", "SE", "TE")))
    if kind == "custom_v":
        return CustomV(tuple(tuple(map(float, v)) for v in spec["vertices"]))
    raise InvalidRiskParameter(f"unknown risk family {spec!r}")


def family_to_spec(family):
    if isinstance(family, MeanUpperSemideviation):
        return {"family": "mus", "c": family.c}
    if isinstance(family, CVaR):
        return {"family": "cvar", "alpha": family.alpha}
    if isinstance(family, CustomV):
        return {"family": "custom_v", "vertices": [list(v) for v in family.vertices]}
    if isinstance(family, CustomH):
        return {"family": "custom_h",
                **{k: (None if getattr(family, k) is None else np.asarray(getattr(family, k)).tolist())
                   for k in ("SI", "TI", "SE", "TE")}}
    return {"family": family.name}


def family_param(family):
    """Scalar parameter for reporting (c for MUS, alpha for CVaR)."""
    if isinstance(family, MeanUpperSemideviation):
        return family.c
    if isinstance(family, CVaR):
        return family.alpha
    return float("nan")


# -- envelope ------------------------------------------------------------

@dataclass(eq=False)
class RiskEnvelope:
    family: object
    base_pmf: np.ndarray
    _vertices: np.ndarray | None = field(default=None, repr=False)

    @property
    def L(self):
        return self.base_pmf.size

    @cached_property
    def vertices(self):
        """Deduplicated vertex array, one pmf per row."""
        if self._vertices is None:
            self._vertices = _family_vertices(self.family, self.base_pmf)
        verts = np.asarray(self._vertices, dtype=np.float64)
        _check_simplex(verts)
        verts.setflags(write=False)
        return verts

    def hrep(self):
        """(SI, TI, SE, TE) of the envelope in q-space, simplex constraints implicit.

        Not available for vertex-specified envelopes.
        """
        return _family_hrep(self.family, self.base_pmf)

    def contains(self, q, tol=1e-9):
        """Membership test via the H-representation."""
        q = np.asarray(q, dtype=np.float64)
        if np.any(q < -tol) or abs(q.sum() - 1.0) > tol:
            return False
        SI, TI, SE, TE = self.hrep()
        if SI is not None and SI.size and np.any(SI @ q > TI + tol):
            return False
        if SE is not None and SE.size and np.any(np.abs(SE @ q - TE) > tol):
            return False
        return True

    def __call__(self, Z):
        return eval_static(self, Z)


def make_envelope(family, base_pmf):
    """Build the envelope of ``family`` around the pmf ``base_pmf``."""
    p = as_pmf(base_pmf)
    fam = family_from_spec(family)
    env = RiskEnvelope(fam, p)
    env.vertices  # validate eagerly so errors surface at construction
    return env


def _check_simplex(verts):
    if verts.ndim != 2 or verts.shape[0] < 1:
        raise EmptyEnvelope("envelope has no vertices")
    if np.any(verts < -SIMPLEX_TOL) or np.any(np.abs(verts.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise InvalidVertex("envelope vertex lies outside the probability simplex")


def dedupe(points, tol=VERTEX_TOL):
    """Remove points within ``tol`` (infinity norm) of an earlier point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    kept = np.empty_like(points)
    count = 0
    for pt in points:
        if count == 0 or np.min(np.max(np.abs(kept[:count] - pt), axis=1)) > tol:
            kept[count] = pt
            count += 1
    return kept[:count].copy()


def mus_vertices(p, c):
    """Images of h in {0, c}^L under q = p * (1 + h - <h, p>)."""
    L = p.size
    hs = np.array(list(itertools.product((0.0, c), repeat=L)))
    qs = p * (1.0 + hs - (hs @ p)[:, None])
    return dedupe(qs)


def cvar_vertices(p, alpha):
    """Vertices of {q in simplex : q <= p / alpha}."""
    L = p.size
    cap = p / alpha
    pts = []
    for mask in itertools.product((False, True), repeat=L):
        sat = np.array(mask)
        mass = cap[sat].sum()
        if mass > 1.0 + 1e-12:
            continue
        if abs(mass - 1.0) <= 1e-12:
            q = np.where(sat, cap, 0.0)
            pts.append(q / q.sum())
            continue
        for k in np.flatnonzero(~sat):
            rest = 1.0 - mass
            if rest <= cap[k] + 1e-12:
                q = np.where(sat, cap, 0.0)
                q[k] = min(rest, cap[k])
                pts.append(q)
    return dedupe(np.array(pts))


def _family_vertices(family, p):
    L = p.size
    if isinstance(family, Expectation):
        return p[None, :].copy()
    if isinstance(family, MeanUpperSemideviation):
        return mus_vertices(p, family.c)
    if isinstance(family, WorstCase):
        return np.eye(L)
    if isinstance(family, CVaR):
        return cvar_vertices(p, family.alpha)
    if isinstance(family, CustomH):
        return enumerate_vertices(family.SI, family.TI, family.SE, family.TE, L)
    if isinstance(family, CustomV):
        verts = np.atleast_2d(np.asarray(family.vertices, dtype=np.float64))
        if verts.shape[1] != L:
            raise InvalidVertex(f"vertices have length {verts.shape[1]}, expected {L}")
        _check_simplex(verts)
        return dedupe(verts)
    raise InvalidRiskParameter(f"unsupported family {family!r}")


def _family_hrep(family, p):
    L = p.size
    empty = (np.zeros((0, L)), np.zeros(0))
    if isinstance(family, Expectation):
        return (*empty, np.eye(L), p.copy())
    if isinstance(family, WorstCase):
        return (*empty, *empty)
    if isinstance(family, CVaR):
        return (np.eye(L), p / family.alpha, *empty)
    if isinstance(family, MeanUpperSemideviation):
        # q/p = 1 + g with E[g] = 0 and max g - min g <= c
        rows = []
        for i in range(L):
            for j in range(L):
                if i != j:
                    r = np.zeros(L)
                    r[j] = 1.0 / p[j]
                    r[i] = -1.0 / p[i]
                    rows.append(r)
        SI = np.array(rows) if rows else np.zeros((0, L))
        return (SI, np.full(SI.shape[0], family.c), *empty)
    if isinstance(family, CustomH):
        SI = np.zeros((0, L)) if family.SI is None else np.atleast_2d(np.asarray(family.SI, float))
        TI = np.zeros(0) if family.TI is None else np.asarray(family.TI, float).ravel()
        SE = np.zeros((0, L)) if family.SE is None else np.atleast_2d(np.asarray(family.SE, float))
        TE = np.zeros(0) if family.TE is None else np.asarray(family.TE, float).ravel()
        return SI, TI, SE, TE
    raise InvalidRiskParameter("vertex-specified envelopes have no stored H-representation")


def enumerate_vertices(SI, TI, SE, TE, L):
    """Vertices of ``{q : q >= 0, sum q = 1, SI q <= TI, SE q = TE}``.

    Exhaustive active-set enumeration: the equality constraints are
    eliminated by parametrising their solution set, then every choice of
    ``dim`` inequality rows is tried as an active set.
    """
    if L > MAX_ENUM_DIM:
        raise CapacityExceeded(f"vertex enumeration limited to L <= {MAX_ENUM_DIM}")
    SI = np.zeros((0, L)) if SI is None else np.atleast_2d(np.asarray(SI, dtype=np.float64))
    TI = np.zeros(0) if TI is None else np.asarray(TI, dtype=np.float64).ravel()
    SE = np.zeros((0, L)) if SE is None else np.atleast_2d(np.asarray(SE, dtype=np.float64))
    TE = np.zeros(0) if TE is None else np.asarray(TE, dtype=np.float64).ravel()
    if SI.size == 0:
        SI = np.zeros((0, L))
    if SE.size == 0:
        SE = np.zeros((0, L))
    if SI.shape[1] != L or SE.shape[1] != L or SI.shape[0] != TI.size or SE.shape[0] != TE.size:
        raise ShapeMismatch("constraint matrices do not match L")

    Aeq = np.vstack([np.ones((1, L)), SE])
    beq = np.concatenate([[1.0], TE])
    Gin = np.vstack([-np.eye(L), SI])
    hin = np.concatenate([np.zeros(L), TI])

    # q = q0 + N t parametrises the equality set
    q0, *_ = np.linalg.lstsq(Aeq, beq, rcond=None)
    if np.max(np.abs(Aeq @ q0 - beq)) > 1e-9:
        raise EmptyEnvelope("equality constraints are inconsistent")
    _, sing, vt = np.linalg.svd(Aeq)
    rank = int(np.sum(sing > 1e-10 * max(1.0, sing[0])))
    N = vt[rank:].T
    dim = N.shape[1]
    G = Gin @ N
    h = hin - Gin @ q0

    if dim == 0:
        cands = q0[None, :]
    else:
        m = G.shape[0]
        from math import comb
        if comb(m, dim) > MAX_ENUM_COMBOS:
            raise CapacityExceeded(f"{comb(m, dim)} active sets exceed the enumeration budget")
        cands = []
        combos = itertools.combinations(range(m), dim)
        while True:
            chunk = np.array(list(itertools.islice(combos, 100_000)), dtype=np.int64)
            if chunk.size == 0:
                break
            mats = G[chunk]
            rhs = h[chunk]
            dets = np.linalg.det(mats)
            scale = np.prod(np.linalg.norm(mats, axis=2), axis=1)
            ok = np.abs(dets) > 1e-10 * np.maximum(scale, 1e-300)
            if not np.any(ok):
                continue
            t = np.linalg.solve(mats[ok], rhs[ok][..., None])[..., 0]
            cands.append(q0 + t @ N.T)
        cands = np.vstack(cands) if cands else np.zeros((0, L))

    feas = np.all(cands @ Gin.T <= hin + 1e-9, axis=1) if cands.size else np.zeros(0, bool)
    pts = cands[feas]
    if pts.shape[0] == 0:
        raise EmptyEnvelope("the constraint system is infeasible")
    pts = np.where(np.abs(pts) < 1e-15, 0.0, pts)
    return dedupe(_sorted_rows(pts))


def _sorted_rows(pts):
    order = np.lexsort(np.round(pts, 9).T[::-1])
    return pts[order]


# -- evaluation ----------------------------------------------------------

def eval_static(env, Z):
    """One-step coherent risk: max over envelope vertices of E_q[Z]."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != env.L:
        raise ShapeMismatch(f"cost vector has length {Z.shape[-1]}, envelope has L={env.L}")
    return np.max(Z @ env.vertices.T, axis=-1)


def argmax_vertex(env, Z):
    """The maximising vertex (first one on ties)."""
    Z = np.asarray(Z, dtype=np.float64)
    return env.vertices[int(np.argmax(env.vertices @ Z))]


def mus_closed_form(p, c, Z):
    """E[Z] + c E[(Z - E[Z])^+] evaluated directly."""
    p = np.asarray(p, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    mean = p @ Z
    return mean + c * (p @ np.maximum(Z - mean, 0.0))


def cvar_sorted(p, alpha, Z):
    """CVaR of a discrete cost by sorting: mean of the worst alpha tail."""
    p = np.asarray(p, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    order = np.argsort(-Z, kind="stable")
    remaining = alpha
    total = 0.0
    for j in order:
        w = min(p[j], remaining)
        total += w * Z[j]
        remaining -= w
        if remaining <= 0:
            break
    return total / alpha


@dataclass
class CostTree:
    """Complete L-ary tree of scalar costs in breadth-first order.

    Node 0 is the root; the children of the k-th node at depth h are the
    nodes ``k*L + j`` (j = 0..L-1) at depth h+1.
    """

    L: int
    N: int
    costs: np.ndarray

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64).ravel()
        if self.costs.size != tree_size(self.L, self.N):
            raise ShapeMismatch(
                f"expected {tree_size(self.L, self.N)} node costs, got {self.costs.size}")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("tree costs must be finite")

    def level(self, h):
        start = level_offset(self.L, h)
        return self.costs[start:start + self.L ** h]

    @classmethod
    def from_levels(cls, L, levels):
        return cls(L, len(levels) - 1, np.concatenate([np.ravel(lv) for lv in levels]))

    @classmethod
    def leaves_only(cls, L, N, leaf_costs):
        costs = np.zeros(tree_size(L, N))
        costs[level_offset(L, N):] = np.asarray(leaf_costs, dtype=np.float64).ravel()
        return cls(L, N, costs)


def tree_size(L, N):
    return N + 1 if L == 1 else (L ** (N + 1) - 1) // (L - 1)


def level_offset(L, h):
    return h if L == 1 else (L ** h - 1) // (L - 1)


def eval_nested(env, tree):
    """Time-consistent composition Z_0 + rho(Z_1 + rho(Z_2 + ...)) on a tree."""
    if tree.L != env.L:
        raise ShapeMismatch(f"tree branching {tree.L} != envelope size {env.L}")
    value = tree.level(tree.N).copy()
    for h in range(tree.N - 1, -1, -1):
        value = tree.level(h) + eval_static(env, value.reshape(-1, tree.L))
    return float(value[0])


def nested_levels(env, tree):
    """Per-node nested values, level by level (root first)."""
    if tree.L != env.L:
        raise ShapeMismatch(f"tree branching {tree.L} != envelope size {env.L}")
    out = [tree.level(tree.N).copy()]
    for h in range(tree.N - 1, -1, -1):
        out.append(tree.level(h) + eval_static(env, out[-1].reshape(-1, tree.L)))
    return out[::-1]


def path_probabilities(q, N):
    """Probability of every depth-N history under i.i.d. draws from q."""
    probs = np.ones(1)
    for _ in range(N):
        probs = np.outer(probs, q).ravel()
    return probs


def path_costs(tree):
    """Sum of node costs along each root-to-leaf path."""
    acc = tree.level(0).copy()
    for h in range(1, tree.N + 1):
        acc = np.repeat(acc, tree.L) + tree.level(h)
    return acc


def eval_static_paths(env, tree):
    """Static (single-time) risk of the total path cost.

    Each envelope vertex is applied as a product measure over the whole
    horizon and the worst resulting expectation is returned.  Contrast with
    :func:`eval_nested`.
    """
    if tree.L != env.L:
        raise ShapeMismatch(f"tree branching {tree.L} != envelope size {env.L}")
    totals = path_costs(tree)
    return float(max(path_probabilities(q, tree.N) @ totals for q in env.vertices))
