"""Operator-splitting conic solver.

ADMM applied to the homogeneous self-dual embedding of::

    minimize c@x  s.t.  A@x + s = b,  s in K          (primal)
    maximize -b@y s.t.  A.T@y + c = 0,  y in K*       (dual)

Each iteration solves one linear system with the cached factorisation of
``I + A.T A``, projects onto ``R^n x K* x R_+`` and updates the dual
iterate.  Over-relaxation and Ruiz equilibration are applied; iterates that
stall are accelerated with type-II Anderson mixing on the fixed-point map.
Infeasibility and unboundedness are read off the embedding when ``tau``
collapses.  Everything is deterministic.
"""
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import _backend
from ..errors import InvalidProgram
from .program import CompiledProgram, ConicProgram

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAX_ITERS = "MaxIters"

DEFAULT_TOL = 1e-7
OFFLINE_MAX_ITERS = 200_000
ONLINE_MAX_ITERS = 50_000

_DENSE_LIMIT = 1500


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    solve_time: float = 0.0
    certificate: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == OPTIMAL


class _Cones:
    """Row layout of K: z zero rows, l nonneg rows, SOC blocks, PSD blocks."""

    def __init__(self, z, l, q, s):
        self.z, self.l = z, l
        self.q = np.asarray(q, dtype=np.int64)
        self.s = np.asarray(s, dtype=np.int64)
        self.m = z + l + int(self.q.sum()) + int((self.s * (self.s + 1) // 2).sum())

    def project_dual(self, y):
        # K* = free x NonNeg x SOC x PSD (zero cone's dual is free)
        _backend.project_cones(y, self.z, self.l, self.q, self.s)

    def project_primal(self, s):
        s[: self.z] = 0.0
        _backend.project_cones(s, self.z, self.l, self.q, self.s)

    def block_groups(self):
        """Row ranges sharing one equilibration factor (SOC/PSD blocks)."""
        groups = []
        off = self.z + self.l
        for d in self.q:
            groups.append((off, off + int(d)))
            off += int(d)
        for d in self.s:
            k = int(d * (d + 1) // 2)
            groups.append((off, off + k))
            off += k
        return groups


def _equilibrate(A, cones, iters=15):
    """Ruiz scaling D A E with one row factor per SOC/PSD block."""
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    Acur = A.tocsc(copy=True)
    groups = cones.block_groups()
    for _ in range(iters):
        absA = abs(Acur)
        row_norm = np.asarray(absA.max(axis=1).todense()).ravel() if m else np.zeros(0)
        col_norm = np.asarray(absA.max(axis=0).todense()).ravel()
        for a, b in groups:
            row_norm[a:b] = row_norm[a:b].max()
        row_norm = np.where(row_norm < 1e-4, 1.0, row_norm)
        col_norm = np.where(col_norm < 1e-4, 1.0, col_norm)
        dr = 1.0 / np.sqrt(row_norm)
        dc = 1.0 / np.sqrt(col_norm)
        Acur = sp.diags(dr) @ Acur @ sp.diags(dc)
        d *= dr
        e *= dc
    d = np.clip(d, 1e-4, 1e4)
    e = np.clip(e, 1e-4, 1e4)
    return (sp.diags(d) @ A @ sp.diags(e)).tocsc(), d, e


class _LinearSystem:
    """Solves (R + M) z = w with M = [[0, A'], [-A, 0]], R = diag(rx, ry)."""

    def __init__(self, A, rx, ry):
        self.A = A
        self.At = A.T.tocsr()
        self.Ar = A.tocsr()
        self.rx = rx
        self.ry_inv = 1.0 / ry
        n = A.shape[1]
        if n <= _DENSE_LIMIT:
            Ad = A.toarray()
            K = Ad.T @ (self.ry_inv[:, None] * Ad)
            K[np.diag_indices(n)] += rx
            self._dense, info = lapack.dpotrf(K, lower=1)
            if info != 0:
                raise np.linalg.LinAlgError("KKT matrix is not positive definite")
            self._sparse = None
        else:
            self._dense = None
            K = sp.diags(np.full(n, rx)) + self.At @ sp.diags(self.ry_inv) @ self.Ar
            self._sparse = spla.splu(K.tocsc())
        self.n = n

    def solve(self, wx, wy):
        rhs = wx - self.At @ (self.ry_inv * wy)
        if self._dense is not None:
            x, _ = lapack.dpotrs(self._dense, rhs, lower=1)
        else:
            x = self._sparse.solve(rhs)
        y = self.ry_inv * (wy + self.Ar @ x)
        return x, y


def _unpack(program):
    if isinstance(program, ConicProgram):
        return program.compile()
    if isinstance(program, CompiledProgram):
        return program
    raise InvalidProgram("expected a ConicProgram")


def solve(program, tol=DEFAULT_TOL, max_iters=OFFLINE_MAX_ITERS, warm_start=None, **options):
    """Solve a conic program.

    Parameters
    ----------
    program : ConicProgram or CompiledProgram
    tol : float
        Relative tolerance on primal residual, dual residual and gap.
    max_iters : int
    warm_start : dict, optional
        ``{"x": ..., "y": ..., "s": ...}`` from a previous solution.
    **options
        Passed to :meth:`Workspace.run` (``alpha``, ``anderson``, ...).

    Returns
    -------
    ConicSolution
    """
    data = _unpack(program)
    ws = Workspace(data.A, data.z, data.l, data.q, data.s)
    sol = ws.run(data.b, data.c, tol=tol, max_iters=max_iters, warm_start=warm_start, **options)
    sol.primal_objective += data.offset
    sol.dual_objective += data.offset
    return sol


class Workspace:
    """Equilibrated constraint matrix plus cached factorisations.

    Only ``A`` and the cone layout are fixed; ``b`` and ``c`` are supplied
    per call, which is what the receding-horizon loop needs (the initial
    state only enters ``b``).  Factorisations are cached per value of the
    step parameter, which lives on a fixed grid of quarter decades.
    """

    RHO_X = 1e-6
    ZERO_CONE_WEIGHT = 1e-3
    SCALE_STEPS = 4  # grid points per decade
    SCALE_BOUND = 24  # |exponent| limit on the grid (1e-6 .. 1e6)
    COLLAPSE = 1e-3  # relative iterate norm treated as collapse onto w = 0

    def __init__(self, A, z, l, q, s):
        A = sp.csc_matrix(A)
        if not np.all(np.isfinite(A.data)):
            raise InvalidProgram("program data contains non-finite values")
        self.A = A
        self.m, self.n = A.shape
        if self.n < 1:
            raise InvalidProgram("program has no variables")
        self.cones = _Cones(z, l, q, s)
        if self.cones.m != self.m:
            raise InvalidProgram("cone dimensions do not match constraint rows")
        self.As, self.D, self.E = _equilibrate(A, self.cones)
        self._systems = {}

    def _weights(self, k):
        scale = 10.0 ** (k / self.SCALE_STEPS)
        ry = np.full(self.m, 1.0 / scale)
        ry[: self.cones.z] *= self.ZERO_CONE_WEIGHT
        return ry

    def _system(self, k):
        lin = self._systems.get(k)
        if lin is None:
            lin = _LinearSystem(self.As, self.RHO_X, self._weights(k))
            self._systems[k] = lin
        return lin

    def run(self, b, c, tol=DEFAULT_TOL, max_iters=OFFLINE_MAX_ITERS, warm_start=None,
            alpha=1.5, scale=0.1, adaptive=True, anderson=5, check_every=5,
            adapt_every=50, time_limit=None):
        """Douglas-Rachford on the embedding in the metric ``R``.

        ``R = diag(rho_x I, ry, 1)`` with ``ry = 1/scale`` on cone rows (and
        a further factor 1e-3 on equality rows).  ``scale`` is rebalanced
        from the ratio of relative primal and dual residuals every
        ``adapt_every`` iterations when ``adaptive``.
        """
        if not tol > 0:
            raise InvalidProgram("tol must be positive")
        t_start = time.perf_counter()
        b = np.asarray(b, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise InvalidProgram("program data contains non-finite values")
        A, D, E, cones = self.A, self.D, self.E, self.cones
        m, n = self.m, self.n
        nm = n + m
        Db = D * b
        Ec = E * c
        sb = max(np.linalg.norm(Db), 1e-6)
        sc = max(np.linalg.norm(Ec), 1e-6)
        bs = Db / sb
        cs = Ec / sc
        norm_b = np.linalg.norm(b, np.inf) if m else 0.0
        norm_c = np.linalg.norm(c, np.inf)

        k_scale = int(np.clip(round(self.SCALE_STEPS * np.log10(scale)),
                              -self.SCALE_BOUND, self.SCALE_BOUND))
        state = {}

        def set_scale(k):
            lin = self._system(k)
            gx, gy = lin.solve(cs, bs)
            state.update(k=k, lin=lin, gx=gx, gy=gy, denom=1.0 + cs @ gx + bs @ gy,
                         r=np.concatenate([np.full(n, self.RHO_X), self._weights(k), [1.0]]))

        set_scale(k_scale)

        u = np.zeros(nm + 1)
        v = np.zeros(nm + 1)
        u[-1] = 1.0
        v[-1] = 1.0
        if warm_start is not None:
            x0 = np.asarray(warm_start["x"], dtype=np.float64)
            y0 = np.asarray(warm_start["y"], dtype=np.float64)
            s0 = warm_start.get("s")
            s0 = b - A @ x0 if s0 is None else np.asarray(s0, dtype=np.float64)
            u[:n] = x0 / (E * sb)
            u[n:nm] = y0 / (D * sc)
            v[n:nm] = D * s0 / sb
            v[-1] = 0.0
        w = u + v / state["r"]
        w_init = w.copy()
        norm_init = np.linalg.norm(w_init)

        def fixed_point(w):
            """One DR step; returns (w_next, u, v) with v = Q u at a fixed point."""
            r, lin = state["r"], state["lin"]
            rw = r * w
            px, py = lin.solve(rw[:n], rw[n:nm])
            tau = (rw[-1] + cs @ px + bs @ py) / state["denom"]
            ut = np.empty_like(w)
            ut[:n] = px - tau * state["gx"]
            ut[n:nm] = py - tau * state["gy"]
            ut[-1] = tau
            un = 2.0 * ut - w
            cones.project_dual(un[n:nm])
            un[-1] = max(un[-1], 0.0)
            vn = r * (un + w - 2.0 * ut)
            return w + alpha * (un - ut), un, vn

        def check(un, vn):
            return _check(un, vn, A, b, c, D, E, sb, sc, n, m, norm_b, norm_c, tol, cones)

        status = MAX_ITERS
        result = None
        best = None
        it = 0
        aa = _Anderson(anderson, nm + 1) if anderson else None
        fallback = None
        fallback_res = np.inf
        last_adapt = 0
        def rel_residual(w, wn):
            # the map is positively homogeneous, so only the relative residual
            # measures progress (shrinking w towards the trivial fixed point 0
            # would otherwise look like convergence)
            return np.linalg.norm(wn - w) / max(np.linalg.norm(w), 1e-300)

        for it in range(1, max_iters + 1):
            wn, un, vn = fixed_point(w)
            res = rel_residual(w, wn)
            if fallback is not None:
                # safeguard: reject an accelerated point that increased the residual
                if res > fallback_res:
                    w = fallback
                    aa.reset()
                    wn, un, vn = fixed_point(w)
                    res = rel_residual(w, wn)
                fallback = None
            if it <= 5 or it % check_every == 0 or it == max_iters:
                result = check(un, vn)
                if result["status"] is not None:
                    status = result["status"]
                    break
                if best is None or result["merit"] < best["merit"]:
                    best = result
                if (adaptive and it - last_adapt >= adapt_every and np.isfinite(result["pres"])
                        and result["pres"] > 0 and result["dres"] > 0):
                    # SCS-style balancing: move scale by sqrt of the residual ratio
                    step = 0.5 * np.log10(result["pres"] / result["dres"])
                    k_new = int(np.clip(state["k"] + round(self.SCALE_STEPS * step),
                                        -self.SCALE_BOUND, self.SCALE_BOUND))
                    if abs(k_new - state["k"]) >= 2:
                        set_scale(k_new)
                        # keep u and the dual slack, re-express w in the new metric
                        wn = un + vn / state["r"]
                        if aa is not None:
                            aa.reset()
                        last_adapt = it
                        w = wn
                        continue
            if time_limit is not None and time.perf_counter() - t_start > time_limit:
                break
            if aa is not None and np.linalg.norm(wn) < self.COLLAPSE * norm_init:
                # acceleration is dragging the iterate onto the trivial fixed
                # point w = 0; restart plain iterations from the initial point
                aa = None
                fallback = None
                w = w_init.copy()
                continue
            if aa is not None:
                w_acc = aa.step(w, wn)
                if w_acc is not None:
                    norm_acc = np.linalg.norm(w_acc)
                    if norm_acc > 0:
                        fallback, fallback_res = wn, res
                        w = w_acc * (np.linalg.norm(wn) / norm_acc)
                        continue
                    aa.reset()
            w = wn
        if status == MAX_ITERS:
            result = best if best is not None else check(un, vn)
        return ConicSolution(
            status=status,
            x=result["x"],
            y=result["y"],
            s=result["s"],
            primal_residual=result["pres"],
            dual_residual=result["dres"],
            gap=result["gap"],
            iterations=it,
            primal_objective=result["pobj"],
            dual_objective=result["dobj"],
            solve_time=time.perf_counter() - t_start,
            certificate=result.get("certificate"),
            info={"tau": result["tau"], "kappa": result["kappa"], "backend": _backend.BACKEND,
                  "scale": 10.0 ** (state["k"] / self.SCALE_STEPS)},
        )


def _check(u, v, A, b, c, D, E, sb, sc, n, m, norm_b, norm_c, tol, cones):
    nm = n + m
    tau, kappa = u[-1], v[-1]
    xs, ys, ss = u[:n], u[n:nm], v[n:nm]
    out = {"status": None, "tau": tau, "kappa": kappa, "finite": True}
    # unscaled homogeneous iterates
    xh = E * xs * sb
    yh = D * ys * sc
    sh = ss * sb / D
    if not (np.all(np.isfinite(xh)) and np.all(np.isfinite(yh))):
        out["finite"] = False
    if tau > 1e-12:
        x = xh / tau
        y = yh / tau
        s = sh / tau
        Ax = A @ x
        Aty = A.T @ y
        pr = Ax + s - b
        dr = Aty + c
        pobj = c @ x
        dobj = -(b @ y)
        pres = np.linalg.norm(pr, np.inf) / (1.0 + max(norm_b, np.linalg.norm(Ax, np.inf),
                                                       np.linalg.norm(s, np.inf)))
        dres = np.linalg.norm(dr, np.inf) / (1.0 + max(norm_c, np.linalg.norm(Aty, np.inf)))
        gap = abs(pobj - dobj) / (1.0 + max(abs(pobj), abs(dobj)))
        out.update(x=x, y=y, s=s, pres=pres, dres=dres, gap=gap, pobj=pobj, dobj=dobj,
                   merit=max(pres, dres, gap))
        if pres <= tol and dres <= tol and gap <= tol:
            out["status"] = OPTIMAL
            return out
    else:
        out.update(x=np.full(n, np.nan), y=np.full(m, np.nan), s=np.full(m, np.nan),
                   pres=np.inf, dres=np.inf, gap=np.inf, pobj=np.nan, dobj=np.nan, merit=np.inf)
    # infeasibility certificates from the homogeneous iterates
    by = b @ yh
    if by < 0:
        yc = yh / -by
        if np.linalg.norm(A.T @ yc, np.inf) <= tol * (1.0 + norm_c) and tau < kappa:
            out["status"] = INFEASIBLE
            out["certificate"] = yc
            out.update(pobj=np.inf, dobj=np.inf)
            return out
    cx = c @ xh
    if cx < 0:
        xc = xh / -cx
        sc_ = sh / -cx
        if np.linalg.norm(A @ xc + sc_, np.inf) <= tol * (1.0 + norm_b) and tau < kappa:
            out["status"] = UNBOUNDED
            out["certificate"] = xc
            out.update(pobj=-np.inf, dobj=-np.inf)
            return out
    return out


class _Anderson:
    """Type-II Anderson acceleration (differences kept in ring buffers).

    The mixing weights solve the regularised normal equations of the small
    least-squares problem; the caller safeguards the result.
    """

    REG = 1e-10

    def __init__(self, mem, dim):
        self.mem = mem
        self.dz = np.zeros((dim, mem))
        self.df = np.zeros((dim, mem))
        self.reset()

    def reset(self):
        self.prev_z = None
        self.prev_f = None
        self.count = 0
        self.pos = 0

    def step(self, z, fz):
        """Given iterate z and its image fz, return an accelerated point or None."""
        res = fz - z
        if self.prev_z is not None:
            self.dz[:, self.pos] = fz - self.prev_f
            self.df[:, self.pos] = res - (self.prev_f - self.prev_z)
            self.pos = (self.pos + 1) % self.mem
            self.count = min(self.count + 1, self.mem)
        self.prev_z, self.prev_f = z, fz
        k = self.count
        if k < 2:
            return None
        F = self.df[:, :k]
        gram = F.T @ F
        gram[np.diag_indices(k)] += self.REG * (np.trace(gram) / k + 1e-300)
        try:
            gamma = np.linalg.solve(gram, F.T @ res)
        except np.linalg.LinAlgError:
            self.reset()
            return None
        z_new = fz - self.dz[:, :k] @ gamma
        if not np.all(np.isfinite(z_new)):
            self.reset()
            return None
        return z_new


def objective_value(program, sol):
    data = _unpack(program)
    return float(data.c @ sol.x + data.offset)


def project_primal_cone(program, vec):
    """Project a slack vector onto K (used by tests and diagnostics)."""
    data = _unpack(program)
    cones = _Cones(data.z, data.l, data.q, data.s)
    out = np.array(vec, dtype=np.float64)
    cones.project_primal(out)
    return out
