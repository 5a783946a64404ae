"""Scenario-tree risk-averse MPC.

For horizon ``N`` the disturbance histories form a complete L-ary tree.
Each internal node carries its own control (history-dependent policy) and
each non-root node its own predicted state, tied together by the scenario
dynamics.  Costs are handled with epigraph variables:

* ``t[n] >= x'Qx + u'Ru`` at every internal node (rotated SOC),
* ``g[leaf] >= x'Px`` at every leaf (rotated SOC),
* ``s[n] >= t[n] + sum_j q[j] s[child_j]`` for every envelope vertex ``q``
  (linear; ``s`` of a leaf is its ``g``),

and ``s[root]`` is minimised.  The result is a pure SOCP whose constraint
matrix does not depend on the initial state, so one factorisation serves
every call of the receding-horizon law.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import matlib
from .conic import NONNEG, RSOC, ZERO, ConicProgram, concat
from .conic.solver import DEFAULT_TOL, ONLINE_MAX_ITERS, OPTIMAL, Workspace
from .errors import CapacityExceeded, ShapeMismatch, SolverFailed, VerificationFailed
from .riskcore import CostTree, eval_nested
from .sysmodel import build_tree, simulate_tree

MAX_LEAVES = 60_000


@dataclass(eq=False)
class MpcProblem:
    sys: object
    env: object
    N: int
    cert: object
    x0: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64).ravel()
        if self.x0.size != self.sys.Nx:
            raise ShapeMismatch(f"x0 has {self.x0.size} entries, system has Nx={self.sys.Nx}")
        if self.env.L != self.sys.L:
            raise ShapeMismatch("envelope size does not match the number of scenarios")
        if not self.cert.margin > 0:
            raise VerificationFailed("terminal certificate is not verified", margin=self.cert.margin)


@dataclass
class MpcSolution:
    u0: np.ndarray
    value: float
    controls: np.ndarray
    states: np.ndarray
    stage_epigraph: np.ndarray
    risk_epigraph: np.ndarray
    terminal_epigraph: np.ndarray
    stats: dict = field(default_factory=dict)
    tree: object = None


@dataclass
class _Layout:
    tree: object
    U: slice
    X: slice
    t: slice
    s: slice
    g: slice
    n_vars: int
    counts: dict


def assemble_mpc(problem, max_leaves=MAX_LEAVES):
    """Build the scenario-tree program for ``problem`` (see module docstring).

    Returns ``(program, layout)``; the initial state is baked in as constant
    data.
    """
    prog, layout, x0_var = _assemble(problem.sys, problem.env, problem.N, problem.cert, max_leaves)
    prog.add(ZERO, x0_var - problem.x0, name="initial_state")
    return prog, layout


def _assemble(sys, env, N, cert, max_leaves):
    if sys.L ** N > max_leaves:
        raise CapacityExceeded(f"{sys.L ** N} leaves exceed the limit of {max_leaves}")
    tree = build_tree(sys, N, max_leaves=max_leaves)
    nx, nu, L = sys.Nx, sys.Nu, sys.L
    n_int, n_leaf, n_nodes = tree.n_internal, tree.n_leaves, tree.n_nodes

    prog = ConicProgram()
    U = prog.variable((n_int, nu), name="U")
    X = prog.variable((n_nodes - 1, nx), name="X")
    t = prog.variable((n_int,), name="t")
    s = prog.variable((n_int,), name="s")
    g = prog.variable((n_leaf,), name="gamma2")
    x0 = prog.variable((nx,), name="x0")

    def state(node):
        return x0 if node == 0 else X[node - 1]

    # dynamics, one equality block per child
    for node in range(n_int):
        for j, child in enumerate(tree.children(node)):
            prog.add(ZERO, X[child - 1] - sys.A[j] @ state(node) - sys.B[j] @ U[node], name="dynamics")

    q_half = matlib.psd_sqrt(sys.Q)
    r_half = matlib.psd_sqrt(sys.R)
    p_half = matlib.psd_sqrt(cert.P)
    for node in range(n_int):
        prog.add(RSOC, concat([t[node], 0.5, q_half @ state(node), r_half @ U[node]]), name="stage")
    leaf0 = tree.offset(N)
    for k in range(n_leaf):
        prog.add(RSOC, concat([g[k], 0.5, p_half @ X[leaf0 + k - 1]]), name="terminal")

    # risk recursion, built directly as one sparse block
    verts = env.vertices
    nv = verts.shape[0]
    rows, cols, vals = [], [], []
    s_start = s.coef.indices[0]
    t_start = t.coef.indices[0]
    g_start = g.coef.indices[0]
    r = 0
    for node in range(n_int):
        kids = tree.children(node)
        if tree.is_leaf(kids[0]):
            kid_cols = [g_start + tree.leaf_index(k) for k in kids]
        else:
            kid_cols = [s_start + k for k in kids]
        for q in verts:
            rows += [r, r]
            cols += [s_start + node, t_start + node]
            vals += [1.0, -1.0]
            for j in range(L):
                if q[j] != 0.0:
                    rows.append(r)
                    cols.append(kid_cols[j])
                    vals.append(-q[j])
            r += 1
    from .conic import Affine
    risk = Affine(sp.csr_matrix((vals, (rows, cols)), shape=(r, prog.n)), np.zeros(r), (r,))
    prog.add(NONNEG, risk, name="risk")
    prog.minimize(s[0])

    def span(expr):
        idx = expr.coef.indices
        return slice(int(idx.min()), int(idx.max()) + 1)

    counts = {
        "controls": n_int,
        "states": n_nodes - 1,
        "terminal": n_leaf,
        "risk_epigraph": n_int,
        "stage_epigraph": n_int,
        "risk_constraints": n_int * nv,
    }
    layout = _Layout(tree, span(U), span(X), span(t), span(s), span(g), prog.n, counts)
    return prog, layout, x0


class MpcController:
    """Receding-horizon law for fixed (system, envelope, horizon, certificate).

    The program is assembled and factorised once; :meth:`solve` only swaps
    the initial state.
    """

    def __init__(self, sys, env, N, cert, tol=DEFAULT_TOL, max_iters=ONLINE_MAX_ITERS,
                 max_leaves=MAX_LEAVES, debug=False, **solver_options):
        if env.L != sys.L:
            raise ShapeMismatch("envelope size does not match the number of scenarios")
        if not cert.margin > 0:
            raise VerificationFailed("terminal certificate is not verified", margin=cert.margin)
        self.sys, self.env, self.N, self.cert = sys, env, int(N), cert
        self.tol, self.max_iters, self.debug = tol, max_iters, debug
        self.solver_options = solver_options
        prog, layout, x0_var = _assemble(sys, env, self.N, cert, max_leaves)
        data = prog.compile()
        self.layout = layout
        self.program = prog
        p_cols = np.asarray(x0_var.coef.indices)
        keep = np.setdiff1d(np.arange(data.n), p_cols)
        self._A = data.A[:, keep]
        self._A_param = data.A[:, p_cols].toarray()
        self._b0 = data.b
        self._c = data.c[keep]
        self._keep = keep
        self._cones = (data.z, data.l, data.q, data.s)
        self.workspace = Workspace(self._A, *self._cones)

    def solve(self, x0, warm_start=None):
        x0 = np.asarray(x0, dtype=np.float64).ravel()
        if x0.size != self.sys.Nx:
            raise ShapeMismatch(f"x0 has {x0.size} entries, system has Nx={self.sys.Nx}")
        if not np.any(x0):
            return self._zero_solution()
        # the program is homogeneous in x0 (controls scale like x0, epigraphs
        # like |x0|^2), so always solve at unit norm and rescale
        scale = np.linalg.norm(x0)
        b = self._b0 - self._A_param @ (x0 / scale)
        options = dict(self.solver_options)
        if warm_start is not None and "scale" in warm_start:
            options["scale"] = warm_start["scale"]
        sol = self.workspace.run(b, self._c, tol=self.tol, max_iters=self.max_iters,
                                 warm_start=warm_start, **options)
        if sol.status != OPTIMAL:
            raise SolverFailed(f"MPC solve ended with status {sol.status}", sol)
        full = np.zeros(self.layout.n_vars)
        full[self._keep] = sol.x
        self._rescale(full, scale)
        out = self._unpack(full, x0)
        out.stats = {
            "status": sol.status,
            "iterations": sol.iterations,
            "solve_time": sol.solve_time,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "gap": sol.gap,
            "warm": {"x": sol.x, "y": sol.y, "s": sol.s, "scale": sol.info["scale"]},
        }
        if self.debug:
            check_consistency(self, out)
        return out

    def _rescale(self, full, scale):
        lay = self.layout
        full[lay.U] *= scale
        full[lay.X] *= scale
        for sl in (lay.t, lay.s, lay.g):
            full[sl] *= scale * scale

    def _zero_solution(self):
        # the origin is a fixed point with zero cost; skip the solver
        full = np.zeros(self.layout.n_vars)
        out = self._unpack(full, np.zeros(self.sys.Nx))
        out.stats = {"status": OPTIMAL, "iterations": 0, "solve_time": 0.0}
        return out

    def _unpack(self, full, x0):
        lay, tree = self.layout, self.layout.tree
        nx, nu = self.sys.Nx, self.sys.Nu
        controls = full[lay.U].reshape(tree.n_internal, nu)
        states = np.vstack([x0[None, :], full[lay.X].reshape(tree.n_nodes - 1, nx)])
        t = full[lay.t].copy()
        s = full[lay.s].copy()
        g = full[lay.g].copy()
        tree.states[:] = states
        tree.controls[:] = controls
        tree.stage_cost[:] = t
        tree.risk[: tree.n_internal] = s
        tree.risk[tree.n_internal:] = g
        tree.terminal[:] = g
        return MpcSolution(
            u0=controls[0].copy(),
            value=float(s[0]),
            controls=controls.copy(),
            states=states,
            stage_epigraph=t,
            risk_epigraph=s,
            terminal_epigraph=g,
            tree=tree,
        )

    def policy(self):
        return lambda x: self.solve(x).u0

    def value(self, x0):
        return self.solve(x0).value


def solve_mpc(problem, **kwargs):
    """One-off solve of an :class:`MpcProblem`."""
    ctrl = MpcController(problem.sys, problem.env, problem.N, problem.cert, **kwargs)
    return ctrl.solve(problem.x0)


def mpc_policy(sys, env, N, cert, **kwargs):
    """Time-invariant law ``x -> u`` (first control of the tree solution)."""
    ctrl = MpcController(sys, env, N, cert, **kwargs)
    policy = ctrl.policy()
    policy.controller = ctrl
    return policy


def realized_tree_costs(sys, N, cert, x0, controls):
    """Stage and terminal costs induced by per-node controls (no epigraphs)."""
    tree = build_tree(sys, N)
    states = simulate_tree(sys, tree, x0, controls)
    costs = np.zeros(tree.n_nodes)
    for node in range(tree.n_internal):
        costs[node] = sys.stage_cost(states[node], controls[node])
    leaf0 = tree.offset(N)
    for node in range(leaf0, tree.n_nodes):
        costs[node] = states[node] @ cert.P @ states[node]
    return CostTree(sys.L, N, costs), states


def check_consistency(ctrl, solution, rtol=1e-5):
    """Re-evaluate the returned policy with the nested risk recursion."""
    tree, _ = realized_tree_costs(ctrl.sys, ctrl.N, ctrl.cert, solution.states[0], solution.controls)
    nested = eval_nested(ctrl.env, tree)
    if abs(nested - solution.value) > rtol * (1.0 + abs(nested)):
        raise SolverFailed(
            f"objective {solution.value:.8g} disagrees with nested risk {nested:.8g}")
    return nested
