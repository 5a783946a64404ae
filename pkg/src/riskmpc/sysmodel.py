"""Linear systems with finitely many multiplicative scenarios.

``x[k+1] = A_j x[k] + B_j u[k]`` where the scenario index ``j`` is drawn
i.i.d. from a fixed pmf.  Scenario indices are 1-based in the public
``step`` API (``j`` in ``1..L``) and 0-based everywhere else (tree branch
labels, arrays).
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matlib
from .errors import CapacityExceeded, ConfigError, InvalidMatrix, InvalidRiskParameter, InvalidScenario
from .riskcore import as_pmf, level_offset, tree_size

MAX_TREE_LEAVES = 1_000_000


@dataclass(eq=False)
class UncertainLinearSystem:
    A: np.ndarray  # (L, Nx, Nx)
    B: np.ndarray  # (L, Nx, Nu)
    pmf: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def L(self):
        return self.A.shape[0]

    @property
    def Nx(self):
        return self.A.shape[1]

    @property
    def Nu(self):
        return self.B.shape[2]

    def stage_cost(self, x, u):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        return float(x @ self.Q @ x + u @ self.R @ u)

    def closed_loop(self, F):
        """Closed-loop matrices A_j + B_j F, stacked."""
        return self.A + self.B @ np.asarray(F, dtype=np.float64)

    def scaled(self, alpha):
        """Same dynamics with Q and R multiplied by ``alpha``."""
        return UncertainLinearSystem(self.A, self.B, self.pmf, alpha * self.Q, alpha * self.R)

    def to_config(self):
        return {
            "Nx": self.Nx,
            "Nu": self.Nu,
            "scenarios": [{"A": a.tolist(), "B": b.tolist()} for a, b in zip(self.A, self.B)],
            "pmf": self.pmf.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
        }


def make_system(A, B, pmf, Q, R):
    """Validate and assemble a system from per-scenario matrices."""
    try:
        A = np.array([np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in A])
        B = np.array([np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in B])
    except ValueError as exc:
        raise ConfigError(f"scenario matrices are ragged: {exc}") from exc
    if A.ndim != 3 or B.ndim != 3 or A.shape[0] < 1 or A.shape[0] != B.shape[0]:
        raise ConfigError("need the same number (>= 1) of A and B matrices")
    L, nx, nx2 = A.shape
    if nx != nx2:
        raise ConfigError("A matrices must be square")
    if B.shape[1] != nx:
        raise ConfigError(f"B matrices must have {nx} rows")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ConfigError("scenario matrices contain non-finite values")
    try:
        p = as_pmf(pmf)
    except InvalidRiskParameter as exc:
        raise ConfigError(f"invalid pmf: {exc}") from exc
    if p.size != L:
        raise ConfigError(f"pmf has {p.size} entries for {L} scenarios")
    nu = B.shape[2]
    Q = _pd_weight(Q, nx, "Q")
    R = _pd_weight(R, nu, "R")
    return UncertainLinearSystem(A, B, p, Q, R)


def _pd_weight(m, dim, label):
    try:
        m = matlib.sym_matrix(m)
    except InvalidMatrix as exc:
        raise ConfigError(f"{label}: {exc}") from exc
    if m.shape != (dim, dim):
        raise ConfigError(f"{label} must be {dim}x{dim}, got {m.shape}")
    if not matlib.is_pos_def(m, 0.0):
        raise ConfigError(f"{label} must be positive definite")
    return m


def load_system(config):
    """Build a system from a config mapping, JSON text or JSON file path.

    Schema: ``{"Nx", "Nu", "scenarios": [{"A", "B"}, ...], "pmf", "Q", "R"}``.
    """
    if isinstance(config, (str, Path)):
        text = str(config)
        try:
            if text.lstrip().startswith("{"):
                config = json.loads(text)
            else:
                config = json.loads(Path(config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read system config: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("system config must be a JSON object")
    if "system" in config and "scenarios" not in config:
        return load_system(config["system"])
    try:
        scenarios = config["scenarios"]
        A = [s["A"] for s in scenarios]
        B = [s["B"] for s in scenarios]
        sysm = make_system(A, B, config["pmf"], config["Q"], config["R"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"missing or malformed field: {exc}") from exc
    for key, actual in (("Nx", sysm.Nx), ("Nu", sysm.Nu)):
        if key in config and int(config[key]) != actual:
            raise ConfigError(f"{key}={config[key]} does not match matrices ({actual})")
    return sysm


def reference_system():
    """The three-scenario, two-state example system shipped with the package."""
    path = Path(__file__).with_name("data") / "reference_system.json"
    return load_system(path)


def step(sys, x, u, j):
    """One transition under scenario ``j`` (1-based)."""
    if not (1 <= int(j) <= sys.L) or int(j) != j:
        raise InvalidScenario(f"scenario index {j} outside 1..{sys.L}")
    return sys.A[j - 1] @ np.asarray(x, dtype=np.float64) + sys.B[j - 1] @ np.asarray(u, dtype=np.float64)


@dataclass(eq=False)
class ScenarioTree:
    """Complete L-ary tree of disturbance histories, breadth-first ids.

    Node ``i`` at depth ``h`` with in-level index ``k`` has history given by
    the base-L digits of ``k``; its children are ``offset(h+1) + k*L + j``.
    Per-node slots hold the predicted state and control and the stage-cost /
    risk epigraph values, filled in by the MPC solve.
    """

    L: int
    N: int
    Nx: int
    Nu: int
    states: np.ndarray = field(init=False)
    controls: np.ndarray = field(init=False)
    stage_cost: np.ndarray = field(init=False)
    risk: np.ndarray = field(init=False)
    terminal: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.n_nodes
        self.states = np.full((n, self.Nx), np.nan)
        self.controls = np.full((self.n_internal, self.Nu), np.nan)
        self.stage_cost = np.full(self.n_internal, np.nan)
        self.risk = np.full(n, np.nan)
        self.terminal = np.full(self.n_leaves, np.nan)

    @property
    def n_nodes(self):
        return tree_size(self.L, self.N)

    @property
    def n_leaves(self):
        return self.L ** self.N

    @property
    def n_internal(self):
        return self.n_nodes - self.n_leaves

    def offset(self, h):
        return level_offset(self.L, h)

    def depth(self, node):
        h = 0
        while h < self.N and node >= self.offset(h + 1):
            h += 1
        return h

    def level_nodes(self, h):
        start = self.offset(h)
        return range(start, start + self.L ** h)

    def node_id(self, history):
        """Node id of a 0-based disturbance history (tuple of branch labels)."""
        k = 0
        for j in history:
            if not 0 <= j < self.L:
                raise InvalidScenario(f"branch label {j} outside 0..{self.L - 1}")
            k = k * self.L + int(j)
        return self.offset(len(history)) + k

    def history(self, node):
        h = self.depth(node)
        k = node - self.offset(h)
        digits = []
        for _ in range(h):
            k, j = divmod(k, self.L)
            digits.append(j)
        return tuple(reversed(digits))

    def children(self, node):
        h = self.depth(node)
        if h >= self.N:
            return []
        k = node - self.offset(h)
        start = self.offset(h + 1) + k * self.L
        return list(range(start, start + self.L))

    def parent(self, node):
        h = self.depth(node)
        if h == 0:
            return None
        k = node - self.offset(h)
        return self.offset(h - 1) + k // self.L

    def is_leaf(self, node):
        return node >= self.offset(self.N)

    def leaf_index(self, node):
        return node - self.offset(self.N)


def build_tree(sys, N, max_leaves=MAX_TREE_LEAVES):
    if int(N) != N or N < 1:
        raise ValueError("horizon N must be a positive integer")
    if sys.L ** N > max_leaves:
        raise CapacityExceeded(f"L^N = {sys.L ** N} leaves exceeds the limit {max_leaves}")
    return ScenarioTree(sys.L, int(N), sys.Nx, sys.Nu)


def simulate_tree(sys, tree, x0, controls):
    """Propagate states through a tree given per-internal-node controls."""
    states = np.zeros((tree.n_nodes, sys.Nx))
    states[0] = x0
    for h in range(tree.N):
        for node in tree.level_nodes(h):
            for j, child in enumerate(tree.children(node)):
                states[child] = sys.A[j] @ states[node] + sys.B[j] @ controls[node]
    return states
