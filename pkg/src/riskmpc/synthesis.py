"""Offline terminal-cost synthesis.

Finds ``P = P.T > 0`` and a linear feedback ``F`` such that, for every
vertex ``q`` of the risk envelope,

    sum_j q[j] (A_j + B_j F)' P (A_j + B_j F) - P + F' R F + Q  < 0,

by solving an LMI in ``(Qbar, G, Y)`` with ``P = inv(Qbar)`` and
``F = Y inv(G)``.  The recovered pair is always re-checked directly.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import matlib
from .conic import PSD, ConicProgram, bmat, solve
from .conic.solver import OFFLINE_MAX_ITERS, OPTIMAL
from .errors import EmptyEnvelope, SolverFailed, SynthesisInfeasible, VerificationFailed
from .riskcore import Expectation, make_envelope
from .sysmodel import make_system

log = logging.getLogger(__name__)

VERIFY_MARGIN = 1e-8
SYNTH_TOL = 1e-8


@dataclass
class TerminalCertificate:
    P: np.ndarray
    F: np.ndarray
    Qbar: np.ndarray
    Y: np.ndarray
    G: np.ndarray
    margin: float
    lmi_margin: float = float("nan")
    solver_stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "P": self.P.tolist(),
            "F": self.F.tolist(),
            "Qbar": self.Qbar.tolist(),
            "Y": self.Y.tolist(),
            "G": self.G.tolist(),
            "margin": self.margin,
            "lmi_margin": self.lmi_margin,
            "solver": self.solver_stats,
        }

    @classmethod
    def from_dict(cls, d):
        P = np.asarray(d["P"], dtype=np.float64)
        F = np.atleast_2d(np.asarray(d["F"], dtype=np.float64))
        nx = P.shape[0]
        get = lambda k, default: np.atleast_2d(np.asarray(d[k], dtype=np.float64)) if k in d else default
        return cls(
            P=P,
            F=F,
            Qbar=get("Qbar", np.linalg.inv(P)),
            Y=get("Y", F @ np.linalg.inv(P)),
            G=get("G", np.linalg.inv(P)),
            margin=float(d.get("margin", float("nan"))),
            lmi_margin=float(d.get("lmi_margin", float("nan"))),
            solver_stats=d.get("solver", {}),
        ) if nx else None


def strictness(sys):
    """Margin used to make the LMIs strict inside the conic program."""
    return 1e-6 * (1.0 + matlib.spectral_norm(sys.Q))


def _lmi_blocks(sys, q, Qbar, G, Y, literal=False):
    L, nx, nu = sys.L, sys.Nx, sys.Nu
    Abar = sys.A.reshape(L * nx, nx)
    Bbar = sys.B.reshape(L * nx, nu)
    sig_half = np.kron(np.diag(np.sqrt(q)), np.eye(nx))
    Qhalf = matlib.psd_sqrt(sys.Q)
    coupling = -(sig_half @ (Abar @ G + Bbar @ Y))
    QG = -(Qhalf @ G)
    if literal:
        input_block, input_coupling = np.linalg.inv(sys.R), -Y
    else:
        # congruence with diag(I, R^1/2, I, I): same feasible set, no 1/R entries
        input_block, input_coupling = np.eye(nu), -(matlib.psd_sqrt(sys.R) @ Y)
    diag_q = [[Qbar if i == k else None for k in range(L)] for i in range(L)]
    kron_q = bmat(diag_q)
    return bmat([
        [kron_q, None, None, coupling],
        [None, input_block, None, input_coupling],
        [None, None, np.eye(nx), QG],
        [coupling.T, input_coupling.T, QG.T, G + G.T - Qbar],
    ])


def assemble_lmi(sys, env, literal=False):
    """Conic program for the terminal LMI, one PSD block per envelope vertex.

    Variables are ``Qbar`` (symmetric), ``G`` (general square), ``Y`` and a
    scalar margin ``t``; each block is constrained to ``M_l - t I >= 0`` and
    ``t`` is maximised, so a strictly feasible point exists iff ``t* > 0``.
    With ``literal=True`` the input block is ``inv(R)`` coupled through
    ``-Y``; the default scales that block row and column by ``R^1/2``,
    which is far better conditioned when ``R`` is small.
    Returns ``(program, variables)``.
    """
    verts = env.vertices
    if verts.shape[0] == 0:
        raise EmptyEnvelope("envelope has no vertices")
    nx, nu = sys.Nx, sys.Nu
    prog = ConicProgram()
    Qbar = prog.symmetric_variable(nx, name="Qbar")
    G = prog.variable((nx, nx), name="G")
    Y = prog.variable((nu, nx), name="Y")
    t = prog.variable(name="t")
    for q in verts:
        M = _lmi_blocks(sys, q, Qbar, G, Y, literal)
        prog.add(PSD, M - t.times(np.eye(M.shape[0])), name="lmi")
    prog.maximize(t)
    return prog, {"Qbar": Qbar, "G": G, "Y": Y, "t": t}


def lmi_block_values(sys, env, Qbar, G, Y, literal=False):
    """Numeric LMI matrices for given (Qbar, G, Y), one per vertex."""
    prog = ConicProgram()
    Qv = prog.symmetric_variable(sys.Nx)
    Gv = prog.variable((sys.Nx, sys.Nx))
    Yv = prog.variable((sys.Nu, sys.Nx))
    x = np.concatenate([
        matlib.sym_matrix(Qbar)[np.triu_indices(sys.Nx)[1], np.triu_indices(sys.Nx)[0]],
        np.ravel(G),
        np.ravel(Y),
    ])
    return [_lmi_blocks(sys, q, Qv, Gv, Yv, literal).value(x) for q in env.vertices]


def condition9_matrices(sys, env, P, F):
    P = matlib.sym_matrix(P)
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    Acl = sys.closed_loop(F)
    lyap = np.einsum("lji,ljk->lik", Acl, np.einsum("ij,ljk->lik", P, Acl))
    base = -P + F.T @ sys.R @ F + sys.Q
    return [np.tensordot(q, lyap, axes=1) + base for q in env.vertices]


def verify_condition9(sys, env, P, F):
    """Smallest gap ``-lambda_max`` of the terminal inequality over all vertices."""
    mats = condition9_matrices(sys, env, P, F)
    return float(min(-matlib.max_eig(0.5 * (m + m.T)) for m in mats))


def synthesize_terminal(sys, env, tol=SYNTH_TOL, max_iters=OFFLINE_MAX_ITERS):
    """Solve the terminal LMI and return a verified :class:`TerminalCertificate`."""
    prog, var = assemble_lmi(sys, env)
    eps = strictness(sys)
    sol = solve(prog, tol=tol, max_iters=max_iters)
    stats = {
        "status": sol.status,
        "iterations": sol.iterations,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "gap": sol.gap,
        "solve_time": sol.solve_time,
    }
    if sol.status != OPTIMAL:
        raise SolverFailed(f"terminal LMI solve ended with status {sol.status}", sol)
    t_opt = float(var["t"].value(sol.x))
    stats["lmi_margin"] = t_opt
    if t_opt < eps:
        raise SynthesisInfeasible(
            f"terminal LMI has no strictly feasible point (best margin {t_opt:.3e} < {eps:.1e})",
            certificate=sol.y,
            margin=t_opt,
        )
    Qbar = matlib.sym_matrix(0.5 * (var["Qbar"].value(sol.x) + var["Qbar"].value(sol.x).T))
    G = var["G"].value(sol.x)
    Y = var["Y"].value(sol.x)
    P = matlib.sym_matrix(np.linalg.inv(Qbar))
    F = np.linalg.solve(G.T, Y.T).T
    margin = verify_condition9(sys, env, P, F)
    if not matlib.is_pos_def(P) or margin <= VERIFY_MARGIN:
        raise VerificationFailed(
            f"solver reported optimal but the terminal inequality margin is {margin:.3e}",
            margin=margin,
        )
    return TerminalCertificate(P, F, Qbar, Y, G, margin, t_opt, stats)


@dataclass
class TrialReport:
    rate: float
    log: list


def random_system(rng, nx, nu, L):
    """Draw A_j ~ N(0, 1/nx), B_j ~ N(0, 1), Q = R = I, uniform pmf."""
    A = rng.standard_normal((L, nx, nx)) / np.sqrt(nx)
    B = rng.standard_normal((L, nx, nu))
    return make_system(A, B, np.full(L, 1.0 / L), np.eye(nx), np.eye(nu))


def random_feasibility_trial(nx, nu, L, count, seed, generator=random_system, family=None):
    """Fraction of random systems for which a terminal certificate exists.

    Instance ``i`` uses a generator seeded by ``(seed, i)``, so instances do
    not depend on ``count``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    family = Expectation() if family is None else family
    entries = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        sys = generator(rng, nx, nu, L)
        env = make_envelope(family, sys.pmf)
        entry = {"index": i, "feasible": False, "margin": None, "reason": ""}
        try:
            cert = synthesize_terminal(sys, env)
        except SynthesisInfeasible as exc:
            entry["reason"] = "infeasible"
            entry["lmi_margin"] = exc.margin
        except (SolverFailed, VerificationFailed) as exc:
            entry["reason"] = type(exc).__name__
        else:
            entry.update(feasible=True, margin=cert.margin, lmi_margin=cert.lmi_margin)
        log.debug("trial %d: %s", i, entry)
        entries.append(entry)
    rate = sum(e["feasible"] for e in entries) / count
    return TrialReport(rate, entries)
