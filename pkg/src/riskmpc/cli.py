"""Command-line entry point (``riskmpc``).

Exit codes: 0 success, 2 configuration error, 3 infeasible synthesis,
4 solver failure.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    RiskMPCError,
    SolverFailed,
    SynthesisInfeasible,
    VerificationFailed,
)
from .harness import (
    demo_paradox,
    load_experiment,
    reference_comparison,
    run_monte_carlo,
    summarize,
    write_outputs,
)
from .mpc import MpcController
from .riskcore import (
    CostTree,
    eval_nested,
    eval_static,
    family_from_spec,
    make_envelope,
)
from .stability import MPC_POLICY_DEPTH, check_lyapunov, estimate_decay
from .synthesis import TerminalCertificate, synthesize_terminal
from .sysmodel import load_system, reference_system

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

log = logging.getLogger("riskmpc")


def parse_risk(text):
    """``mus:0.5``, ``cvar:0.1``, ``worst_case``, ``expectation`` or a JSON object."""
    text = text.strip()
    if text.startswith("{") or text.startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad risk JSON: {exc}") from exc
    name, _, value = text.partition(":")
    name = name.strip().lower()
    if not value:
        return {"family": name}
    key = "alpha" if name == "cvar" else "c"
    try:
        return {"family": name, key: float(value)}
    except ValueError as exc:
        raise ConfigError(f"bad risk parameter in {text!r}") from exc


def parse_vector(text, name):
    try:
        return np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"{name} must be a comma-separated list of numbers") from exc


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc


class Context:
    """Resolved inputs shared by the subcommands."""

    def __init__(self, args):
        self.args = args
        self.config = _read_json(args.config, "config") if getattr(args, "config", None) else {}
        if not isinstance(self.config, dict):
            raise ConfigError("config must be a JSON object")

    def system(self):
        cfg = self.config
        if cfg.get("system", "reference") == "reference" and "scenarios" not in cfg:
            return reference_system()
        return load_system(self.config)

    def risk(self):
        spec = getattr(self.args, "risk", None)
        spec = parse_risk(spec) if spec else self.config.get("risk", {"family": "expectation"})
        try:
            return family_from_spec(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid risk spec {spec!r}: {exc}") from exc

    def horizon(self):
        N = getattr(self.args, "N", None) or self.config.get("N", 3)
        if int(N) != N or N < 1:
            raise ConfigError("horizon N must be a positive integer")
        return int(N)

    def x0(self, sys):
        text = getattr(self.args, "x0", None)
        x0 = parse_vector(text, "x0") if text else np.asarray(self.config.get("x0", [1.0] * sys.Nx), float)
        if x0.size != sys.Nx:
            raise ConfigError(f"x0 needs {sys.Nx} entries")
        return x0

    def tol(self, default):
        tol = getattr(self.args, "tol", None)
        tol = self.config.get("tol", default) if tol is None else tol
        if not tol > 0:
            raise ConfigError("--tol must be positive")
        return float(tol)

    def certificate(self, sys, env):
        path = getattr(self.args, "cert", None) or self.config.get("certificate")
        if path:
            data = path if isinstance(path, dict) else _read_json(path, "certificate")
            try:
                cert = TerminalCertificate.from_dict(data)
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"malformed certificate: {exc}") from exc
            if cert is None or cert.P.shape != (sys.Nx, sys.Nx) or cert.F.shape != (sys.Nu, sys.Nx):
                raise ConfigError("certificate dimensions do not match the system")
            return cert
        return synthesize_terminal(sys, env)

    def out_dir(self):
        out = getattr(self.args, "out", None)
        if out is None:
            return None
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path


def cmd_synth(ctx):
    sys_, family = ctx.system(), ctx.risk()
    env = make_envelope(family, sys_.pmf)
    cert = synthesize_terminal(sys_, env, tol=ctx.tol(1e-8))
    print(f"risk: {family}")
    print(f"vertices: {env.vertices.shape[0]}")
    print(f"margin: {cert.margin:.6g}  (LMI margin {cert.lmi_margin:.6g})")
    print("P =\n" + np.array2string(cert.P, precision=6))
    print("F =\n" + np.array2string(cert.F, precision=6))
    out = ctx.out_dir()
    if out is not None:
        (out / "certificate.json").write_text(json.dumps(cert.to_dict(), indent=2) + "\n")
        print(f"wrote {out / 'certificate.json'}")
    return EXIT_OK


def cmd_solve(ctx):
    sys_, family = ctx.system(), ctx.risk()
    env = make_envelope(family, sys_.pmf)
    cert = ctx.certificate(sys_, env)
    ctrl = MpcController(sys_, env, ctx.horizon(), cert, tol=ctx.tol(1e-7))
    sol = ctrl.solve(ctx.x0(sys_))
    print("u0 = " + " ".join(repr(float(v)) for v in sol.u0))
    print(f"value = {sol.value!r}")
    print(f"iterations = {sol.stats.get('iterations')}  solve_time = {sol.stats.get('solve_time', 0):.4f}s")
    out = ctx.out_dir()
    if out is not None:
        path = out / "tree.csv"
        write_tree_csv(path, ctrl, sol)
        print(f"wrote {path}")
    return EXIT_OK


def write_tree_csv(path, ctrl, sol):
    tree = ctrl.layout.tree
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "history", "state", "control", "t", "s", "gamma2"])
        for node in range(tree.n_nodes):
            leaf = tree.is_leaf(node)
            hist = "-".join(str(j + 1) for j in tree.history(node))
            state = " ".join(repr(float(v)) for v in sol.states[node])
            if leaf:
                w.writerow([node, hist, state, "", "", "", repr(float(sol.terminal_epigraph[tree.leaf_index(node)]))])
            else:
                control = " ".join(repr(float(v)) for v in sol.controls[node])
                w.writerow([node, hist, state, control, repr(float(sol.stage_epigraph[node])),
                            repr(float(sol.risk_epigraph[node])), ""])


def cmd_simulate(ctx):
    args = ctx.args
    if not ctx.config:
        raise ConfigError("simulate needs --config with an experiment description")
    data = dict(ctx.config)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "tol", None) is not None:
        data["tol"] = args.tol
    if getattr(args, "runs", None) is not None:
        data["runs"] = args.runs
    cfg = load_experiment(data)
    stats = run_monte_carlo(cfg)
    report = summarize(stats)
    print(report["table"])
    for row in reference_comparison(stats):
        print(f"  c={row['c']:g}: mean {row['mean']:.4f} (reference {row['reference_mean']:.4f}), "
              f"dispersion {row['dispersion']:.4f} (reference {row['reference_dispersion']:.4f})")
    out = getattr(args, "out", None) or cfg.out
    if out:
        write_outputs(cfg, stats, out)
        print(f"wrote results to {out}")
    return EXIT_OK


def cmd_eval_risk(ctx):
    args = ctx.args
    family = ctx.risk()
    pmf = parse_vector(args.pmf, "pmf") if args.pmf else np.asarray(ctx.config.get("pmf", []), float)
    if args.costs:
        Z = parse_vector(args.costs, "costs")
        if pmf.size == 0:
            pmf = np.full(Z.size, 1.0 / Z.size)
        env = make_envelope(family, pmf)
        print(f"rho(Z) = {float(eval_static(env, Z))!r}")
        return EXIT_OK
    tree_spec = ctx.config.get("tree")
    if args.tree:
        tree_spec = _read_json(args.tree, "tree")
    if not tree_spec:
        raise ConfigError("eval-risk needs --costs or a cost tree (--tree or config 'tree')")
    try:
        tree = CostTree(int(tree_spec["L"]), int(tree_spec["N"]), tree_spec["costs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed cost tree: {exc}") from exc
    if pmf.size == 0:
        pmf = np.full(tree.L, 1.0 / tree.L)
    env = make_envelope(family, pmf)
    print(f"nested value = {eval_nested(env, tree)!r}")
    return EXIT_OK


def cmd_check_stability(ctx):
    args = ctx.args
    sys_, family = ctx.system(), ctx.risk()
    env = make_envelope(family, sys_.pmf)
    K = args.K
    if args.gain:
        F = np.atleast_2d(np.asarray(json.loads(args.gain), dtype=float))
        policy, P = F, None
    else:
        cert = ctx.certificate(sys_, env)
        policy, P = cert.F, cert.P
    if args.policy == "mpc":
        if K > MPC_POLICY_DEPTH:
            raise ConfigError(f"MPC policy trees are limited to K <= {MPC_POLICY_DEPTH}")
        if P is None:
            raise ConfigError("--policy mpc needs a certificate, not a bare gain")
        ctrl = MpcController(sys_, env, ctx.horizon(), cert, tol=ctx.tol(1e-7))
        policy = ctrl.policy()
    x0 = ctx.x0(sys_)
    est = estimate_decay(sys_, env, policy, x0, K)
    print(f"{'k':>3} {'r_k':>14}")
    for k, r in enumerate(est.r, start=1):
        print(f"{k:>3} {r:>14.6e}")
    print(f"lambda_fit = {est.lam_fit:.6g}  c_fit = {est.c_fit:.6g}  "
          f"{'stable' if est.stable else 'UNSTABLE'}  bounded={est.bounded}")
    if P is not None and args.policy == "linear":
        rep = check_lyapunov(sys_, env, P, policy, samples=args.samples,
                             seed=getattr(args, "seed", None) or 0)
        print(f"Lyapunov V=x'Px: b1={rep.b1:.6g} b2={rep.b2:.6g} b3={rep.b3:.6g} "
              f"(exact {rep.b3_exact:.6g}) valid={rep.valid}")
    out = ctx.out_dir()
    if out is not None:
        with open(out / "decay.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "r_k"])
            for k, r in enumerate(est.r, start=1):
                w.writerow([k, repr(float(r))])
        print(f"wrote {out / 'decay.csv'}")
    return EXIT_OK


def cmd_demo_paradox(ctx):
    print(demo_paradox().text)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config (system or experiment)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float, help="solver tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="riskmpc", parents=[common],
                                     description="Risk-averse MPC with polytopic dynamic risk measures.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "synthesize a terminal certificate (P, F)")
    p.add_argument("--risk", help="risk spec, e.g. mus:0.5, worst_case, cvar:0.2, or JSON")

    p = add("solve", cmd_solve, "solve one MPC problem")
    p.add_argument("--risk")
    p.add_argument("--cert", help="certificate JSON (synthesized if omitted)")
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("-N", "--horizon", dest="N", type=int)

    p = add("simulate", cmd_simulate, "closed-loop Monte Carlo experiment")
    p.add_argument("--runs", type=int, help="override the number of runs")

    p = add("eval-risk", cmd_eval_risk, "evaluate a one-step or nested risk")
    p.add_argument("--risk")
    p.add_argument("--pmf", help="base pmf, comma separated (uniform if omitted)")
    p.add_argument("--costs", help="one-step cost vector, comma separated")
    p.add_argument("--tree", help="JSON file with {L, N, costs} in breadth-first order")

    p = add("check-stability", cmd_check_stability, "risk-sensitive decay and Lyapunov checks")
    p.add_argument("--risk")
    p.add_argument("--cert")
    p.add_argument("--gain", help="linear gain F as a JSON matrix (instead of a certificate)")
    p.add_argument("--x0")
    p.add_argument("-K", type=int, default=6)
    p.add_argument("-N", "--horizon", dest="N", type=int)
    p.add_argument("--policy", choices=["linear", "mpc"], default="linear")
    p.add_argument("--samples", type=int, default=10_000)

    add("demo-paradox", cmd_demo_paradox, "print the time-consistency paradox example")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(Context(args))
    except SynthesisInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverFailed, VerificationFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (RiskMPCError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
