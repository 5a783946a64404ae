"""Compare the compiled kernels with the pure-Python fallback.

Kernel timings run in-process (both implementations are importable side by
side).  End-to-end MPC and synthesis timings run in a subprocess per backend,
because the backend is fixed when the package is first imported.

    python benchmarks/bench_kernels.py [--repeat 200] [--solves 20]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from riskmpc import _kernels_py

try:
    from riskmpc import _kernels as _compiled
except ImportError:
    _compiled = None

END_TO_END = r"""
import json, sys, time
import numpy as np
from riskmpc import BACKEND
from riskmpc.mpc import MpcController
from riskmpc.riskcore import MeanUpperSemideviation, WorstCase, make_envelope
from riskmpc.synthesis import synthesize_terminal
from riskmpc.sysmodel import reference_system

solves = int(sys.argv[1])
sysm = reference_system()
t0 = time.perf_counter()
cert_w = synthesize_terminal(sysm, make_envelope(WorstCase(), sysm.pmf))
synth = time.perf_counter() - t0
env = make_envelope(MeanUpperSemideviation(0.5), sysm.pmf)
cert = synthesize_terminal(sysm, env)
ctrl = MpcController(sysm, env, 3, cert)
rng = np.random.default_rng(0)
times, iters = [], []
for _ in range(solves):
    x0 = rng.standard_normal(2)
    t0 = time.perf_counter()
    sol = ctrl.solve(x0)
    times.append(time.perf_counter() - t0)
    iters.append(sol.stats["iterations"])
print(json.dumps({"backend": BACKEND, "synth_worst_case_s": synth,
                  "mpc_mean_s": float(np.mean(times)), "mpc_mean_iters": float(np.mean(iters))}))
"""


def layout(rng):
    soc = np.array([4] * 40 + [3] * 27, dtype=np.int64)  # shape of the N=3 MPC cone rows
    psd = np.array([12, 12, 12], dtype=np.int64)  # shape of the worst-case terminal LMI
    size = 10 + 50 + int(soc.sum()) + int((psd * (psd + 1) // 2).sum())
    return 10, 50, soc, psd, rng.standard_normal(size)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    G = rng.standard_normal((12, 12))
    M = G + G.T
    z, l, soc, psd, y = layout(rng)
    rows = []
    impls = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    for name, mod in impls:
        t_eig = min(timeit.repeat(lambda: mod.jacobi_eigh(M), number=repeat, repeat=3)) / repeat
        t_proj = min(timeit.repeat(lambda: mod.project_cones(y.copy(), z, l, soc, psd),
                                   number=repeat, repeat=3)) / repeat
        rows.append((name, t_eig, t_proj))
    return rows


def bench_end_to_end(solves):
    out = {}
    for name, flag in (("cython", "0"), ("python", "1")):
        env = dict(os.environ, RISKMPC_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", END_TO_END, str(solves)], env=env,
                             capture_output=True, text=True, check=True)
        data = json.loads(res.stdout.strip().splitlines()[-1])
        out[data["backend"]] = data
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--solves", type=int, default=20)
    args = ap.parse_args(argv)

    print(f"{'backend':<8}{'jacobi_eigh 12x12':>20}{'project_cones':>16}")
    for name, t_eig, t_proj in bench_kernels(args.repeat):
        print(f"{name:<8}{t_eig * 1e6:>17.1f} us{t_proj * 1e6:>13.1f} us")

    print()
    print(f"{'backend':<8}{'synth (worst case)':>20}{'MPC solve':>12}{'iters':>8}")
    for name, d in bench_end_to_end(args.solves).items():
        print(f"{name:<8}{d['synth_worst_case_s']:>18.3f} s{d['mpc_mean_s']:>10.4f} s"
              f"{d['mpc_mean_iters']:>8.0f}")


if __name__ == "__main__":
    main()
