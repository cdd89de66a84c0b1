#!/usr/bin/env python3
"""Time the compiled kernels against the pure-numpy loops.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Each case is run once per backend to warm up (compilation for the jit path),
then timed ``--repeat`` times; the best time is reported together with the
largest difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from hcc import _jit
from hcc import operators as O
from hcc import payoffs as P
from hcc.dynamics import HiddenGame, WganSampler, gda_flow, sgda_discrete, transformed_flow


def rps_game():
    bank = O.OperatorBank.uniform(O.sigmoid, 3)
    return HiddenGame(P.MatrixBilinear(P.RPS_MATRIX), bank, O.OperatorBank.uniform(O.sigmoid, 3))


def gan_game():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    return HiddenGame(P.VanillaGan(p), O.OperatorBank.uniform(O.sigmoid, 4),
                      [O.sigmoid()] * 4 + [O.identity()])


def cases(scale):
    th3, ph3 = np.array([0.5, -1.0, 0.2]), np.array([-0.3, 0.8, 0.1])
    rps = rps_game()
    gan = gan_game()
    t = 20.0 * scale
    paths_f = O.bank_paths(rps.bank_f, th3)
    paths_g = O.bank_paths(rps.bank_g, ph3)
    f0, g0 = rps.outputs(th3, ph3)
    wgan = HiddenGame(P.WganGaussian(1.0), [O.wgan_quadratic(1.0)], [O.identity()])
    sampler = WganSampler(1.0, 256)
    steps = int(20_000 * scale)
    return {
        "gda rps sigmoid": (
            lambda b: gda_flow(rps, th3, ph3, t, 1e-3, record_every=100, backend=b),
            lambda tr: tr.outputs_f),
        "gda vanilla gan": (
            lambda b: gda_flow(gan, [-1.0, -0.5, 0.2, -2.0], [0.5, -0.5, 1.0, 0.0, 0.0], t, 1e-3,
                               record_every=100, backend=b),
            lambda tr: tr.outputs_f),
        "transformed rps": (
            lambda b: transformed_flow(rps, paths_f, paths_g, f0, g0, t, 1e-3, record_every=100,
                                       backend=b),
            lambda tr: tr.outputs_f),
        "sgda wgan": (
            lambda b: sgda_discrete(wgan, sampler, [0.5], [0.5], steps, 1e-3, seed=7,
                                    record_every=100, backend=b),
            lambda tr: tr.theta),
        "ascent path xor": (
            lambda b: O.build_ascent_path(O.xor_relax(), [0.3, -0.2], backend=b),
            lambda path: path.z),
    }


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies horizons and step counts")
    args = ap.parse_args()
    if not _jit.JIT_ENABLED:
        raise SystemExit("compiled kernels are disabled (HCC_DISABLE_JIT); nothing to compare")

    print(f"{'case':<20} {'numpy [s]':>10} {'jit [s]':>10} {'speedup':>9} {'max diff':>10}")
    for name, (run, key) in cases(args.scale).items():
        run("jit")
        run("numpy")
        t_np, out_np = best_time(lambda: run("numpy"), args.repeat)
        t_jit, out_jit = best_time(lambda: run("jit"), args.repeat)
        a, b = key(out_np), key(out_jit)
        diff = float(np.abs(a - b).max()) if a.shape == b.shape else float("nan")
        print(f"{name:<20} {t_np:>10.3f} {t_jit:>10.4f} {t_np / t_jit:>8.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
