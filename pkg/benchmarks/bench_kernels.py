"""Time the JIT kernels against the pure numpy/Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Both paths are checked for identical output before timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from semoff import _kernels
from semoff.baselines import DiscreteActionGrid, option_tables
from semoff.config import ScenarioConfig
from semoff.env import OffloadingEnv


def gae_case(n, rng):
    return (rng.normal(size=n), rng.normal(size=n), (rng.random(n) < 0.05).astype(float), 0.0, 0.95, 0.95)


def enum_case(num_ues, seed=0):
    cfg = ScenarioConfig().replace(**{"env.num_ues": num_ues, "channel.noise_figure_db": 10.0})
    env = OffloadingEnv(cfg)
    env.reset(seed)
    e_lc, e_ut, runs, off, lat, viol = option_tables(cfg, env.table, env.state, env.draw_channel(),
                                                     DiscreteActionGrid.from_config(cfg))
    e = cfg.env
    return (e_lc, e_ut, runs, off, lat, e.t_dl_s, viol, e.sentence_flops, e.n_remote * e.f_remote_hz, e.tau_max_s)


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (triggers compilation for the JIT path)
    t = timeit.Timer(lambda: fn(*args))
    loops, _ = t.autorange()
    return min(t.repeat(repeat, loops)) / loops


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.USE_JIT:
        print("numba unavailable or SEMOFF_DISABLE_JIT set; only the fallback path exists")
        return
    rng = np.random.default_rng(0)
    cases = [(f"gae n={n}", _kernels.gae, _kernels.gae_python, gae_case(n, rng)) for n in (40, 1000, 100_000)]
    cases += [(f"enumerate I={i} ({8 ** i} joint)", _kernels.enumerate_joint, _kernels.enumerate_joint_numpy,
               enum_case(i)) for i in (2, 4, 6)]
    print(f"{'kernel':<30}{'jit':>12}{'fallback':>12}{'speed-up':>10}")
    for name, jit, ref, a in cases:
        out_j, out_r = jit(*a), ref(*a)
        if isinstance(out_r, tuple):
            assert (int(out_j[0]), bool(out_j[1])) == out_r, name
        else:
            np.testing.assert_allclose(out_j, out_r, rtol=0, atol=1e-12)
        tj, tr = best_of(jit, a, args.repeat), best_of(ref, a, args.repeat)
        print(f"{name:<30}{tj * 1e6:>10.1f}us{tr * 1e6:>10.1f}us{tr / tj:>9.1f}x")


if __name__ == "__main__":
    main()
