"""Time the simulation kernels under numba and under the pure-numpy fallback.

Each backend runs in its own interpreter because ``CAEV_NUMBA`` is read at
import time. Usage: ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time, dataclasses
from caevsim import backend_name, load_scenario, run
from caevsim.config import bundled_scenario_path

repeat = int(sys.argv[1])
cfg = load_scenario(bundled_scenario_path("default"))
t0 = time.perf_counter()
run(cfg.replace(sim=dataclasses.replace(cfg.sim, duration=1.0)))
warm = time.perf_counter() - t0
times = []
for _ in range(repeat):
    t0 = time.perf_counter()
    run(cfg)
    times.append(time.perf_counter() - t0)
print(json.dumps({"backend": backend_name(), "first_call": warm, "best": min(times),
                  "sim_seconds": cfg.sim.duration}))
"""


def measure(flag, repeat):
    env = dict(os.environ, CAEV_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rows = [measure("1", args.repeat), measure("0", max(1, args.repeat // 3))]
    print(f"{'backend':8} {'first call s':>13} {'600 s run s':>12} {'x realtime':>11}")
    for r in rows:
        print(f"{r['backend']:8} {r['first_call']:13.2f} {r['best']:12.3f} "
              f"{r['sim_seconds'] / r['best']:11.0f}")
    print(f"speedup {rows[1]['best'] / rows[0]['best']:.1f}x")


if __name__ == "__main__":
    main()
