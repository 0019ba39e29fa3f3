"""Run the per-round controller on a handful of random devices and show its trace.

Run: python3 demos/controller_trace.py [--devices 6] [--seed 0]
"""
import argparse

import numpy as np

from ltfl.bound import BoundConstants, GradRange
from ltfl.channel import ChannelParams, db_to_linear, dbm_to_watts
from ltfl.controller import ControlProblem, two_stage_control
from ltfl.cost import Budgets, DeviceProfile

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--devices", type=int, default=6)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--model-dim", type=int, default=210)
args = parser.parse_args()

rng = np.random.default_rng(args.seed)
devices = []
for _ in range(args.devices):
    ch = ChannelParams(1e7, float(dbm_to_watts(-174)), float(db_to_linear(0.023)), rng.uniform(1e-8, 2e-8), 0.015,
                       rng.uniform(100, 300))
    devices.append(DeviceProfile(int(rng.integers(400, 601)), rng.uniform(9e7, 1.2e8), 2.7e8, ch))
ranges = [GradRange(0.0, rng.uniform(0.05, 0.5), args.model_dim) for _ in devices]
problem = ControlProblem(devices, Budgets(1500.0, 15.0), BoundConstants(), ranges, args.model_dim)

result = two_stage_control(problem, rng)
print("iter   gamma        best")
for row in result.history:
    print(f"{row.iteration:4d}   {row.gamma:10.4f}   {row.best_gamma:10.4f}")

s = result.strategy
print("\ndevice  compute[s]  rho     bits  power[W]")
for u, d in enumerate(devices):
    print(f"{u:6d}  {d.full_compute_time:10.0f}  {s.rho[u]:.4f}  {s.delta[u]:4d}  {s.power[u]:.4f}")
t = result.terms
print(f"\ngap {t.gamma:.4f} = quant {t.quant_term:.4f} + prune {t.prune_term:.4f} + trans {t.trans_term:.4f}")
report = problem.cost(s)
print(f"round delay {report.round_delay:.1f} s, max device energy {report.energies.max():.3f} J, "
      f"degraded devices: {list(result.degraded) or 'none'}")
