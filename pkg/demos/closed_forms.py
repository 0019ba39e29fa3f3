"""How the closed-form pruning ratio and bit width react to a shrinking budget.

Run: python3 demos/closed_forms.py [--model-dim 5000]
"""
import argparse

import numpy as np

from ltfl.channel import ChannelParams, db_to_linear, dbm_to_watts, uplink_rate
from ltfl.controller import InfeasibleError, optimal_delta, optimal_rho
from ltfl.cost import Budgets, DeviceProfile

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--model-dim", type=int, default=5000)
parser.add_argument("--power", type=float, default=0.05)
args = parser.parse_args()

ch = ChannelParams(1e7, float(dbm_to_watts(-174)), float(db_to_linear(0.023)), 1.5e-8, 0.015, 200.0)
dev = DeviceProfile(n_samples=500, cpu_freq=1e8, cycles_per_sample=2.7e8, channel=ch)
rate = uplink_rate(ch, args.power)
print(f"unpruned round: {dev.full_compute_time:.0f} s, {dev.energy_per_unpruned_round:.2f} J of training")

# Tighten the delay budget; pruning takes up the slack until it hits rho_max.
print("\nT_max [s]   rho*     delta*")
for t_max in np.linspace(1500, 600, 10):
    b = Budgets(t_max, 100.0)
    try:
        rho = optimal_rho(dev, 8, args.power, b, rate, args.model_dim)
        delta = optimal_delta(dev, rho, args.power, b, rate, args.model_dim)
        print(f"{t_max:9.0f}   {rho:.4f}   {delta}")
    except InfeasibleError as exc:
        print(f"{t_max:9.0f}   infeasible ({exc})")

# A budget that only just covers training leaves little room for bits.
print("\nupload slack [s]   delta*")
for slack in (1e-4, 5e-4, 1e-3, 2e-3, 5e-3):
    b = Budgets(0.05 + dev.full_compute_time + slack, 100.0)
    try:
        print(f"{slack:16.4f}   {optimal_delta(dev, 0.0, args.power, b, rate, args.model_dim)}")
    except InfeasibleError:
        print(f"{slack:16.4f}   infeasible")
