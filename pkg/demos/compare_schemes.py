"""Short side-by-side run of LTFL and the three baselines on the default scenario.

Run: python3 demos/compare_schemes.py [--rounds 40] [--seed 0]
"""
import argparse

from ltfl.harness.config import ScenarioConfig
from ltfl.harness.simulation import run_scheme

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--rounds", type=int, default=40)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--devices", type=int, default=30)
args = parser.parse_args()

cfg = ScenarioConfig().with_overrides({"scenario.rounds": args.rounds, "scenario.devices": args.devices,
                                       "data.partition": "dirichlet"})
print("scheme    final acc  rounds to 0.85  delay to target [s]  energy to target [J]  total energy [J]")
for scheme in ("ltfl", "fedsgd", "signsgd", "stclite"):
    s = run_scheme(cfg, args.seed, scheme).summary
    print(f"{scheme:8s}  {s['final_accuracy']:9.4f}  {str(s['rounds_to_target'] or '-'):>14s}  "
          f"{s['delay_to_target']:19.0f}  {s['energy_to_target']:20.1f}  {s['total_energy']:16.1f}")
