"""Walk through the uplink model and the two compressors on one device.

Run: python3 demos/channel_and_compression.py
"""
import numpy as np

from ltfl.channel import ChannelParams, db_to_linear, dbm_to_watts, packet_error_rate, uplink_rate
from ltfl.compression import dequantize, prune, quantization_mse_bound, quantize

ch = ChannelParams(bandwidth_ul=1e7, noise_psd=float(dbm_to_watts(-174)), waterfall_threshold=float(db_to_linear(0.023)),
                   interference=1.5e-8, fading_coeff=0.015, distance=200.0)

# %% rate and packet error rate across the power box
print("power [W]   rate [Mbit/s]   packet error rate")
for p in np.linspace(0.01, 0.1, 10):
    print(f"{p:8.3f}   {uplink_rate(ch, p) / 1e6:12.3f}   {packet_error_rate(ch, p):10.4f}")

# %% stochastic quantization: error shrinks by about 4x per extra bit
rng = np.random.default_rng(0)
g = rng.standard_normal(1000)
mags = np.abs(g)
print("\nbits   mean squared error   bound")
for delta in (1, 2, 4, 8):
    err = np.mean([np.sum((dequantize(quantize(g, delta, rng)) - g) ** 2) for _ in range(200)])
    print(f"{delta:4d}   {err:18.6f}   {quantization_mse_bound(mags.min(), mags.max(), g.size, delta):.6f}")

# %% magnitude pruning never removes more than rho of the squared norm
w = rng.standard_normal(1000)
for rho in (0.1, 0.3, 0.5):
    pruned, mask = prune(w, rho)
    lost = np.sum((w - pruned) ** 2) / np.sum(w ** 2)
    print(f"rho={rho:.1f}: kept {len(mask.kept_indices)} weights, lost {lost:.4f} of the squared norm")
