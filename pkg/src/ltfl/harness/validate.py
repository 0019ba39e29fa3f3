"""Quick self-checks of the library's invariants, runnable without pytest."""
from __future__ import annotations

import numpy as np

from ..bound import BoundConstants, GradRange, gap_contributions
from ..channel import ChannelParams, db_to_linear, dbm_to_watts, packet_error_rate, uplink_rate
from ..compression import prune, quantization_mse_bound, quantize_rows
from ..controller import InfeasibleError, optimal_delta, optimal_rho
from ..cost import Budgets, DeviceProfile, device_feasible
from ..gp import GaussianProcess
from ..models import SoftmaxRegression, TwoLayerMLP


def random_device(rng: np.random.Generator, n_range=(400, 600)) -> DeviceProfile:
    ch = ChannelParams(1e7, float(dbm_to_watts(-174.0)), float(db_to_linear(0.023)), rng.uniform(1e-8, 2e-8), 0.015,
                       rng.uniform(100, 300))
    return DeviceProfile(int(rng.integers(*n_range)), rng.uniform(3e7, 1.1e8), 2.7e8, ch)


def _check_quantizer(rng):
    g = rng.standard_normal(20)
    draws = quantize_rows(np.tile(g, (20_000, 1)), 2, rng)
    se = draws.std(axis=0) / np.sqrt(len(draws)) + 1e-12
    unbiased = np.all(np.abs(draws.mean(axis=0) - g) <= 4 * se)
    mags = np.abs(g)
    mse = np.mean(np.sum((draws - g) ** 2, axis=1))
    return unbiased and mse <= quantization_mse_bound(mags.min(), mags.max(), g.size, 2), f"mse={mse:.4g}"


def _check_pruning(rng):
    for _ in range(200):
        w = rng.standard_normal(int(rng.integers(1, 200)))
        rho = rng.uniform(0, 1)
        pruned, _ = prune(w, rho)
        if np.sum((w - pruned) ** 2) > rho * np.sum(w ** 2):
            return False, "pruning error above rho * ||w||^2"
    return True, "200 draws"


def _check_closed_forms(rng):
    v, xi = 210, 96
    for _ in range(10):
        dev = random_device(rng)
        budgets = Budgets(rng.uniform(800, 2500), rng.uniform(2, 12))
        p = rng.uniform(0.01, 0.1)
        rate = uplink_rate(dev.channel, p)
        try:
            rho = optimal_rho(dev, 8, p, budgets, rate, v, xi)
        except InfeasibleError:
            continue
        grid = np.linspace(0, 0.5, 2001)
        ok = device_feasible(dev, budgets, grid, 8, p, rate, v, xi)
        if not ok.any() or abs(grid[ok].min() - rho) > grid[1]:
            return False, "pruning ratio disagrees with grid search"
        try:
            delta = optimal_delta(dev, rho, p, budgets, rate, v, xi)
        except InfeasibleError:
            continue
        feas = [d for d in range(1, 9) if device_feasible(dev, budgets, rho, d, p, rate, v, xi)]
        if delta != max(feas):
            return False, "bit width disagrees with enumeration"
    return True, "10 instances"


def _check_gradients(rng):
    worst = 0.0
    for model in (SoftmaxRegression(4, 3, 0.01), TwoLayerMLP(4, 5, 3, 0.01)):
        for _ in range(5):
            w = model.init_params(rng, 0.5) if isinstance(model, SoftmaxRegression) else model.init_params(rng)
            x, y = rng.standard_normal((1, 4)), rng.integers(0, 3, 1)
            g = model.gradient(w, x, y)
            e = np.eye(w.size) * 1e-6
            fd = np.array([(model.loss(w + e[i], x, y) - model.loss(w - e[i], x, y)) / 2e-6 for i in range(w.size)])
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def _check_gp(rng):
    x = np.linspace(0, 1, 3)[:, None]
    y = np.sin(3 * x[:, 0]) + rng.normal(0, 0.1, 3)
    gp = GaussianProcess().fit(x, y)
    mean, var = gp.predict(x)
    return bool(np.max(np.abs(mean - y)) <= 1e-6 and np.all(var <= 1e-6)), "interpolation at samples"


def _check_channel(rng):
    ch = random_device(rng).channel
    p = np.linspace(0.01, 0.1, 100)
    q, r = packet_error_rate(ch, p), uplink_rate(ch, p)
    return bool(np.all(np.diff(q) < 0) and np.all(np.diff(r) > 0)), "monotone in power"


def _check_gap_monotone(rng):
    consts = BoundConstants()
    spread = GradRange(0.0, 1.0, 50).spread_sq_sum
    q, _, _ = gap_contributions(0.1, np.arange(1, 9), 0.2, [500], spread, consts)
    return bool(np.all(np.diff(q) < 0)), "gap falls with every extra bit"


CHECKS = {
    "quantizer unbiased and within variance bound": _check_quantizer,
    "pruning error bound": _check_pruning,
    "closed-form pruning/bits match search": _check_closed_forms,
    "analytic gradients match finite differences": _check_gradients,
    "GP interpolates its data": _check_gp,
    "channel monotone in power": _check_channel,
    "gap monotone in bits": _check_gap_monotone,
}


def run_checks(seed: int = 0, log=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS.items():
        ok, detail = fn(rng)
        all_ok &= bool(ok)
        log(f"{'PASS' if ok else 'FAIL'}  {name} ({detail})")
    return all_ok
