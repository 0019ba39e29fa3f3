"""Round loop wiring data, models, compression, channel, controller and costs.

Outputs (all comma separated with a header row):

``metrics.csv``
    One row per round in the order of :data:`METRIC_COLUMNS` followed by one
    ``energy_dev_<u>`` column per device.  Accuracy and loss are measured
    after the round's update.  Gap columns are blank for the baselines.  If
    training diverges the rows so far are kept and a final ``# error:`` line
    is appended.
``summary.csv``
    One row per run, columns :data:`SUMMARY_COLUMNS`.
``controller_trace.csv``
    Verbose runs only: one row per (controller call, outer iteration, device).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bound import (BoundConstants, GradRange, estimate_lipschitz, estimate_weight_bound, fit_variance_bound,
                     gamma)
from ..channel import ChannelParams, device_stream, draw_transmission, packet_error_rate, uplink_rate
from ..compression import dequantize, prune, quantize
from ..controller import ControlProblem, ControlResult, two_stage_control
from ..cost import Budgets, DeviceProfile, round_cost
from ..data import load_delimited, make_blobs, partition_data, train_test_split
from ..fl import (DeviceDataset, DivergenceError, EmptyRoundError, accuracy, aggregate, apply_update,
                  global_loss, local_gradient)
from ..models import build_model
from ..strategy import ControlStrategy
from .config import ScenarioConfig

METRIC_COLUMNS = [
    "round", "scheme", "seed", "test_accuracy", "train_loss",
    "gamma", "quant_term", "prune_term", "trans_term",
    "round_delay", "round_energy", "max_device_energy", "cum_delay", "cum_energy",
    "devices_received", "empty_round", "feasible", "degraded_devices",
]
SUMMARY_COLUMNS = [
    "scenario", "scheme", "seed", "rounds_run", "final_accuracy", "target_accuracy", "rounds_to_target",
    "delay_to_target", "energy_to_target", "total_delay", "total_energy", "infeasible_rounds", "error",
]
TRACE_COLUMNS = ["round", "iteration", "device", "rho", "delta", "power", "gamma", "best_gamma", "improvement",
                 "feasible"]

# Purposes for per-device random streams; see channel.device_stream.
PROFILE, CHANNEL, QUANT = 0, 1, 2
# Stream keys that are not tied to a device.
_DATA_KEY, _INIT_KEY, _CONTROL_KEY, _WARMUP_KEY = 2 ** 31, 2 ** 31 + 1, 2 ** 31 + 2, 2 ** 31 + 3


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass
class Scenario:
    """Materialized scenario: devices, their data, the test set and the model."""

    config: ScenarioConfig
    seed: int
    devices: list[DeviceProfile]
    datasets: list[DeviceDataset]
    test_features: np.ndarray
    test_labels: np.ndarray
    model: object
    initial_weights: np.ndarray

    @property
    def model_dim(self) -> int:
        return self.initial_weights.size


def build_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    d = config.data
    data_rng = _stream(seed if d.seed is None else d.seed, _DATA_KEY)
    if d.source == "blobs":
        features, labels = make_blobs(d.n_samples, d.n_features, d.n_classes, data_rng, d.center_scale,
                                      d.cluster_std)
        n_classes = d.n_classes
    elif d.source == "file":
        if not d.path:
            raise ValueError("data.path is required when data.source is 'file'")
        features, labels = load_delimited(d.path, d.delimiter)
        n_classes = int(labels.max()) + 1
    else:
        raise ValueError(f"unknown data source {d.source!r}")
    (train_x, train_y), (test_x, test_y) = train_test_split(features, labels, d.test_fraction, data_rng)
    datasets = partition_data(train_x, train_y, config.scenario.devices, data_rng, d.partition,
                              d.dirichlet_alpha, tuple(d.samples_per_device), d.size_scale)

    ch, cp = config.channel, config.compute
    devices = []
    for u, data in enumerate(datasets):
        r = device_stream(seed, u, 0, PROFILE)
        params = ChannelParams(
            bandwidth_ul=ch.bandwidth_hz, noise_psd=ch.noise_psd(), waterfall_threshold=ch.waterfall_threshold(),
            interference=r.uniform(*ch.interference_w), fading_coeff=ch.fading_coeff,
            distance=r.uniform(*ch.distance_m), fading_mode=ch.fading_mode, mc_samples=ch.mc_samples)
        devices.append(DeviceProfile(data.count, r.uniform(*cp.cpu_freq_hz), cp.cycles_per_sample, params,
                                     cp.energy_coeff, cp.energy_exponent))

    model = build_model(config.model.kind, features.shape[1], n_classes, config.model.hidden, config.model.l2)
    init_rng = _stream(seed, _INIT_KEY)
    weights = (model.init_params(init_rng) if config.model.init_scale is None
               else model.init_params(init_rng, config.model.init_scale))
    return Scenario(config, seed, devices, datasets, test_x, test_y, model, weights)


def warmup_constants(scenario: Scenario, consts: BoundConstants, steps: int = 5) -> BoundConstants:
    """Estimate L, D^2 and the variance constants from a few plain GD steps."""
    model, data = scenario.model, scenario.datasets
    counts = np.array([d.count for d in data], dtype=float)

    def full_grad(w):
        return sum(c * local_gradient(w, d, model) for c, d in zip(counts, data)) / counts.sum()

    rng = _stream(scenario.seed, _WARMUP_KEY)
    w = scenario.initial_weights.copy()
    weights, pairs, local_sq, full_sq = [w], [], [], []
    for _ in range(steps):
        g = full_grad(w)
        full_sq.extend([g @ g] * len(data))
        local_sq.extend(float(np.sum(local_gradient(w, d, model) ** 2)) for d in data)
        probe = w + 0.1 * rng.standard_normal(w.size)
        pairs.append((w, probe))
        w = w - consts.eta * g
        weights.append(w)
    lipschitz = estimate_lipschitz(full_grad, pairs)
    v1, v2 = fit_variance_bound(local_sq, full_sq)
    return BoundConstants(lipschitz, max(estimate_weight_bound(weights), 1e-12), v1, v2, consts.learning_rate)


@dataclass
class RunResult:
    rows: list[dict]
    summary: dict
    trace: list[dict] = field(default_factory=list)
    error: str | None = None
    weights: np.ndarray | None = None  # model after the last completed round


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


class _CsvSink:
    def __init__(self, path: Path | None, columns: list[str]):
        self.columns = columns
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(columns)
            self._fh.flush()

    def write(self, row: dict) -> None:
        if self._fh is not None:
            self._writer.writerow([_fmt(row.get(c, "")) for c in self.columns])
            self._fh.flush()

    def comment(self, text: str) -> None:
        if self._fh is not None:
            self._fh.write(f"# {text}\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


class Simulation:
    """One (scenario, scheme, seed) training run."""

    def __init__(self, config: ScenarioConfig, seed: int, scheme: str | None = None, out_dir=None,
                 verbose: bool = False):
        self.config = config
        self.seed = int(seed)
        self.scheme = scheme or config.scenario.scheme
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.verbose = verbose
        self.scenario = build_scenario(config, self.seed)
        consts = config.bound.constants()
        if config.bound.estimate:
            consts = warmup_constants(self.scenario, consts)
        self.consts = consts
        self.limits = config.limits.limits()
        b = config.budgets
        self.budgets = Budgets(b.t_max_s, b.e_max_j, b.server_time_s)
        self.xi = int(b.xi_bits)

    # -- per-scheme pieces -------------------------------------------------

    def _baseline_strategy(self) -> ControlStrategy:
        n, lim = len(self.scenario.devices), self.limits
        bits_per_coord = {"fedsgd": 32, "signsgd": 1, "stclite": 1}[self.scheme]
        return ControlStrategy.uniform(n, 0.0, bits_per_coord, lim.p_max / 2.0)

    def _baseline_bits(self) -> np.ndarray:
        v, n = self.scenario.model_dim, len(self.scenario.devices)
        if self.scheme == "fedsgd":
            bits = 32 * v + self.xi
        elif self.scheme == "signsgd":
            bits = v + self.xi
        else:
            bits = self._stc_k() * (1 + math.ceil(math.log2(v))) + self.xi
        return np.full(n, float(bits))

    def _stc_k(self) -> int:
        v = self.scenario.model_dim
        return max(1, int(math.floor((1.0 - self.limits.rho_max) * v + 1e-9)))

    def _control(self, round_index: int, grad_ranges) -> ControlResult:
        c = self.config.controller
        problem = ControlProblem(self.scenario.devices, self.budgets, self.consts, grad_ranges,
                                 self.scenario.model_dim, self.limits, self.xi)
        return two_stage_control(problem, _stream(self.seed, _CONTROL_KEY, round_index), c.max_outer, c.tolerance,
                                 c.bo_iterations, c.margin, bit_search=c.bit_search)

    # -- main loop ---------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.scenario
        devices, datasets, model = sc.devices, sc.datasets, sc.model
        n_dev, dim = len(devices), sc.model_dim
        rounds = self.config.scenario.rounds
        target = self.config.scenario.target_accuracy
        eta = self.consts.eta
        counts = np.array([d.count for d in datasets], dtype=float)

        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        columns = METRIC_COLUMNS + [f"energy_dev_{u}" for u in range(n_dev)]
        sink = _CsvSink(None if self.out_dir is None else self.out_dir / "metrics.csv", columns)
        trace_sink = _CsvSink(self.out_dir / "controller_trace.csv" if (self.out_dir and self.verbose) else None,
                              TRACE_COLUMNS)

        w = sc.initial_weights.copy()
        ltfl = self.scheme == "ltfl"
        grad_ranges = [GradRange.of(local_gradient(w, d, model)) for d in datasets]
        strategy, degraded, bits = None, (), None
        if not ltfl:
            strategy, bits = self._baseline_strategy(), self._baseline_bits()
        residuals = [np.zeros(dim) for _ in range(n_dev)]

        rows, trace = [], []
        cum_delay = cum_energy = 0.0
        error = None
        rates = pers = None
        try:
            for n in range(1, rounds + 1):
                if ltfl and (strategy is None or self.config.controller.reoptimize_every_round):
                    result = self._control(n, grad_ranges)
                    strategy, degraded = result.strategy, result.degraded
                    rates = pers = None
                    for row in result.history:
                        for u in range(n_dev):
                            t = {"round": n, "iteration": row.iteration, "device": u,
                                 "rho": row.strategy.rho[u], "delta": row.strategy.delta[u],
                                 "power": row.strategy.power[u], "gamma": row.gamma, "best_gamma": row.best_gamma,
                                 "improvement": row.improvement, "feasible": row.feasible}
                            trace_sink.write(t)
                            if self.verbose:
                                trace.append(t)
                if rates is None:
                    rates = np.array([uplink_rate(d.channel, strategy.power[u]) for u, d in enumerate(devices)])
                    pers = np.array([packet_error_rate(d.channel, strategy.power[u]) for u, d in enumerate(devices)])

                packets, received = [], 0
                new_ranges = list(grad_ranges)
                for u, (dev, data) in enumerate(zip(devices, datasets)):
                    if ltfl:
                        w_u, mask = prune(w, strategy.rho[u])
                        g = local_gradient(w_u, data, model)[mask.kept_indices]
                        pkt = quantize(g, int(strategy.delta[u]), device_stream(self.seed, u, n, QUANT), dim, self.xi)
                        new_ranges[u] = GradRange(pkt.g_min, pkt.g_max, len(mask.kept_indices))
                        payload = dequantize(pkt, mask)
                    else:
                        g = local_gradient(w, data, model)
                        payload = self._baseline_payload(u, g, residuals)
                    outcome = draw_transmission(dev.channel, strategy.power[u], device_stream(self.seed, u, n, CHANNEL),
                                                per=pers[u], rate=rates[u])
                    received += outcome.alpha
                    packets.append((data.count, outcome.alpha, payload))

                empty = False
                try:
                    agg = aggregate(packets)
                except EmptyRoundError:
                    empty = True
                if not empty:
                    if self.scheme == "signsgd":
                        if self.config.baselines.signsgd_rule == "majority":
                            agg = np.sign(agg)
                        w = apply_update(w, agg, self.config.baselines.signsgd_step)
                    else:
                        w = apply_update(w, agg, eta)

                report = round_cost(strategy, devices, rates, dim, self.xi, self.budgets, bits=bits)
                energies = report.energies
                cum_delay += report.round_delay
                cum_energy += float(energies.sum())
                row = {
                    "round": n, "scheme": self.scheme, "seed": self.seed,
                    "test_accuracy": accuracy(w, model, sc.test_features, sc.test_labels),
                    "train_loss": global_loss(w, datasets, model),
                    "round_delay": report.round_delay, "round_energy": float(energies.sum()),
                    "max_device_energy": float(energies.max()), "cum_delay": cum_delay, "cum_energy": cum_energy,
                    "devices_received": received, "empty_round": empty, "feasible": report.feasible,
                    "degraded_devices": len(degraded),
                }
                if ltfl:
                    terms = gamma(strategy, counts, grad_ranges, self.consts, pers)
                    row.update(gamma=terms.gamma, quant_term=terms.quant_term, prune_term=terms.prune_term,
                               trans_term=terms.trans_term)
                else:
                    row.update(gamma=math.nan, quant_term=math.nan, prune_term=math.nan, trans_term=math.nan)
                for u in range(n_dev):
                    row[f"energy_dev_{u}"] = float(energies[u])
                rows.append(row)
                sink.write(row)
                grad_ranges = new_ranges
        except DivergenceError as exc:
            error = f"round {len(rows) + 1}: {exc}"
            sink.comment(f"error: {error}")
        finally:
            sink.close()
            trace_sink.close()

        summary = summarize(rows, self.config, self.scheme, self.seed, error)
        if self.out_dir is not None:
            write_rows(self.out_dir / "summary.csv", [summary], SUMMARY_COLUMNS)
        return RunResult(rows, summary, trace, error, w)

    def _baseline_payload(self, u: int, g: np.ndarray, residuals) -> np.ndarray:
        if self.scheme == "fedsgd":
            return g.astype(np.float32).astype(float)
        if self.scheme == "signsgd":
            return np.where(g >= 0, 1.0, -1.0)
        acc = g + residuals[u] if self.config.baselines.stc_error_feedback else g
        top = np.argsort(-np.abs(acc), kind="stable")[: self._stc_k()]
        sent = np.zeros_like(acc)
        mu = np.abs(acc[top]).mean()
        sent[top] = mu * np.where(acc[top] >= 0, 1.0, -1.0)
        if self.config.baselines.stc_error_feedback:
            residuals[u] = acc - sent
        return sent


def summarize(rows: list[dict], config: ScenarioConfig, scheme: str, seed: int, error: str | None = None) -> dict:
    target = config.scenario.target_accuracy
    hit = next((r for r in rows if r["test_accuracy"] >= target), None)
    return {
        "scenario": config.scenario.name, "scheme": scheme, "seed": seed, "rounds_run": len(rows),
        "final_accuracy": rows[-1]["test_accuracy"] if rows else math.nan, "target_accuracy": target,
        "rounds_to_target": hit["round"] if hit else "",
        "delay_to_target": hit["cum_delay"] if hit else math.nan,
        "energy_to_target": hit["cum_energy"] if hit else math.nan,
        "total_delay": rows[-1]["cum_delay"] if rows else 0.0,
        "total_energy": rows[-1]["cum_energy"] if rows else 0.0,
        "infeasible_rounds": sum(1 for r in rows if not r["feasible"]),
        "error": error or "",
    }


def write_rows(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def run_scheme(config: ScenarioConfig, seed: int | None = None, scheme: str | None = None, out_dir=None,
               verbose: bool = False) -> RunResult:
    """Run one scheme on one seed (first configured seed by default)."""
    seed = config.scenario.seeds[0] if seed is None else seed
    return Simulation(config, seed, scheme, out_dir, verbose).run()
