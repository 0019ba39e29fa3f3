"""Per-round control: pruning, quantization and transmit power.

The pruning ratio and bit width have closed forms once the other variables
are fixed (the gap grows linearly in the ratio and shrinks in the bit width,
so each is pushed to the edge of its delay/energy constraint).  Power is
searched with Bayesian optimization, and the three steps alternate until the
best gap stops improving.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .bound import BoundConstants, GapTerms, GradRange, gamma, gap_contributions
from .channel import packet_error_rate, uplink_rate
from .compression import DEFAULT_XI_BITS, payload_bits
from .cost import Budgets, DeviceProfile, device_feasible, round_cost
from .gp import GaussianProcess
from .strategy import ControlLimits, ControlStrategy


class InfeasibleError(RuntimeError):
    """No decision in the box meets the delay/energy budgets.

    ``raw_value`` optionally carries the objective value ignoring the budgets.
    """

    def __init__(self, message: str = "", raw_value: float | None = None):
        super().__init__(message)
        self.raw_value = raw_value


def _phi_time(device: DeviceProfile, budgets: Budgets, bits: float, rate: float) -> float:
    return (budgets.t_max - budgets.server_time) / (device.full_compute_time + bits / rate)


def _phi_energy(device: DeviceProfile, budgets: Budgets, bits: float, power: float, rate: float) -> float:
    return budgets.e_max / (device.energy_per_unpruned_round + power * bits / rate)


def optimal_rho(device: DeviceProfile, delta: int, power: float, budgets: Budgets, rate: float, model_dim: int,
                xi: int = DEFAULT_XI_BITS, rho_max: float = 0.5) -> float:
    """Smallest pruning ratio meeting both budgets at fixed bits and power.

    ``min(rho_max, (1 - min(phi_time, phi_energy))^+)``.  Raises
    :class:`InfeasibleError` when even ``rho_max`` is not enough.
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    bits = payload_bits(model_dim, int(delta), xi)
    phi = min(_phi_time(device, budgets, bits, rate), _phi_energy(device, budgets, bits, power, rate))
    needed = 1.0 - phi
    if needed > rho_max:
        raise InfeasibleError(f"needs pruning ratio {needed:.4f} > rho_max {rho_max}")
    rho = max(0.0, needed)
    # Closed form is tight; if roundoff lands just outside, shrink 1 - rho by an ulp at a time.
    for _ in range(64):
        if device_feasible(device, budgets, rho, delta, power, rate, model_dim, xi):
            return float(rho)
        rho = min(rho + np.spacing(1.0 - rho), rho_max)
    raise InfeasibleError("budget unreachable within roundoff of the closed form")


def optimal_delta(device: DeviceProfile, rho: float, power: float, budgets: Budgets, rate: float, model_dim: int,
                  xi: int = DEFAULT_XI_BITS, delta_max: int = 8) -> int:
    """Largest integer bit width meeting both budgets at fixed pruning and power.

    ``floor(min((phi3 - xi) / V, (phi4 - xi) / V, delta_max))`` where phi3 and
    phi4 are the payload sizes the delay and energy budgets still allow.
    """
    if not rho < 1:
        raise ValueError("pruning ratio must be below 1")
    if not rate > 0:
        raise ValueError("rate must be positive")
    keep = 1.0 - rho
    phi3 = (budgets.t_max - budgets.server_time - device.full_compute_time * keep) * rate / keep
    phi4 = (budgets.e_max - device.energy_per_unpruned_round * keep) * rate / (power * keep)
    x = min((phi3 - xi) / model_dim, (phi4 - xi) / model_dim, float(delta_max))
    d = int(math.floor(x + 1e-9))
    if d >= 1 and not device_feasible(device, budgets, rho, d, power, rate, model_dim, xi):
        d -= 1  # x sat within roundoff below an integer it cannot actually reach
    if d < 1:
        raise InfeasibleError(f"even 1 bit per coordinate breaks the budget (bound {x:.4f})")
    return d


@dataclass
class ControlProblem:
    """Everything the controller needs for one round."""

    devices: Sequence[DeviceProfile]
    budgets: Budgets
    consts: BoundConstants
    grad_ranges: Sequence[GradRange]
    model_dim: int
    limits: ControlLimits = field(default_factory=ControlLimits)
    xi: int = DEFAULT_XI_BITS

    def __post_init__(self):
        if len(self.grad_ranges) != len(self.devices):
            raise ValueError("need one gradient range per device")

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def n_samples(self) -> np.ndarray:
        return np.array([d.n_samples for d in self.devices], dtype=float)

    @property
    def spreads(self) -> np.ndarray:
        return np.array([r.spread_sq_sum for r in self.grad_ranges])

    def rates(self, power) -> np.ndarray:
        power = np.asarray(power, dtype=float)
        return np.array([uplink_rate(d.channel, power[u]) for u, d in enumerate(self.devices)])

    def pers(self, power) -> np.ndarray:
        power = np.asarray(power, dtype=float)
        return np.array([packet_error_rate(d.channel, power[u]) for u, d in enumerate(self.devices)])

    def gap(self, strategy: ControlStrategy) -> GapTerms:
        return gamma(strategy, self.n_samples, self.grad_ranges, self.consts, self.pers(strategy.power))

    def cost(self, strategy: ControlStrategy):
        return round_cost(strategy, self.devices, self.rates(strategy.power), self.model_dim, self.xi, self.budgets)

    def power_interval(self, u: int, rho: float, delta: int, anchor: float) -> tuple[float, float]:
        """Feasible power interval of device ``u`` that contains ``anchor``.

        Upload delay falls and upload energy rises with power, so the powers
        meeting both budgets form an interval; its ends are found by bisection
        and are themselves feasible.
        """
        lim = self.limits
        if not self.device_ok(u, rho, delta, anchor):
            raise InfeasibleError("anchor power is not feasible")
        ends = []
        for edge in (lim.p_min, lim.p_max):
            if self.device_ok(u, rho, delta, edge):
                ends.append(edge)
                continue
            good, bad = anchor, edge
            for _ in range(60):
                mid = 0.5 * (good + bad)
                if self.device_ok(u, rho, delta, mid):
                    good = mid
                else:
                    bad = mid
            ends.append(good)
        return ends[0], ends[1]

    def device_ok(self, u: int, rho, delta, power) -> np.ndarray:
        dev = self.devices[u]
        return device_feasible(dev, self.budgets, rho, delta, power, uplink_rate(dev.channel, power),
                               self.model_dim, self.xi)


class PowerObjective:
    """Gap as a function of the power of some devices.

    For each candidate power the device's pruning ratio and bit width are set
    by the closed-form stage (see ``_stage_rho_delta``), so the search sees the trade-off between a cleaner channel and
    the extra pruning that a costlier upload forces.  Devices are independent
    given their power, so the value is a sum of per-device contributions.
    Candidates that break a budget raise :class:`InfeasibleError` carrying the
    value the device would have at ``(rho_max, 1)``.
    """

    def __init__(self, problem: ControlProblem, delta, devices: Sequence[int], bit_search: bool = True):
        self.problem = problem
        self.delta = np.asarray(delta)
        self.devices = list(devices)
        self.bit_search = bit_search
        self._n_total = problem.n_samples.sum()

    def contribution(self, u: int, rho, delta, power) -> float:
        pb = self.problem
        per = packet_error_rate(pb.devices[u].channel, power)
        q, p, t = gap_contributions(rho, delta, per, pb.devices[u].n_samples, pb.grad_ranges[u].spread_sq_sum,
                                    pb.consts, n_total=self._n_total)
        return float(q + p + t)

    def decide(self, u: int, power: float):
        """``(rho, delta)`` the closed forms give device ``u`` at ``power``."""
        return _stage_rho_delta(self.problem, u, int(self.delta[u]), power, self.bit_search)

    def __call__(self, power) -> float:
        power = np.asarray(power, dtype=float)
        lim = self.problem.limits
        total, ok = 0.0, True
        for j, u in enumerate(self.devices):
            try:
                rho, delta = self.decide(u, power[j])
            except InfeasibleError:
                rho, delta, ok = lim.rho_max, 1, False
            total += self.contribution(u, rho, delta, power[j])
        if not ok:
            raise InfeasibleError("power vector breaks a budget", raw_value=total)
        return total


@dataclass
class BOResult:
    x: np.ndarray
    value: float
    xs: np.ndarray
    values: np.ndarray
    feasible: np.ndarray
    best_trace: np.ndarray


def _maximize_acquisition(gp: GaussianProcess, threshold: float, dim: int, rng: np.random.Generator,
                          incumbent: np.ndarray, n_candidates: int, n_refine: int) -> np.ndarray:
    m = max(1, int(math.ceil(math.log2(n_candidates))))
    sobol = qmc.Sobol(dim, scramble=True, seed=int(rng.integers(2 ** 32))).random_base2(m)[:n_candidates]
    local = np.clip(incumbent + 0.1 * rng.standard_normal((n_candidates, dim)), 0.0, 1.0)
    cands = np.vstack([sobol, local])
    scores = gp.log_improvement_probability(cands, threshold)
    starts = cands[np.argsort(-scores, kind="stable")[:n_refine]]
    best_z, best_s = cands[np.argmax(scores)], scores.max()

    def neg(z):
        value, grad = gp.log_improvement_probability_grad(z, threshold)
        return -value, -grad

    for z0 in starts:
        res = minimize(neg, z0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim,
                       options={"maxiter": 50})
        if np.all(np.isfinite(res.x)) and -res.fun > best_s:
            best_z, best_s = np.clip(res.x, 0.0, 1.0), -res.fun
    return best_z


def bo_power(objective: Callable[[np.ndarray], float], lower, upper, max_iter: int = 50,
             rng: np.random.Generator | None = None, margin: float | None = None,
             initial_points: Sequence[np.ndarray] | None = None, n_candidates: int = 256,
             n_refine: int = 3, jitter: float = 1e-8, log_warp: bool = True) -> BOResult:
    """Minimize ``objective`` over a box with a GP surrogate.

    Starts from ``initial_points`` (if any) plus one uniformly random point,
    then runs ``max_iter`` iterations of: fit the GP, maximize the probability
    of beating the incumbent by ``margin``, evaluate.  ``margin`` defaults to
    1 % of the magnitude of the first observed value.  Infeasible candidates
    are recorded at ten times the worst value seen so far.  With ``log_warp``
    the GP models ``log(value)`` whenever every observation is positive, which
    keeps the penalties from flattening the surrogate over the feasible part.
    """
    if max_iter < 1:
        raise ValueError("need at least one iteration")
    rng = np.random.default_rng() if rng is None else rng
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    lower, upper = np.broadcast_arrays(lower, upper)
    dim = lower.size
    span = upper - lower
    if np.any(span < 0):
        raise ValueError("lower bound above upper bound")
    width = np.where(span > 0, span, 1.0)

    zs, values, feasible = [], [], []

    def evaluate(z):
        x = lower + z * span
        try:
            value, ok = float(objective(x)), True
        except InfeasibleError as exc:
            worst = max([v for v, f in zip(values, feasible) if f], default=0.0)
            raw = exc.raw_value if exc.raw_value is not None else worst
            value, ok = 10.0 * max(abs(worst), abs(raw)), False
        if not math.isfinite(value):
            raise ValueError("objective returned a non-finite value")
        zs.append(np.asarray(z, dtype=float))
        values.append(value)
        feasible.append(ok)

    for x0 in initial_points or ():
        evaluate(np.clip((np.asarray(x0, dtype=float) - lower) / width, 0.0, 1.0))
    evaluate(rng.random(dim))
    if margin is None:
        margin = 0.01 * abs(values[0])

    best_trace = []
    gp = GaussianProcess(jitter=jitter)
    for _ in range(max_iter):
        vals = np.array(values)
        ok = np.array(feasible)
        i_best = int(np.argmin(np.where(ok, vals, np.inf))) if ok.any() else int(np.argmin(vals))
        best_trace.append(vals[i_best])
        threshold = vals[i_best] - margin
        if log_warp and np.all(vals > 0) and threshold > 0:
            # log is monotone, so "below threshold" is the same event on either scale
            gp.fit(np.array(zs), np.log(vals))
            threshold = math.log(threshold)
        else:
            gp.fit(np.array(zs), vals)
        z_next = _maximize_acquisition(gp, threshold, dim, rng, zs[i_best], n_candidates, n_refine)
        if min(np.abs(np.array(zs) - z_next).max(axis=1)) < 1e-9:
            z_next = rng.random(dim)  # duplicates would make the kernel matrix singular
        evaluate(z_next)

    vals, ok = np.array(values), np.array(feasible)
    i_best = int(np.argmin(np.where(ok, vals, np.inf))) if ok.any() else int(np.argmin(vals))
    best_trace.append(vals[i_best])
    xs = lower + np.array(zs) * span
    return BOResult(xs[i_best], float(vals[i_best]), xs, vals, ok, np.array(best_trace))


@dataclass
class TraceRow:
    iteration: int
    strategy: ControlStrategy
    gamma: float
    feasible: bool
    best_gamma: float
    improvement: float


@dataclass
class ControlResult:
    strategy: ControlStrategy
    terms: GapTerms
    history: list[TraceRow]
    degraded: tuple[int, ...]
    feasible: bool

    @property
    def iterations(self) -> int:
        """Outer iterations run (the trace also holds the starting point as row 0)."""
        return len(self.history) - 1


def _stage_rho_delta(problem: ControlProblem, u: int, delta_prev: int, power: float, bit_search: bool = True):
    """Pruning then bits for one device; raises when no (rho, delta) fits at this power.

    The single pass (pruning at ``delta_prev``, then bits at that pruning) is a
    coordinate-wise fixed point and can miss a cheaper pair with fewer bits and
    less pruning.  With ``bit_search`` the pass is started from every bit width
    and the pair with the smallest gap is kept.
    """
    dev, lim = problem.devices[u], problem.limits
    rate = uplink_rate(dev.channel, power)

    def one_pass(d0):
        try:
            rho = optimal_rho(dev, d0, power, problem.budgets, rate, problem.model_dim, problem.xi, lim.rho_max)
        except InfeasibleError:
            rho = lim.rho_max  # fewer bits may still rescue the budget
        delta = optimal_delta(dev, rho, power, problem.budgets, rate, problem.model_dim, problem.xi, lim.delta_max)
        return rho, delta

    if not bit_search:
        return one_pass(delta_prev)
    best, best_value = None, math.inf
    spread = problem.grad_ranges[u].spread_sq_sum
    for d0 in range(1, int(lim.delta_max) + 1):
        try:
            rho, delta = one_pass(d0)
        except InfeasibleError:
            continue
        # Power is fixed here, so only the quantization and pruning parts differ.
        quant, prune, _ = gap_contributions(rho, delta, 0.0, dev.n_samples, spread, problem.consts, n_total=1.0)
        if quant + prune < best_value:
            best, best_value = (rho, delta), float(quant + prune)
    if best is None:
        raise InfeasibleError("no pruning ratio and bit width fit at this power")
    return best


def two_stage_control(problem: ControlProblem, rng: np.random.Generator, max_outer: int = 20,
                      tolerance: float = 1e-4, bo_iterations: int = 50, margin: float | None = None,
                      initial: ControlStrategy | None = None, bit_search: bool = True) -> ControlResult:
    """Alternate closed-form pruning, closed-form bits and BO power.

    Stops once the best gap found improves by at most ``tolerance`` over an
    outer iteration, or after ``max_outer`` iterations.  A device for which no
    (pruning, bits) pair fits at its current power, at ``p_max`` or at
    ``p_min`` is pinned to ``(rho_max, 1, p_max)`` and reported as degraded.
    ``bit_search`` is passed on to the pruning/bits stage.
    """
    lim = problem.limits
    n = problem.n_devices
    if initial is None:
        initial = ControlStrategy.uniform(n, 0.0, lim.delta_max, lim.p_max / 2.0)
    rho, delta, power = initial.rho.copy(), initial.delta.copy(), initial.power.copy()

    best = None
    best_terms = None
    best_gamma = math.inf
    history: list[TraceRow] = []
    degraded: set[int] = set()

    def record(k):
        nonlocal best, best_terms, best_gamma
        prev_best = best_gamma
        strategy = ControlStrategy(rho.copy(), delta.copy(), power.copy())
        terms = problem.gap(strategy)
        ok = not (set(problem.cost(strategy).violating) - degraded)
        if ok and terms.gamma < best_gamma:
            best, best_terms, best_gamma = strategy, terms, terms.gamma
        improvement = prev_best - best_gamma if math.isfinite(prev_best) else math.inf
        history.append(TraceRow(k, strategy, terms.gamma, ok, best_gamma, improvement))
        return improvement

    for k in range(1, max_outer + 1):
        degraded.clear()
        for u in range(n):
            for p_try in (power[u], lim.p_max, lim.p_min):
                try:
                    rho[u], delta[u] = _stage_rho_delta(problem, u, int(delta[u]), p_try, bit_search)
                    power[u] = p_try
                    break
                except InfeasibleError:
                    continue
            else:
                rho[u], delta[u], power[u] = lim.rho_max, 1, lim.p_max
                degraded.add(u)
        if k == 1:
            record(0)  # closed forms at the starting power, before any search

        free = [u for u in range(n) if u not in degraded]
        if free:
            objective = PowerObjective(problem, delta, free, bit_search)
            # A device can be served at power p iff (rho_max, 1 bit) fits there.
            box = np.array([problem.power_interval(u, lim.rho_max, 1, power[u]) for u in free])
            res = bo_power(objective, box[:, 0], box[:, 1], max_iter=bo_iterations, rng=rng, margin=margin,
                           initial_points=[power[free]])
            if res.feasible.any():
                for j, u in enumerate(free):
                    rho[u], delta[u] = objective.decide(u, res.x[j])
                    power[u] = res.x[j]

        improvement = record(k)
        if k > 1 and improvement <= tolerance:
            break

    if best is None:
        best = ControlStrategy.uniform(n, lim.rho_max, 1, lim.p_max)
        best_terms = problem.gap(best)
        degraded = set(range(n))
    return ControlResult(best, best_terms, history, tuple(sorted(degraded)), not degraded)
