import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltfl.bound import (BoundConstants, ConfigurationError, GradRange, estimate_lipschitz, estimate_weight_bound,
                        fit_variance_bound, gamma, gap_contributions)
from ltfl.strategy import ControlStrategy


def _gap(rho, delta, per, n=(500,), ranges=None, consts=BoundConstants()):
    s = ControlStrategy(np.atleast_1d(rho), np.atleast_1d(delta), np.full(np.size(rho), 0.05))
    ranges = ranges or [GradRange(0.1, 1.1, 40)] * s.n_devices
    return gamma(s, list(n), ranges, consts, np.atleast_1d(per))


def test_single_device_quant_example():
    consts = BoundConstants(upsilon2=0.01)
    terms = _gap(0.0, 1, 0.0, ranges=[GradRange(1.0, 3.0, 1)], consts=consts)
    assert terms.quant_term == pytest.approx(3.0 / (1 - 12 * 0.01), rel=1e-14)
    assert terms.prune_term == 0.0 and terms.trans_term == 0.0


def test_prune_and_trans_terms_by_hand():
    consts = BoundConstants(lipschitz=2.0, weight_bound_sq=3.0, upsilon1=0.5, upsilon2=0.0)
    terms = _gap([0.1, 0.2], [8, 8], [0.3, 0.0], n=(100, 300), consts=consts)
    assert terms.prune_term == pytest.approx(3 * 4 * 3 * 0.3)
    assert terms.trans_term == pytest.approx(12 * 0.5 * 100 * 0.3 / 400)


def test_gap_vanishes_without_error_sources():
    terms = _gap(0.0, 60, 0.0)
    assert terms.gamma < 1e-30


def test_additivity_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        terms = _gap(rng.uniform(0, 0.5, 3), rng.integers(1, 9, 3), rng.uniform(0, 1, 3), n=(400, 500, 600))
        assert terms.gamma == terms.quant_term + terms.prune_term + terms.trans_term
        assert min(terms.quant_term, terms.prune_term, terms.trans_term) >= 0


def test_vacuous_bound_rejected():
    with pytest.raises(ConfigurationError):
        BoundConstants(upsilon2=1.0 / 12.0)
    with pytest.raises(ConfigurationError):
        BoundConstants(lipschitz=0.0)


def test_default_learning_rate():
    assert BoundConstants(lipschitz=4.0).eta == 0.25
    assert BoundConstants(learning_rate=0.3).eta == 0.3


def test_length_mismatch():
    s = ControlStrategy.uniform(2, 0.0, 4, 0.05)
    with pytest.raises(ValueError):
        gamma(s, [1, 2, 3], [GradRange(0, 1, 1)] * 2, BoundConstants(), np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_strictly_decreasing_in_bits(seed):
    rng = np.random.default_rng(seed)
    rho, per = rng.uniform(0, 0.5, 3), rng.uniform(0, 1, 3)
    u = int(rng.integers(3))
    delta = rng.integers(1, 9, 3)
    values = []
    for d in range(1, 9):
        delta[u] = d
        values.append(_gap(rho, delta, per, n=(400, 500, 600)).gamma)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_increasing_in_pruning_and_error_rate():
    grid = np.linspace(0, 0.5, 20)
    g = [_gap(r, 4, 0.2).gamma for r in grid]
    assert np.all(np.diff(g) > 0)
    g = [_gap(0.1, 4, q).gamma for q in grid]
    assert np.all(np.diff(g) > 0)


def test_contributions_broadcast():
    q, p, t = gap_contributions(np.zeros((5, 1)), np.arange(1, 9)[None, :], 0.1, 500, 4.0, BoundConstants(),
                                n_total=1000)
    assert q.shape == (1, 8) and t == pytest.approx(12 * 0.5 * 0.1 / 0.88)
    with pytest.raises(ValueError):
        gap_contributions(0.0, 0, 0.0, 1, 1.0, BoundConstants())


def test_grad_range_of():
    r = GradRange.of(np.array([-3.0, 0.5, 2.0]))
    assert (r.g_min, r.g_max, r.n_coords) == (0.5, 3.0, 3)
    assert r.spread_sq_sum == pytest.approx(3 * 2.5 ** 2)
    assert GradRange.of(np.array([])).spread_sq_sum == 0.0


def test_estimate_lipschitz_on_quadratic():
    a = np.diag([1.0, 4.0, 9.0])
    rng = np.random.default_rng(1)
    pairs = [(rng.standard_normal(3), rng.standard_normal(3)) for _ in range(200)]
    est = estimate_lipschitz(lambda w: a @ w, pairs)
    assert 8.0 < est <= 9.0 + 1e-12
    with pytest.raises(ValueError):
        estimate_lipschitz(lambda w: w, [(np.ones(2), np.ones(2))])


def test_estimate_weight_bound():
    assert estimate_weight_bound([np.array([1.0, 2.0]), np.array([3.0, 0.0])]) == 9.0


def test_fit_variance_bound_covers_data():
    rng = np.random.default_rng(2)
    full = rng.uniform(0, 5, 50)
    sample = 0.5 + 0.05 * full + rng.uniform(0, 0.1, 50)
    v1, v2 = fit_variance_bound(sample, full)
    assert 0 <= v2 < 1 / 12
    assert np.all(sample <= v1 + v2 * full + 1e-12)
    # A steep slope is clamped below 1/12.
    v1, v2 = fit_variance_bound(2.0 * full, full)
    assert v2 < 1 / 12 and np.all(2.0 * full <= v1 + v2 * full + 1e-12)
