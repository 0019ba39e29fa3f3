import numpy as np
import pytest

from ltfl.channel import ChannelParams, db_to_linear, dbm_to_watts
from ltfl.cost import Budgets, DeviceProfile

NOISE_PSD = float(dbm_to_watts(-174.0))
WATERFALL = float(db_to_linear(0.023))

# Criterion number -> (passed, detail); filled by tests/test_acceptance.py.
ACCEPTANCE = {}


def make_channel(distance=200.0, interference=1.5e-8, fading=0.015, **kw):
    return ChannelParams(1e7, NOISE_PSD, WATERFALL, interference, fading, distance, **kw)


def random_device(rng, n_range=(400, 601), f_range=(3e7, 1.1e8)):
    ch = make_channel(rng.uniform(100, 300), rng.uniform(1e-8, 2e-8))
    return DeviceProfile(int(rng.integers(*n_range)), rng.uniform(*f_range), 2.7e8, ch)


def random_budgets(rng, device):
    """Budgets scattered around the device's unpruned cost so every regime shows up."""
    t = device.full_compute_time * rng.uniform(0.4, 1.3) + 0.05
    e = device.energy_per_unpruned_round * rng.uniform(0.4, 1.3)
    return Budgets(t, e)


@pytest.fixture
def acceptance():
    def record(number, passed, detail=""):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
