"""
Long-horizon runs on the rigid body: Casimir preservation, bounded energy error
and the contrast with RK4. Marked slow; run with `pytest -m slow`.
"""
import numpy as np
import pytest

from config import MethodConfig, SystemConfig
from diagnostics import drift_slope, energy_series
from runner import build_system, make_method

pytestmark = pytest.mark.slow

DT = 1e-4
N_STEPS = 100_000


@pytest.fixture(scope="module")
def body():
    return build_system(SystemConfig(name="rigid-body"))


@pytest.fixture(scope="module")
def phi2_record(body):
    return make_method(body, MethodConfig(name="phi", order=2)).run(body.default_x0, DT, N_STEPS)


def test_casimir_preserved_to_round_off(phi2_record):
    c = phi2_record.casimirs[:, 0]
    assert np.max(np.abs(c - c[0])) / abs(c[0]) <= 1e-10


def test_energy_error_does_not_drift(phi2_record):
    slope, amplitude = drift_slope(phi2_record.hamiltonian)
    assert amplitude > 0.0
    assert abs(slope) <= 1e-3 * amplitude


def test_energy_amplitude_scales_with_second_order(body):
    method = make_method(body, MethodConfig(name="phi", order=2))
    coarse = method.run(body.default_x0, 2e-4, 5_000)
    fine = method.run(body.default_x0, 1e-4, 10_000)
    ratio = np.max(energy_series(coarse)) / np.max(energy_series(fine))
    assert 3.0 <= ratio <= 5.0


@pytest.fixture(scope="module")
def rk4_record(body):
    return make_method(body, MethodConfig(name="rk4")).run(body.default_x0, DT, N_STEPS)


def test_rk4_casimir_drifts_further(phi2_record, rk4_record):
    phi_dev = np.max(np.abs(phi2_record.casimirs[:, 0] - phi2_record.casimirs[0, 0]))
    rk4_dev = np.max(np.abs(rk4_record.casimirs[:, 0] - rk4_record.casimirs[0, 0]))
    assert rk4_dev >= 100 * max(phi_dev, np.finfo(float).eps)


def test_rk4_energy_error_grows(phi2_record, rk4_record):
    rk4_slope, _ = drift_slope(energy_series(rk4_record))
    phi_slope, _ = drift_slope(phi2_record.hamiltonian)
    assert rk4_slope > 0.0
    assert rk4_slope > 10 * abs(phi_slope)
