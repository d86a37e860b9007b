"""
Tests for the generating series and the PHI stepper.
"""
import jax.numpy as jnp
import numpy as np
import pytest
from pydantic import ValidationError

from baselines import (
    explicit_euler_step,
    implicit_euler_step,
    lotka_volterra_printed_step,
    symplectic_midpoint_step,
)
from birealisations import auto_orient
from errors import ConfigError, StepTooLargeError
from geometry import poisson_map_residual
from hj_phi import (
    PhiStepper,
    StepperConfig,
    build_stepper,
    closed_form_S2,
    closed_form_S3,
    coadjoint_step,
    compute_series,
    eval_generating_gradient,
    integrate,
    phi_step,
    solve_intermediate,
)
from stats_tracker import create_stats_tracker
from systems import harmonic_oscillator, lotka_volterra3, rigid_body
from trajectory import Termination
from utils import sample_states


def stepper_for(spec, dt=1e-3, order=1, tracker=None, **options):
    b = auto_orient(spec.bireal, spec.system, spec.default_x0)
    return build_stepper(spec.system, b, StepperConfig(dt=dt, order=order, **options), tracker)


@pytest.fixture(scope="module")
def lv3():
    return lotka_volterra3()


@pytest.fixture(scope="module")
def body():
    return rigid_body()


@pytest.fixture(scope="module")
def harmonic():
    return harmonic_oscillator()


# ---------------------------------------------------------------------------
# Generating series
# ---------------------------------------------------------------------------

def test_first_coefficient_is_hamiltonian(body):
    series = compute_series(body.system, body.bireal, 1)
    for x in sample_states(np.random.default_rng(0), 10, 3):
        assert series.coeffs[0](x) == pytest.approx(body.system.hamiltonian(x), rel=1e-15)


@pytest.mark.parametrize("k", [0, 4])
def test_series_order_out_of_range(body, k):
    with pytest.raises(ConfigError):
        compute_series(body.system, body.bireal, k)


def test_series_dimension_mismatch(body, harmonic):
    with pytest.raises(ConfigError):
        compute_series(body.system, harmonic.bireal, 1)


def test_harmonic_second_coefficient_vanishes(harmonic):
    series = compute_series(harmonic.system, harmonic.bireal, 2)
    for x in sample_states(np.random.default_rng(1), 10, 2):
        assert abs(series.coeffs[1](x)) <= 1e-12
        assert np.max(np.abs(series.coeffs[1].grad(x))) <= 1e-12


@pytest.mark.parametrize("factory", [lotka_volterra3, rigid_body, harmonic_oscillator])
def test_closed_form_second_coefficient(factory):
    spec = factory()
    b = auto_orient(spec.bireal, spec.system, spec.default_x0)
    series = compute_series(spec.system, b, 2)
    for x in [np.ones(spec.system.dim), *sample_states(np.random.default_rng(2), 100, spec.system.dim)]:
        assert abs(series.coeffs[1](x)) <= 1e-8
        assert abs(closed_form_S2(spec.system, b, x)) <= 1e-8


def test_closed_form_third_coefficient_matches_recursion(body):
    # With a vanishing second coefficient the closed form is one sixth of the
    # second t-derivative taken by the recursion
    b = auto_orient(body.bireal, body.system, body.default_x0)
    series = compute_series(body.system, b, 3)
    for x in [np.ones(3), *sample_states(np.random.default_rng(3), 5, 3, low=-1.0, high=1.0)]:
        recursion = series.coeffs[2](x)
        closed = closed_form_S3(body.system, b, x)
        assert abs(6.0 * closed - recursion) <= 1e-8 * (1.0 + abs(recursion))


def test_generating_gradient(body):
    series = compute_series(body.system, body.bireal, 2)
    x = np.array([0.3, -0.5, 0.8])
    np.testing.assert_array_equal(eval_generating_gradient(series, x, 0.0), np.zeros(3))
    order_one = compute_series(body.system, body.bireal, 1)
    np.testing.assert_allclose(eval_generating_gradient(order_one, x, 0.1),
                               0.1 * body.system.hamiltonian.grad(x), rtol=1e-15)


def test_taylor_weighting_halves_second_term(body):
    series = compute_series(body.system, body.bireal, 2)
    x = np.array([0.3, -0.5, 0.8])
    h = 0.1
    plain = eval_generating_gradient(series, x, h, "plain")
    taylor = eval_generating_gradient(series, x, h, "taylor")
    np.testing.assert_allclose(plain - taylor, 0.5 * h ** 2 * series.coeffs[1].grad(x), atol=1e-15)


# ---------------------------------------------------------------------------
# Stepper configuration
# ---------------------------------------------------------------------------

# Format: (options, description)
INVALID_STEPPER_CONFIGS = [
    ({"dt": 0.0}, "non-positive timestep"),
    ({"dt": 1e-3, "order": 4}, "order above the supported range"),
    ({"dt": 1e-3, "fp_max_iter": 1}, "iteration budget too small"),
    ({"dt": 1e-3, "weighting": "exact"}, "unknown weighting"),
    ({"dt": 1e-3, "tolerance": 1e-10}, "unknown option"),
]


@pytest.mark.parametrize("options,description", INVALID_STEPPER_CONFIGS)
def test_invalid_stepper_config(options, description):
    with pytest.raises(ValidationError):
        StepperConfig(**options)


def test_stepper_rejects_foreign_series(body):
    series = compute_series(body.system, body.bireal, 1)
    other = body.bireal.oriented(body.bireal.orientation)
    with pytest.raises(ConfigError):
        PhiStepper(other, series, StepperConfig(dt=1e-3))


def test_stepper_rejects_order_mismatch(body):
    series = compute_series(body.system, body.bireal, 1)
    with pytest.raises(ConfigError):
        PhiStepper(body.bireal, series, StepperConfig(dt=1e-3, order=2))


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("factory", [lotka_volterra3, rigid_body, harmonic_oscillator])
def test_zero_step_is_identity(factory):
    spec = factory()
    st = stepper_for(spec, order=2)
    x = spec.default_x0
    np.testing.assert_array_equal(phi_step(st, x, 0.0), x)
    assert st.solve(x, 0.0).iterations == 1


def test_rigid_body_small_step_converges_quickly(body):
    st = stepper_for(body, dt=1e-4)
    result = st.solve((1.0, 1.0, 1.0))
    assert result.iterations <= 10
    assert result.residual <= 1e-13


def test_newton_fallback_continues_from_fixed_point_iterate(lv3):
    st = stepper_for(lv3, dt=1e-3, fp_max_iter=6)
    calls = []
    compiled = st._fixed_point
    st._fixed_point = lambda x, h: calls.append(h) or compiled(x, h)
    result = st.step(lv3.default_x0)
    assert len(calls) == 1
    assert result.newton_iterations >= 1
    expected = stepper_for(lv3, dt=1e-3).step(lv3.default_x0)
    np.testing.assert_allclose(result.x_next, expected.x_next, rtol=1e-12)


def test_lotka_volterra_intermediate_point(lv3):
    h = 1e-3
    st = stepper_for(lv3, dt=h)
    x = np.array([1.0, 2.0, 0.5])
    y = solve_intermediate(st, x)
    relations = np.array([
        np.exp(-0.5 * h * (y[1] + y[2])) * y[0],
        np.exp(0.5 * h * (y[0] - y[2])) * y[1],
        np.exp(0.5 * h * (y[0] + y[1])) * y[2],
    ])
    np.testing.assert_allclose(relations, x, atol=1e-12)


def test_lotka_volterra_matches_written_out_scheme(lv3):
    st = stepper_for(lv3, dt=1e-3)
    x = lv3.default_x0
    for _ in range(100):
        x_next = phi_step(st, x)
        expected = lotka_volterra_printed_step(x, 1e-3)
        assert np.max(np.abs(x_next - expected)) <= 1e-12
        x = x_next


def test_harmonic_phi1_is_implicit_midpoint(harmonic):
    st = stepper_for(harmonic, dt=1e-2)
    x_phi = x_mid = harmonic.default_x0
    for _ in range(1000):
        x_phi = phi_step(st, x_phi)
        x_mid = symplectic_midpoint_step(harmonic.system, x_mid, 1e-2)
    assert np.max(np.abs(x_phi - x_mid)) <= 1e-12


def test_harmonic_phi1_splits_into_half_euler_steps(harmonic):
    h = 0.1
    st = stepper_for(harmonic, dt=h)
    for x in sample_states(np.random.default_rng(4), 5, 2):
        half = implicit_euler_step(harmonic.system, x, h / 2)
        composed = explicit_euler_step(harmonic.system, half, h / 2)
        np.testing.assert_allclose(phi_step(st, x), composed, atol=1e-12)


def test_coadjoint_form_matches_step(body):
    st = stepper_for(body, dt=1e-3)
    for x in sample_states(np.random.default_rng(5), 5, 3, low=-1.0, high=1.0):
        np.testing.assert_allclose(coadjoint_step(st, x), phi_step(st, x), atol=1e-12)


def test_coadjoint_form_needs_order_one(body, lv3):
    with pytest.raises(ConfigError):
        coadjoint_step(stepper_for(body, order=2), body.default_x0)
    with pytest.raises(ConfigError):
        coadjoint_step(stepper_for(lv3), lv3.default_x0)


def test_step_outside_fiber_region(body):
    st = stepper_for(body, dt=10.0)
    with pytest.raises(StepTooLargeError):
        phi_step(st, (1.0, 1.0, 1.0))


@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("factory", [lotka_volterra3, rigid_body, harmonic_oscillator])
def test_step_is_poisson_map(factory, order):
    spec = factory()
    st = stepper_for(spec, dt=1e-3, order=order)
    step = st.as_map()
    for x in sample_states(np.random.default_rng(6), 50, spec.system.dim, low=-1.0, high=1.0):
        assert poisson_map_residual(spec.system, step, x) <= 1e-6


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def test_integrate_zero_steps(body):
    record = integrate(stepper_for(body), body.default_x0, 0)
    assert record.n_steps == 0
    np.testing.assert_array_equal(record.final_state, body.default_x0)
    assert record.termination is Termination.COMPLETED


def test_integrate_rejects_negative_steps(body):
    with pytest.raises(ConfigError):
        integrate(stepper_for(body), body.default_x0, -1)


def test_integrate_rejects_non_finite_start(body):
    with pytest.raises(ConfigError):
        integrate(stepper_for(body), (np.nan, 1.0, 1.0), 10)


def test_integrate_rejects_start_off_the_domain(lv3):
    with pytest.raises(ConfigError, match="outside the domain"):
        integrate(stepper_for(lv3), (1.0, 0.0, 1.0), 5)


def test_lotka_volterra_casimir_is_conserved(lv3):
    record = integrate(stepper_for(lv3, dt=1e-3), lv3.default_x0, 200)
    assert record.termination is Termination.COMPLETED
    c = record.casimirs[:, 0]
    assert np.max(np.abs(c - c[0])) <= 1e-9 * abs(c[0])


def test_lotka_volterra_blow_up(lv3):
    tracker = create_stats_tracker()
    record = integrate(stepper_for(lv3, dt=1e-3, tracker=tracker), lv3.default_x0, 400)
    assert record.termination is Termination.BLOW_UP
    assert 0.20 <= record.final_time <= 0.27
    assert record.reason
    assert tracker["blow_ups"] == 1


def test_tracker_counts_steps(body):
    tracker = create_stats_tracker()
    integrate(stepper_for(body, tracker=tracker), body.default_x0, 25)
    assert tracker["steps"] == 25
    assert tracker["fixed_point_iterations"] >= 25
    assert tracker["newton_fallbacks"] == 0


def test_timestep_override(body):
    st = stepper_for(body, dt=1e-3)
    record = integrate(st, body.default_x0, 10, h=5e-4)
    assert record.final_time == pytest.approx(5e-3, rel=1e-15)
    np.testing.assert_array_equal(record.states[1], phi_step(st, body.default_x0, 5e-4))


def test_rigid_body_casimir_is_conserved(body):
    st = stepper_for(body, dt=1e-3, order=2)
    record = integrate(st, body.default_x0, 500)
    c = record.casimirs[:, 0]
    assert np.max(np.abs(c - c[0])) <= 1e-12 * c[0]
    x = jnp.asarray(record.final_state)
    assert float(x @ x) == pytest.approx(3.0, rel=1e-12)
