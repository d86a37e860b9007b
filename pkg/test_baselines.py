"""
Tests for the classical one-step methods, the closed-form maps and the reference oracle.
"""
import numpy as np
import pytest

from baselines import (
    KERNEL_CACHE_SIZE,
    _explicit_kernels,
    _implicit_kernel,
    _rk4_sweep,
    explicit_euler_step,
    implicit_euler_step,
    leaf_breaking_map,
    lotka_volterra_printed_step,
    printed_leaf_breaking_map,
    quad_example_flow,
    reference_solution,
    rk2_step,
    rk4_step,
    run_explicit,
    symplectic_midpoint_step,
)
from errors import BlowUpError, ConfigError
from geometry import DiscreteMap, poisson_map_residual
from guardrails import StateGuardrails
from hj_phi import StepperConfig, build_stepper, integrate
from birealisations import auto_orient
from systems import harmonic_oscillator, lotka_volterra3, quad_example, rigid_body
from trajectory import Termination


@pytest.fixture(scope="module")
def harmonic():
    return harmonic_oscillator()


@pytest.fixture(scope="module")
def lv3():
    return lotka_volterra3()


# Format: (step function, description)
ONE_STEP_METHODS = [
    (explicit_euler_step, "explicit Euler"),
    (rk2_step, "explicit midpoint"),
    (rk4_step, "classical RK4"),
    (implicit_euler_step, "implicit Euler"),
    (symplectic_midpoint_step, "implicit midpoint"),
]


@pytest.mark.parametrize("step,description", ONE_STEP_METHODS)
def test_zero_step_is_identity(harmonic, step, description):
    x = np.array([0.7, -1.3])
    np.testing.assert_array_equal(step(harmonic.system, x, 0.0), x)


def test_rk2_local_error_is_third_order(harmonic):
    h = 0.1
    exact = np.array([np.cos(h), -np.sin(h)])
    error = np.max(np.abs(rk2_step(harmonic.system, (1.0, 0.0), h) - exact))
    assert 1e-6 < error < 1e-3


def test_rk4_local_error_is_fifth_order(harmonic):
    h = 0.1
    exact = np.array([np.cos(h), -np.sin(h)])
    assert np.max(np.abs(rk4_step(harmonic.system, (1.0, 0.0), h) - exact)) < 1e-6


def test_explicit_method_preserves_linear_leaf_function():
    spec = quad_example()
    record = run_explicit(spec.system, lambda x, h: rk2_step(spec.system, x, h), (1.0, 0.0, 0.0), 1e-2, 100)
    u = record.casimirs[:, 0]
    assert np.max(np.abs(u - u[0])) <= 1e-13


def test_midpoint_conserves_quadratic_energy(harmonic):
    record = run_explicit(harmonic.system, lambda x, h: symplectic_midpoint_step(harmonic.system, x, h),
                          harmonic.default_x0, 1e-2, 1000)
    assert np.max(np.abs(record.hamiltonian - record.hamiltonian[0])) <= 1e-13


def test_midpoint_needs_canonical_structure(lv3):
    with pytest.raises(ConfigError):
        symplectic_midpoint_step(lv3.system, lv3.default_x0, 1e-3)
    with pytest.raises(ConfigError):
        symplectic_midpoint_step(rigid_body().system, (1.0, 1.0, 1.0), 0.0)


def test_explicit_step_non_finite_is_blow_up(lv3):
    with pytest.raises(BlowUpError):
        explicit_euler_step(lv3.system, (1e200, 1e200, 1e200), 1.0)


# ---------------------------------------------------------------------------
# Closed-form maps
# ---------------------------------------------------------------------------

def test_quad_example_flow_matches_reference():
    spec = quad_example()
    x0 = np.array([1.0, 0.0, 0.0])
    ref = reference_solution(spec.system, x0, 1.0)
    np.testing.assert_allclose(ref.final_state, quad_example_flow(x0, 1.0), atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_leaf_breaking_map_zero_step(k):
    x = np.array([1.0, 1.0, 2.0])
    np.testing.assert_array_equal(leaf_breaking_map(x, 0.0, k), x)


def test_leaf_breaking_map_is_poisson():
    system = quad_example().system
    step = DiscreteMap(dim=3, apply=lambda x: leaf_breaking_map(x, 1e-4, 2), name="leaf-demo")
    assert poisson_map_residual(system, step, (1.0, 1.0, 2.0)) <= 1e-6
    assert poisson_map_residual(system, step, (0.3, -0.4, 0.9)) <= 1e-6


def test_leaf_breaking_map_leaves_the_leaf():
    spec = quad_example()
    (leaf,) = spec.leaf_invariants
    x = spec.default_x0
    for _ in range(10_000):
        x = leaf_breaking_map(x, 1e-3, 2)
    drift = abs(leaf(x) - leaf(spec.default_x0))
    reference_drift = abs(leaf(quad_example_flow(spec.default_x0, 10.0)) - leaf(spec.default_x0))
    assert drift >= 1e-8
    assert drift >= 100 * reference_drift


def test_printed_leaf_breaking_map_is_not_poisson():
    system = quad_example().system
    printed = DiscreteMap(dim=3, apply=lambda x: printed_leaf_breaking_map(x, 1e-4, 2), name="printed")
    np.testing.assert_array_equal(printed_leaf_breaking_map((1.0, 1.0, 2.0), 0.0, 2), [1.0, 1.0, 2.0])
    assert poisson_map_residual(system, printed, (1.0, 1.0, 2.0)) > 1e-5


@pytest.mark.parametrize("leaf_map", [leaf_breaking_map, printed_leaf_breaking_map])
def test_leaf_maps_reject_order_zero(leaf_map):
    with pytest.raises(ConfigError):
        leaf_map((1.0, 1.0, 2.0), 1e-3, 0)


def test_lotka_volterra_written_out_step_zero(lv3):
    np.testing.assert_array_equal(lotka_volterra_printed_step(lv3.default_x0, 0.0), lv3.default_x0)


# ---------------------------------------------------------------------------
# Trajectories and the reference oracle
# ---------------------------------------------------------------------------

def test_run_explicit_zero_steps(harmonic):
    record = run_explicit(harmonic.system, lambda x, h: rk4_step(harmonic.system, x, h), (1.0, 0.0), 0.1, 0)
    assert record.n_steps == 0
    assert record.solver_iters.tolist() == [0]


def test_run_explicit_rejects_negative_timestep(harmonic):
    with pytest.raises(ConfigError):
        run_explicit(harmonic.system, lambda x, h: rk4_step(harmonic.system, x, h), (1.0, 0.0), -0.1, 5)


def test_run_explicit_rejects_start_off_the_domain(lv3):
    with pytest.raises(ConfigError, match="outside the domain"):
        run_explicit(lv3.system, lambda x, h: rk2_step(lv3.system, x, h), (1.0, 0.0, 1.0), 1e-3, 5)


def test_run_explicit_stops_at_threshold(lv3):
    guard = StateGuardrails(blow_up_threshold=1e3)
    record = run_explicit(lv3.system, lambda x, h: rk4_step(lv3.system, x, h), lv3.default_x0, 1e-3, 400, guard)
    assert record.termination is Termination.BLOW_UP
    assert record.final_time < 0.26
    assert np.linalg.norm(record.final_state) <= 1e3


def test_reference_harmonic_full_period(harmonic):
    ref = reference_solution(harmonic.system, harmonic.default_x0, 2 * np.pi)
    assert ref.converged
    assert ref.blow_up_time is None
    np.testing.assert_allclose(ref.final_state, [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(ref.state_at(np.pi), [-1.0, 0.0], atol=1e-10)


def test_reference_zero_horizon(harmonic):
    ref = reference_solution(harmonic.system, harmonic.default_x0, 0.0)
    assert ref.times.tolist() == [0.0]
    np.testing.assert_array_equal(ref.final_state, harmonic.default_x0)


def test_reference_rejects_negative_horizon(harmonic):
    with pytest.raises(ConfigError):
        reference_solution(harmonic.system, harmonic.default_x0, -1.0)


def test_reference_lotka_volterra_blow_up(lv3):
    ref = reference_solution(lv3.system, lv3.default_x0, 0.3)
    assert ref.blow_up_time is not None
    assert 0.20 <= ref.blow_up_time <= 0.26
    assert ref.times[-1] <= ref.blow_up_time
    with pytest.raises(BlowUpError):
        ref.state_at(0.3)


def test_phi_tracks_singularity_better_than_rk2(lv3):
    h, n = 1e-3, 220
    ref = reference_solution(lv3.system, lv3.default_x0, h * n, n_checkpoints=n)
    exact = ref.final_state

    b = auto_orient(lv3.bireal, lv3.system, lv3.default_x0)
    phi = integrate(build_stepper(lv3.system, b, StepperConfig(dt=h)), lv3.default_x0, n)
    rk2 = run_explicit(lv3.system, lambda x, dt: rk2_step(lv3.system, x, dt), lv3.default_x0, h, n)
    assert phi.termination is Termination.COMPLETED
    assert rk2.termination is Termination.COMPLETED
    assert np.max(np.abs(phi.final_state - exact)) < np.max(np.abs(rk2.final_state - exact))


def test_kernel_caches_are_bounded():
    for cache in (_explicit_kernels, _implicit_kernel, _rk4_sweep):
        assert cache.cache_info().maxsize == KERNEL_CACHE_SIZE
    for _ in range(KERNEL_CACHE_SIZE + 3):
        system = harmonic_oscillator().system
        assert np.all(np.isfinite(rk2_step(system, (1.0, 0.0), 1e-2)))
    assert _explicit_kernels.cache_info().currsize == KERNEL_CACHE_SIZE
