"""
Tests for the system catalog and the Casimir construction for quadratic structures.
"""
import jax.numpy as jnp
import numpy as np
import pytest

from baselines import reference_solution
from birealisations import hat
from errors import ConfigError
from geometry import casimir_residual, hamiltonian_vector_field
from systems import (
    LV_MATRIX,
    SYSTEMS,
    casimir_from_kernel,
    get_system,
    harmonic_oscillator,
    kernel_exponents,
    lotka_volterra,
    lotka_volterra3,
    quad_example,
    quad_example_printed_field,
    rigid_body,
)
from utils import sample_states


def test_lotka_volterra_casimir_value():
    spec = lotka_volterra3()
    (casimir,) = spec.system.casimirs
    assert casimir.name == "x1*x3/x2"
    assert casimir((-3.0, 5.0, 1e-3)) == pytest.approx(-6e-4, rel=1e-15)


def test_lotka_volterra_domain_excludes_zero_denominator():
    system = lotka_volterra3().system
    assert system.in_domain((1.0, 2.0, 3.0))
    assert not system.in_domain((1.0, 0.0, 3.0))
    assert system.in_domain((0.0, 2.0, 0.0))


# Format: (matrix, expected exponent vectors, description)
KERNEL_CASES = [
    (LV_MATRIX, [[1, -1, 1]], "three-species Lotka-Volterra"),
    (np.array([[0.0, 1.0], [-1.0, 0.0]]), [], "invertible matrix has no Casimirs"),
    (np.zeros((3, 3)), [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "zero structure, every coordinate is a Casimir"),
    (np.array([[0.0, 2.0, -4.0], [-2.0, 0.0, 6.0], [4.0, -6.0, 0.0]]), [[3, 2, 1]], "scaled to coprime integers"),
]


@pytest.mark.parametrize("matrix,expected,description", KERNEL_CASES)
def test_kernel_exponents(matrix, expected, description):
    assert kernel_exponents(matrix) == expected, description
    assert len(casimir_from_kernel(matrix)) == len(expected), description


def test_zero_structure_casimirs_are_coordinates():
    casimirs = casimir_from_kernel(np.zeros((3, 3)))
    assert [c.name for c in casimirs] == ["x1", "x2", "x3"]
    assert [c((2.0, 3.0, 5.0)) for c in casimirs] == [2.0, 3.0, 5.0]


def test_kernel_casimirs_annihilate_the_tensor():
    matrix = np.array([[0.0, 2.0, -4.0], [-2.0, 0.0, 6.0], [4.0, -6.0, 0.0]])
    spec = lotka_volterra(matrix)
    for x in sample_states(np.random.default_rng(7), 20, 3, low=0.5, high=2.0):
        for casimir in spec.system.casimirs:
            assert casimir_residual(spec.system, casimir, x) <= 1e-12


# Format: (matrix, description)
INVALID_MATRICES = [
    (np.ones((3, 3)), "not antisymmetric"),
    (np.zeros((2, 3)), "not square"),
]


@pytest.mark.parametrize("matrix,description", INVALID_MATRICES)
def test_casimir_from_kernel_rejects(matrix, description):
    with pytest.raises(ConfigError):
        casimir_from_kernel(matrix)


def test_rigid_body_hamiltonian_and_tensor():
    system = rigid_body().system
    assert system.hamiltonian((1.0, 1.0, 1.0)) == pytest.approx(101.0 + np.pi, rel=1e-15)
    pi = system.tensor.matrix((1.0, 2.0, 3.0))
    np.testing.assert_array_equal(pi @ np.array([1.0, 0.0, 0.0]), [0.0, 3.0, -2.0])
    np.testing.assert_array_equal(pi, np.asarray(hat(jnp.array([1.0, 2.0, 3.0]))))


def test_rigid_body_accepts_diagonal():
    spec = rigid_body([1.0, 2.0, 3.0])
    assert spec.metadata["inertia"] == [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]]


# Format: (inertia, description)
INVALID_INERTIA = [
    (np.array([[1.0, 0.5, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]]), "not symmetric"),
    (np.diag([1.0, -2.0, 3.0]), "not positive definite"),
    (np.eye(2), "wrong shape"),
]


@pytest.mark.parametrize("inertia,description", INVALID_INERTIA)
def test_rigid_body_rejects_inertia(inertia, description):
    with pytest.raises(ConfigError):
        rigid_body(inertia)


def test_rigid_body_invariants_along_reference():
    spec = rigid_body()
    ref = reference_solution(spec.system, spec.default_x0, 1.0)
    h = np.array([spec.system.hamiltonian(x) for x in ref.states])
    c = np.array([spec.system.casimirs[0](x) for x in ref.states])
    assert np.max(np.abs(h - h[0])) <= 1e-9 * abs(h[0])
    assert np.max(np.abs(c - c[0])) <= 1e-9 * abs(c[0])


def test_harmonic_oscillator():
    spec = harmonic_oscillator()
    assert spec.system.hamiltonian((1.0, 0.0)) == 0.5
    assert spec.system.casimirs == ()


def test_quad_example_leaf_function_is_casimir():
    spec = quad_example()
    (leaf,) = spec.leaf_invariants
    for x in sample_states(np.random.default_rng(8), 20, 3):
        assert casimir_residual(spec.system, leaf, x) <= 1e-15
    assert spec.system.hamiltonian(spec.default_x0) == pytest.approx(0.5, rel=1e-15)


def test_quad_example_default_state_is_equilibrium():
    spec = quad_example()
    np.testing.assert_array_equal(hamiltonian_vector_field(spec.system, spec.default_x0), [0.0, 0.0, 0.0])


def test_quad_example_printed_field_differs():
    x = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(hamiltonian_vector_field(quad_example().system, x), [0.0, 0.25, 0.25], atol=1e-15)
    assert np.max(np.abs(quad_example_printed_field(x) - [0.0, 0.25, 0.25])) > 0.1


def test_registry():
    assert sorted(SYSTEMS) == ["harmonic", "lv3", "quad-example", "rigid-body"]
    for name in SYSTEMS:
        spec = get_system(name)
        assert spec.name == name
        assert spec.default_x0.shape == (spec.system.dim,)


def test_unknown_system():
    with pytest.raises(ConfigError, match="Unknown system"):
        get_system("double-pendulum")
