"""
Core Poisson-geometry types and numerical residual checks.

Conventions used everywhere in phi-kit:
    bracket          {f, g}(x) = grad f(x) . pi(x) . grad g(x)
    Hamiltonian flow dx/dt     = pi(x) . grad H(x)
Tensors are dense dim x dim matrix functions written with jax.numpy, so they
can be traced by the integrators and differentiated exactly.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
import numpy as np

from errors import BlowUpError, ConfigError
from utils import as_state, default_fd_step, fd_jacobian


def _everywhere(x) -> bool:
    return True


@dataclass(frozen=True, eq=False)
class PoissonTensorField:
    """Antisymmetric matrix field pi(x) on an open subset of R^dim."""
    dim: int
    eval: Callable

    @classmethod
    def from_function(cls, dim: int, fn: Callable) -> "PoissonTensorField":
        return cls(dim=dim, eval=jax.jit(fn))

    def __call__(self, x):
        return self.eval(x)

    def matrix(self, x) -> np.ndarray:
        """Evaluate at a state and return a numpy matrix."""
        return np.asarray(self.eval(jnp.asarray(as_state(x, self.dim))))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A smooth function with its gradient. Gradients come from jax autodiff."""
    dim: int
    value: Callable
    gradient: Callable
    name: str = ""

    @classmethod
    def from_function(cls, dim: int, fn: Callable, name: str = "") -> "ScalarField":
        return cls(dim=dim, value=jax.jit(fn), gradient=jax.jit(jax.grad(fn)), name=name)

    def __call__(self, x) -> float:
        return float(self.value(jnp.asarray(as_state(x, self.dim))))

    def grad(self, x) -> np.ndarray:
        return np.asarray(self.gradient(jnp.asarray(as_state(x, self.dim))))


@dataclass(frozen=True, eq=False)
class PoissonSystem:
    """A Poisson tensor together with a Hamiltonian and known Casimirs."""
    tensor: PoissonTensorField
    hamiltonian: ScalarField
    casimirs: Tuple[ScalarField, ...] = ()
    domain_guard: Callable = _everywhere
    blow_up_hint: Optional[float] = None
    name: str = ""

    @property
    def dim(self) -> int:
        return self.tensor.dim

    def vector_field(self, x):
        """pi(x) grad H(x); traceable, for use inside jitted kernels."""
        return self.tensor.eval(x) @ self.hamiltonian.gradient(x)

    def in_domain(self, x) -> bool:
        return bool(self.domain_guard(as_state(x, self.dim)))


@dataclass(frozen=True, eq=False)
class DiscreteMap:
    """One step of an integrator, or any closed-form state map."""
    dim: int
    apply: Callable
    name: str = ""

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.apply(as_state(x, self.dim)), dtype=np.float64)


def _check_fields(system: PoissonSystem, *fields: ScalarField) -> None:
    for f in fields:
        if f.dim != system.dim:
            raise ConfigError(
                f"Field '{f.name or 'anonymous'}' has dim {f.dim}, system has dim {system.dim}"
            )


def eval_bracket(system: PoissonSystem, f: ScalarField, g: ScalarField, x) -> float:
    """
    Poisson bracket {f, g}(x) = grad f . pi . grad g.

    Evaluated as half the difference of both orderings so that swapping f and g
    flips the sign bit for bit.
    """
    _check_fields(system, f, g)
    x = as_state(x, system.dim)
    df = f.grad(x)
    dg = g.grad(x)
    pi = system.tensor.matrix(x)
    return 0.5 * (float(df @ pi @ dg) - float(dg @ pi @ df))


def hamiltonian_vector_field(system: PoissonSystem, x) -> np.ndarray:
    """Velocity pi(x) grad H(x). Raises BlowUpError on non-finite output."""
    x = as_state(x, system.dim)
    velocity = np.asarray(system.vector_field(jnp.asarray(x)))
    if not np.all(np.isfinite(velocity)):
        raise BlowUpError(f"Non-finite Hamiltonian vector field at {x}")
    return velocity


def tensor_derivatives(system: PoissonSystem, x, fd_step: Optional[float] = None) -> np.ndarray:
    """Central differences of pi; entry [a, i, j] is d pi_ij / d x_a."""
    x = as_state(x, system.dim)
    h = default_fd_step(x) if fd_step is None else fd_step
    slices = []
    for a in range(system.dim):
        e = np.zeros_like(x)
        e[a] = h
        slices.append((system.tensor.matrix(x + e) - system.tensor.matrix(x - e)) / (2.0 * h))
    return np.stack(slices)


def jacobi_residual(system: PoissonSystem, x, fd_step: Optional[float] = None) -> float:
    """
    Largest cyclic sum  sum_a d_a pi_ij pi_ak + (ijk cyclic)  over all index triples.
    Zero (up to finite-difference error) for a genuine Poisson tensor.
    """
    x = as_state(x, system.dim)
    pi = system.tensor.matrix(x)
    d_pi = tensor_derivatives(system, x, fd_step)
    terms = np.einsum("aij,ak->ijk", d_pi, pi)
    cyclic = terms + terms.transpose(1, 2, 0) + terms.transpose(2, 0, 1)
    return float(np.max(np.abs(cyclic)))


def antisymmetry_residual(system: PoissonSystem, x) -> float:
    pi = system.tensor.matrix(x)
    return float(np.max(np.abs(pi + pi.T)))


def casimir_residual(system: PoissonSystem, casimir: ScalarField, x) -> float:
    """Scaled annihilation defect |pi grad C| / ((1 + |pi|)(1 + |grad C|))."""
    _check_fields(system, casimir)
    x = as_state(x, system.dim)
    pi = system.tensor.matrix(x)
    dc = casimir.grad(x)
    scale = (1.0 + np.linalg.norm(pi)) * (1.0 + np.linalg.norm(dc))
    return float(np.linalg.norm(pi @ dc) / scale)


def poisson_map_residual(system: PoissonSystem, step: DiscreteMap, x,
                         fd_step: Optional[float] = None) -> float:
    """
    Frobenius norm of J pi(x) J^T - pi(step(x)), J the finite-difference Jacobian.
    Zero for maps that preserve the Poisson structure.
    """
    if step.dim != system.dim:
        raise ConfigError(f"Map has dim {step.dim}, system has dim {system.dim}")
    x = as_state(x, system.dim)
    jac = fd_jacobian(step, x, fd_step)
    image = step(x)
    defect = jac @ system.tensor.matrix(x) @ jac.T - system.tensor.matrix(image)
    return float(np.linalg.norm(defect, ord="fro"))
