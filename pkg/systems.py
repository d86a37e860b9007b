"""
Catalog of concrete Poisson Hamiltonian systems.

Each constructor returns a SystemSpec bundling the Poisson system, its
reference bi-realisation (if one is known in closed form), a default initial
state and the functions that label symplectic leaves.
"""
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import jax.numpy as jnp
import numpy as np
import sympy

from birealisations import BiRealisation, auto_orient, canonical_symplectic, hat, quadratic, so3_cayley
from errors import ConfigError
from geometry import PoissonSystem, PoissonTensorField, ScalarField
from utils import as_state, log_debug

LV_MATRIX = np.array([[0.0, 1.0, 1.0],
                      [-1.0, 0.0, 1.0],
                      [-1.0, -1.0, 0.0]])
LV_DEFAULT_X0 = (-3.0, 5.0, 1e-3)
LV_BLOW_UP_HINT = 0.23

RIGID_BODY_DEFAULT_INERTIA = (1.0, float(np.pi), 100.0)
QUAD_EXAMPLE_MATRIX = np.array([[0.0, -1.0, -1.0],
                                [1.0, 0.0, -1.0],
                                [1.0, 1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A catalog entry: system, optional bi-realisation and experiment defaults."""
    name: str
    system: PoissonSystem
    bireal: Optional[BiRealisation]
    default_x0: np.ndarray
    leaf_invariants: Tuple[ScalarField, ...] = ()
    notes: str = ""
    metadata: Dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Quadratic structures pi_ij = a_ij x_i x_j
# ---------------------------------------------------------------------------

def quadratic_tensor(A) -> PoissonTensorField:
    a = jnp.asarray(np.asarray(A, dtype=np.float64))
    return PoissonTensorField.from_function(a.shape[0], lambda x: a * jnp.outer(x, x))


def _rational_matrix(A: np.ndarray) -> sympy.Matrix:
    return sympy.Matrix([[sympy.nsimplify(float(v), rational=True) for v in row] for row in A])


def _integer_exponents(vector: sympy.Matrix) -> List[int]:
    """Scale a rational kernel vector to coprime integers, first nonzero entry positive."""
    scale = math.lcm(*[int(sympy.fraction(v)[1]) for v in vector])
    ints = [int(v * scale) for v in vector]
    divisor = math.gcd(*ints)
    ints = [v // divisor for v in ints]
    first = next(v for v in ints if v != 0)
    return [-v for v in ints] if first < 0 else ints


def kernel_exponents(A: np.ndarray) -> List[List[int]]:
    """Integer basis of Ker A computed in exact rational arithmetic."""
    return [_integer_exponents(vector) for vector in _rational_matrix(A).nullspace()]


def _monomial_name(exponents: List[int]) -> str:
    num = [f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}" for i, e in enumerate(exponents) if e > 0]
    den = [f"x{i + 1}" if e == -1 else f"x{i + 1}^{-e}" for i, e in enumerate(exponents) if e < 0]
    name = "*".join(num) or "1"
    if den:
        name += "/" + "*".join(den)
    return name


def _monomial(exponents: List[int]) -> Callable:
    def value(x):
        total = jnp.ones((), dtype=x.dtype)
        for i, e in enumerate(exponents):
            if e != 0:
                total = total * x[i] ** e
        return total
    return value


def casimir_from_kernel(A) -> List[ScalarField]:
    """
    Monomial Casimirs prod x_i^u_i of pi_ij = a_ij x_i x_j, one per vector u of
    an exact rational basis of Ker A. Exponents are scaled to integers, so the
    functions are defined wherever the coordinates with negative exponents are
    nonzero.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"Quadratic structure needs a square matrix, got shape {A.shape}")
    if np.max(np.abs(A + A.T), initial=0.0) != 0.0:
        raise ConfigError("Quadratic structure matrix must be antisymmetric")
    n = A.shape[0]

    casimirs = []
    for exponents in kernel_exponents(A):
        name = _monomial_name(exponents)
        log_debug(f"kernel vector {exponents} gives Casimir {name}")
        casimirs.append(ScalarField.from_function(n, _monomial(exponents), name=name))
    return casimirs


def _nonzero_guard(exponents_list: List[List[int]]) -> Callable:
    singular = sorted({i for exps in exponents_list for i, e in enumerate(exps) if e < 0})

    def guard(x) -> bool:
        return all(x[i] != 0.0 for i in singular)
    return guard


def lotka_volterra(A, x0=None, name: str = "lotka-volterra",
                   blow_up_hint: Optional[float] = None) -> SystemSpec:
    """Quadratic Lotka-Volterra system for a given antisymmetric A with H = sum x_i."""
    A = np.asarray(A, dtype=np.float64)
    casimirs = casimir_from_kernel(A)
    n = A.shape[0]
    exponents = kernel_exponents(A)
    system = PoissonSystem(
        tensor=quadratic_tensor(A),
        hamiltonian=ScalarField.from_function(n, jnp.sum, name="H"),
        casimirs=tuple(casimirs),
        domain_guard=_nonzero_guard(exponents),
        blow_up_hint=blow_up_hint,
        name=name,
    )
    default_x0 = as_state(np.ones(n) if x0 is None else x0, n)
    return SystemSpec(
        name=name,
        system=system,
        bireal=auto_orient(quadratic(A), system, default_x0),
        default_x0=default_x0,
        leaf_invariants=tuple(casimirs),
        notes="quadratic structure a_ij x_i x_j, linear Hamiltonian",
    )


def lotka_volterra3() -> SystemSpec:
    """
    Three-species Lotka-Volterra:
        x1' = x1 (x2 + x3),  x2' = x2 (x3 - x1),  x3' = -x3 (x1 + x2)
    Trajectories from (-3, 5, 1e-3) blow up in finite time.
    """
    spec = lotka_volterra(LV_MATRIX, LV_DEFAULT_X0, name="lv3", blow_up_hint=LV_BLOW_UP_HINT)
    return dataclasses.replace(spec, notes="generic leaves are the level sets of x1 x3 / x2")


# ---------------------------------------------------------------------------
# Lie-Poisson and symplectic systems
# ---------------------------------------------------------------------------

def rigid_body(J=None) -> SystemSpec:
    """
    Free rigid body on so(3)*, x' = -x ^ Jx.

    H = 1/2 (Tr(J) |x|^2 - x^T J x). This is the trace form of the inertia
    Hamiltonian; it differs from other conventions by a multiple of the
    Casimir |x|^2, which the dynamics do not see.
    """
    J = np.diag(RIGID_BODY_DEFAULT_INERTIA) if J is None else np.asarray(J, dtype=np.float64)
    if J.ndim == 1:
        J = np.diag(J)
    if J.shape != (3, 3):
        raise ConfigError(f"Inertia tensor must be 3x3, got shape {J.shape}")
    if not np.allclose(J, J.T, rtol=0.0, atol=1e-14):
        raise ConfigError("Inertia tensor must be symmetric")
    if np.min(np.linalg.eigvalsh(J)) <= 0.0:
        raise ConfigError("Inertia tensor must be positive definite")

    inertia = jnp.asarray(J)
    trace = float(np.trace(J))

    def hamiltonian(x):
        return 0.5 * (trace * x @ x - x @ inertia @ x)

    system = PoissonSystem(
        tensor=PoissonTensorField.from_function(3, hat),
        hamiltonian=ScalarField.from_function(3, hamiltonian, name="H"),
        casimirs=(ScalarField.from_function(3, lambda x: x @ x, name="|x|^2"),),
        name="rigid-body",
    )
    return SystemSpec(
        name="rigid-body",
        system=system,
        bireal=so3_cayley(),
        default_x0=np.ones(3),
        leaf_invariants=system.casimirs,
        notes="leaves are spheres |x| = const",
        metadata={"inertia": J.tolist()},
    )


def harmonic_oscillator() -> SystemSpec:
    """H = (q^2 + p^2) / 2 with the canonical structure; the flow rotates (q, p) clockwise."""
    b = canonical_symplectic(1)
    omega = jnp.asarray(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    system = PoissonSystem(
        tensor=PoissonTensorField.from_function(2, lambda x: omega),
        hamiltonian=ScalarField.from_function(2, lambda x: 0.5 * x @ x, name="H"),
        name="harmonic",
    )
    return SystemSpec(
        name="harmonic",
        system=system,
        bireal=b,
        default_x0=np.array([1.0, 0.0]),
        notes="exact flow (q cos t + p sin t, p cos t - q sin t)",
    )


def _quad_example_radius(x):
    u = x[0] - x[1] + x[2]
    v = x[0] + x[1] - x[2]
    return u * u + v * v


def quad_example() -> SystemSpec:
    """
    pi = ((x-y+z)^2 + (x+y-z)^2)/4 * M with constant M, H = ((x-y+z)^2 + (x+y-z)^2)/8.
    The leaves lie in the planes x - y + z = const. The dynamics are pi grad H;
    they only move (y, z) along (1, 1) and vanish on x + y = z.
    """
    m = jnp.asarray(QUAD_EXAMPLE_MATRIX)
    leaf = ScalarField.from_function(3, lambda x: x[0] - x[1] + x[2], name="x-y+z")
    system = PoissonSystem(
        tensor=PoissonTensorField.from_function(3, lambda x: _quad_example_radius(x) / 4.0 * m),
        hamiltonian=ScalarField.from_function(3, lambda x: _quad_example_radius(x) / 8.0, name="H"),
        casimirs=(leaf,),
        name="quad-example",
    )
    return SystemSpec(
        name="quad-example",
        system=system,
        bireal=None,
        default_x0=np.array([1.0, 1.0, 2.0]),
        leaf_invariants=(leaf,),
        notes="Poisson maps of this structure need not keep x-y+z fixed",
    )


def quad_example_printed_field(x) -> np.ndarray:
    """The hand-derived right-hand side kept for comparison; differs from pi grad H."""
    x_, y, z = as_state(x, 3)
    u = x_ - y + z
    v = x_ + y - z
    return np.array([
        -v / 8.0 * ((-x_ - y + z) ** 2 + v ** 2),
        (-y + z) / 4.0 * (u ** 2 + v ** 2),
        u / 8.0 * (u ** 2 + v ** 2),
    ])


SYSTEMS: Dict[str, Callable[[], SystemSpec]] = {
    "lv3": lotka_volterra3,
    "rigid-body": rigid_body,
    "harmonic": harmonic_oscillator,
    "quad-example": quad_example,
}


def get_system(name: str) -> SystemSpec:
    """Look up a catalog entry by its CLI name."""
    if name not in SYSTEMS:
        raise ConfigError(f"Unknown system '{name}'. Known systems: {', '.join(sorted(SYSTEMS))}")
    return SYSTEMS[name]()
