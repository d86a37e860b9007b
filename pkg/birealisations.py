"""
Bi-realisations: a source/target pair (alpha, beta) from phase space x fiber
to phase space, with closed-form constructions and numerical axiom checks.

The doubled space carries coordinates (x_1..x_n, p_1..p_n) and the canonical
bracket {F, G} = sum_i dF/dx_i dG/dp_i - dF/dp_i dG/dx_i. In matrix form the
bracket of two coordinate maps u, v is  Ju_x Jv_p^T - Ju_p Jv_x^T.

Which of alpha and beta is solved implicitly by the integrator is a separate
orientation flag. The "source" of an oriented realisation is the solve side
and must be Poisson; the "target" is the push side and must be anti-Poisson.
"""
import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from errors import ConfigError, StepTooLargeError
from geometry import DiscreteMap, PoissonSystem, ScalarField
from utils import as_state, default_fd_step, fd_jacobian, log_debug

# Fiber bound for the quadratic family, |p| |x| |A| < QUADRATIC_FIBER_LIMIT
QUADRATIC_FIBER_LIMIT = 50.0
# Cayley map is only inverted for |A| < 4
CAYLEY_LIMIT = 4.0


class Orientation(str, Enum):
    SOLVE_ALPHA_PUSH_BETA = "solve_alpha_push_beta"
    SOLVE_BETA_PUSH_ALPHA = "solve_beta_push_alpha"


def _unbounded(x, p):
    return jnp.asarray(True)


@dataclass(frozen=True, eq=False)
class BiRealisation:
    """A pair of maps (alpha, beta) with alpha(x, 0) = beta(x, 0) = x."""
    dim: int
    alpha: Callable
    beta: Callable
    alpha_fiber_jacobian: Optional[Callable] = None
    beta_fiber_jacobian: Optional[Callable] = None
    orientation: Orientation = Orientation.SOLVE_ALPHA_PUSH_BETA
    fiber_ok: Callable = _unbounded
    name: str = ""
    # (orientation, probe defect) pairs recorded by auto_orient
    orientation_probe: Tuple[Tuple[str, float], ...] = ()

    @property
    def source(self) -> Callable:
        """Map solved implicitly by the integrator."""
        if self.orientation is Orientation.SOLVE_ALPHA_PUSH_BETA:
            return self.alpha
        return self.beta

    @property
    def target(self) -> Callable:
        """Map used to push the intermediate point forward."""
        if self.orientation is Orientation.SOLVE_ALPHA_PUSH_BETA:
            return self.beta
        return self.alpha

    def source_fiber_jacobian(self, x, p):
        """d source / d p, analytic when the construction provides it."""
        if self.orientation is Orientation.SOLVE_ALPHA_PUSH_BETA:
            analytic = self.alpha_fiber_jacobian
        else:
            analytic = self.beta_fiber_jacobian
        if analytic is not None:
            return analytic(x, p)
        return jax.jacfwd(lambda q: self.source(x, q))(p)

    def oriented(self, orientation: Orientation) -> "BiRealisation":
        return dataclasses.replace(self, orientation=Orientation(orientation))

    def check_fiber(self, x, p) -> None:
        """Raise StepTooLargeError when (x, p) is outside the validity region."""
        if not bool(self.fiber_ok(jnp.asarray(x), jnp.asarray(p))):
            raise StepTooLargeError(
                f"Fiber value |p|={np.linalg.norm(p):.3e} outside the validity region of {self.name}"
            )

    def source_at(self, x, p) -> np.ndarray:
        x, p = as_state(x, self.dim), as_state(p, self.dim)
        self.check_fiber(x, p)
        return np.asarray(self.source(jnp.asarray(x), jnp.asarray(p)))

    def target_at(self, x, p) -> np.ndarray:
        x, p = as_state(x, self.dim), as_state(p, self.dim)
        self.check_fiber(x, p)
        return np.asarray(self.target(jnp.asarray(x), jnp.asarray(p)))


# ---------------------------------------------------------------------------
# Constructions
# ---------------------------------------------------------------------------

def canonical_symplectic(n_pairs: int) -> BiRealisation:
    """
    Affine bi-realisation of the constant structure [[0, I], [-I, 0]] in (q, p) order:
        alpha = (q - xi_p / 2, p + xi_q / 2),  beta = (q + xi_p / 2, p - xi_q / 2)
    """
    if n_pairs < 1:
        raise ConfigError(f"n_pairs must be at least 1, got {n_pairs}")
    m = n_pairs
    eye = np.eye(m)
    zero = np.zeros((m, m))
    jac_alpha = jnp.asarray(np.block([[zero, -0.5 * eye], [0.5 * eye, zero]]))

    def alpha(x, p):
        return jnp.concatenate([x[:m] - 0.5 * p[m:], x[m:] + 0.5 * p[:m]])

    def beta(x, p):
        return jnp.concatenate([x[:m] + 0.5 * p[m:], x[m:] - 0.5 * p[:m]])

    return BiRealisation(
        dim=2 * m,
        alpha=alpha,
        beta=beta,
        alpha_fiber_jacobian=lambda x, p: jac_alpha,
        beta_fiber_jacobian=lambda x, p: -jac_alpha,
        name=f"canonical_symplectic({n_pairs})",
    )


def quadratic(A) -> BiRealisation:
    """
    Global bi-realisation of pi_ij = a_ij x_i x_j:
        alpha_j = exp(-1/2 sum_i a_ij x_i p_i) x_j
        beta_j  = exp(+1/2 sum_i a_ij x_i p_i) x_j
    Returned with the default orientation; auto_orient decides which side is
    solved (beta, for the bracket fixed above).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"Quadratic structure needs a square matrix, got shape {A.shape}")
    if np.max(np.abs(A + A.T), initial=0.0) != 0.0:
        raise ConfigError("Quadratic structure matrix must be antisymmetric")
    n = A.shape[0]
    a = jnp.asarray(A)
    a_norm = float(np.linalg.norm(A, 2))

    def exponent(x, p):
        return a.T @ (x * p)

    def alpha(x, p):
        return jnp.exp(-0.5 * exponent(x, p)) * x

    def beta(x, p):
        return jnp.exp(0.5 * exponent(x, p)) * x

    # d alpha_j / d p_k = -1/2 alpha_j a_kj x_k
    def alpha_jac(x, p):
        return -0.5 * alpha(x, p)[:, None] * a.T * x[None, :]

    def beta_jac(x, p):
        return 0.5 * beta(x, p)[:, None] * a.T * x[None, :]

    def fiber_ok(x, p):
        return jnp.linalg.norm(p) * jnp.linalg.norm(x) * a_norm < QUADRATIC_FIBER_LIMIT

    return BiRealisation(
        dim=n,
        alpha=alpha,
        beta=beta,
        alpha_fiber_jacobian=alpha_jac,
        beta_fiber_jacobian=beta_jac,
        fiber_ok=fiber_ok,
        name="quadratic",
    )


def hat(v):
    """R^3 -> so(3), hat(v) w = v x w."""
    return jnp.array([[0.0, -v[2], v[1]],
                      [v[2], 0.0, -v[0]],
                      [-v[1], v[0], 0.0]])


def vee(M):
    """Inverse of hat on antisymmetric matrices."""
    return jnp.array([M[2, 1], M[0, 2], M[1, 0]])


def cayley_source_matrix(A, X):
    """(1 + A/4) X (1 - A/4) on antisymmetric matrices."""
    eye = jnp.eye(A.shape[0])
    return (eye + A / 4.0) @ X @ (eye - A / 4.0)


def cayley_target_matrix(A, X):
    """(1 - A/4) X (1 + A/4) on antisymmetric matrices."""
    eye = jnp.eye(A.shape[0])
    return (eye - A / 4.0) @ X @ (eye + A / 4.0)


def cayley_rotation(A):
    """psi(A) = (4 + A)(4 - A)^-1, orthogonal for antisymmetric A with |A| < 4."""
    eye = jnp.eye(A.shape[0])
    return jnp.linalg.solve((eye - A / 4.0).T, (eye + A / 4.0).T).T


def fiber_generator(p):
    """Antisymmetric matrix attached to a fiber covector; |A| = 2 |p|."""
    return hat(2.0 * p)


def so3_cayley() -> BiRealisation:
    """
    Lie-Poisson bi-realisation of so(3)* built from the Cayley map, exposed over R^3.
    pi(x) = hat(x), so {x_1, x_2} = -x_3.
    """
    def alpha(x, p):
        return vee(cayley_source_matrix(fiber_generator(p), hat(x)))

    def beta(x, p):
        return vee(cayley_target_matrix(fiber_generator(p), hat(x)))

    def fiber_ok(x, p):
        return 2.0 * jnp.linalg.norm(p) < CAYLEY_LIMIT

    return BiRealisation(dim=3, alpha=alpha, beta=beta, fiber_ok=fiber_ok, name="so3_cayley")


# ---------------------------------------------------------------------------
# Axiom checks
# ---------------------------------------------------------------------------

def _split_jacobian(fn: Callable, n: int, x: np.ndarray, p: np.ndarray,
                    fd_step: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Finite-difference partials (d/dx, d/dp) of a map (x, p) -> R^n."""
    z = np.concatenate([x, p])
    step = default_fd_step(z) if fd_step is None else fd_step
    jac = fd_jacobian(lambda w: fn(jnp.asarray(w[:n]), jnp.asarray(w[n:])), z, step)
    return jac[:, :n], jac[:, n:]


def canonical_bracket_matrix(jx_u, jp_u, jx_v, jp_v) -> np.ndarray:
    """Matrix of brackets {u_i, v_j} from the partials of two coordinate maps."""
    return jx_u @ jp_v.T - jp_u @ jx_v.T


def check_unit(b: BiRealisation, xs: Iterable) -> float:
    """Max over xs of |alpha(x, 0) - x| + |beta(x, 0) - x|."""
    worst = 0.0
    zero = jnp.zeros(b.dim)
    for x in xs:
        x = as_state(x, b.dim)
        xj = jnp.asarray(x)
        defect = np.linalg.norm(np.asarray(b.alpha(xj, zero)) - x) + \
            np.linalg.norm(np.asarray(b.beta(xj, zero)) - x)
        worst = max(worst, float(defect))
    return worst


def _bracket_defect(b: BiRealisation, system: PoissonSystem, fn: Callable, sign: float,
                    samples: Sequence, fd_step: Optional[float]) -> float:
    if system.dim != b.dim:
        raise ConfigError(f"Realisation has dim {b.dim}, system has dim {system.dim}")
    n = b.dim
    worst = 0.0
    for x, p in samples:
        x, p = as_state(x, n), as_state(p, n)
        jx, jp = _split_jacobian(fn, n, x, p, fd_step)
        brackets = canonical_bracket_matrix(jx, jp, jx, jp)
        image = np.asarray(fn(jnp.asarray(x), jnp.asarray(p)))
        defect = brackets - sign * system.tensor.matrix(image)
        worst = max(worst, float(np.max(np.abs(defect))))
    return worst


def check_source_poisson(b: BiRealisation, system: PoissonSystem, samples: Sequence,
                         fd_step: Optional[float] = None) -> float:
    """Max |{s_i, s_j} - pi_ij(s)| over samples, s the oriented source."""
    return _bracket_defect(b, system, b.source, 1.0, samples, fd_step)


def check_target_antipoisson(b: BiRealisation, system: PoissonSystem, samples: Sequence,
                             fd_step: Optional[float] = None) -> float:
    """Max |{t_i, t_j} + pi_ij(t)| over samples, t the oriented target."""
    return _bracket_defect(b, system, b.target, -1.0, samples, fd_step)


def check_fiber_orthogonality(b: BiRealisation, samples: Sequence,
                              fd_step: Optional[float] = None) -> float:
    """Max |{alpha_i, beta_j}| over samples."""
    n = b.dim
    worst = 0.0
    for x, p in samples:
        x, p = as_state(x, n), as_state(p, n)
        ax, ap = _split_jacobian(b.alpha, n, x, p, fd_step)
        bx, bp = _split_jacobian(b.beta, n, x, p, fd_step)
        worst = max(worst, float(np.max(np.abs(canonical_bracket_matrix(ax, ap, bx, bp)))))
    return worst


# ---------------------------------------------------------------------------
# Bisections and orientation
# ---------------------------------------------------------------------------

def bisection_map(b: BiRealisation, generator: ScalarField, tol: float = 1e-14,
                  max_iter: int = 100) -> DiscreteMap:
    """
    The map x -> target(y, grad F(y)) with y solving source(y, grad F(y)) = x.
    For a Lagrangian graph this is a Poisson diffeomorphism.
    """
    source, target, grad = b.source, b.target, generator.gradient

    @jax.jit
    def residual(y, x):
        return source(y, grad(y)) - x

    @jax.jit
    def push(y):
        return target(y, grad(y))

    def apply(x):
        x = as_state(x, b.dim)
        scale = tol * (1.0 + np.linalg.norm(x))
        y = x.copy()
        for _ in range(max_iter):
            b.check_fiber(y, np.asarray(grad(jnp.asarray(y))))
            r = np.asarray(residual(jnp.asarray(y), jnp.asarray(x)))
            if not np.all(np.isfinite(r)):
                raise StepTooLargeError("Non-finite residual while inverting the source map")
            y = y - r
            if np.linalg.norm(r) <= scale:
                return np.asarray(push(jnp.asarray(y)))
        raise StepTooLargeError(f"Source map inversion did not converge in {max_iter} iterations")

    return DiscreteMap(dim=b.dim, apply=apply, name=f"bisection[{b.name}]")


def auto_orient(b: BiRealisation, system: PoissonSystem, x0, h_probe: float = 1e-4) -> BiRealisation:
    """
    Pick the orientation whose order-1 step from x0 is first-order consistent
    with pi grad H. The probe defect |x1 - x0 - h pi grad H(x0)| is O(h^2) for
    the consistent orientation and O(h) for the other one.
    """
    if not np.isfinite(h_probe) or h_probe <= 0.0:
        raise ConfigError(f"Probe step must be positive, got {h_probe}")
    if system.dim != b.dim:
        raise ConfigError(f"Realisation has dim {b.dim}, system has dim {system.dim}")
    x0 = as_state(x0, b.dim)
    velocity = np.asarray(system.vector_field(jnp.asarray(x0)))
    generator = ScalarField(
        dim=b.dim,
        value=lambda y: h_probe * system.hamiltonian.value(y),
        gradient=lambda y: h_probe * system.hamiltonian.gradient(y),
        name="probe",
    )
    allowed = 0.5 * h_probe * np.linalg.norm(velocity) + 1e-12 * (1.0 + np.linalg.norm(x0))

    # The current orientation is probed first and wins ties
    order = [b.orientation] + [o for o in Orientation if o is not b.orientation]
    defects = []
    for orientation in order:
        candidate = b.oriented(orientation)
        try:
            x1 = bisection_map(candidate, generator)(x0)
            defect = float(np.linalg.norm(x1 - x0 - h_probe * velocity))
        except StepTooLargeError:
            defect = float("inf")
        defects.append((orientation, defect))
        log_debug(f"orientation probe {orientation.value}: defect {defect:.3e} (allowed {allowed:.3e})")

    best, best_defect = min(defects, key=lambda item: item[1])
    if not best_defect <= allowed:
        raise ConfigError(
            f"No orientation of {b.name} is consistent with the system "
            f"(best defect {best_defect:.3e}, allowed {allowed:.3e})"
        )
    probe = tuple((o.value, d) for o, d in defects)
    return dataclasses.replace(b, orientation=best, orientation_probe=probe)
