"""
Hamilton-Jacobi generating series and the PHI stepping scheme.

Step 1 builds S_1 = H and the recursion
    S_{i+1}(m) = d^i/dt^i |_{t=0} H(source(m, grad S_t(m))),   S_t = sum_{j<=i} t^j/j! S_j
with t-derivatives taken by forward-mode jets (nested jax.jvp) and m-gradients
by reverse mode on top of them.

Step 2 advances a state: solve source(y, P(y, h)) = x_n for y, then push
x_{n+1} = target(y, P(y, h)), where P is the generating gradient.
"""
from dataclasses import dataclass
from math import factorial
from typing import Dict, Literal, Optional, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from birealisations import BiRealisation, cayley_rotation, check_unit, fiber_generator
from errors import BlowUpError, ConfigError, StepTooLargeError
from geometry import DiscreteMap, PoissonSystem, ScalarField
from guardrails import StateGuardrails
from settings import get_settings
from stats_tracker import record_step
from trajectory import Termination, TrajectoryRecord, build_record
from utils import as_state, fd_jacobian, is_verbose, log_debug, log_warning

MAX_ORDER = 3
# Damped Newton halves its step at most this many times per iteration
MAX_HALVINGS = 5


class StepperConfig(BaseModel):
    """Timestep, order and implicit-solve options of a PHI stepper."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(gt=0)
    order: int = Field(default=1, ge=1, le=MAX_ORDER)
    fp_tol: float = Field(default=1e-14, gt=0)
    fp_max_iter: int = Field(default=100, ge=2)
    newton_fallback: bool = True
    # "plain": P = sum h^i grad S_i ; "taylor": P = sum h^i / i! grad S_i
    weighting: Literal["plain", "taylor"] = "plain"


@dataclass(frozen=True, eq=False)
class GeneratingSeries:
    """Coefficients S_1..S_k of the Hamilton-Jacobi transform of H."""
    order: int
    coeffs: Tuple[ScalarField, ...]
    system: PoissonSystem
    bireal: BiRealisation

    def step_gradient(self, y, h, weighting: str = "plain"):
        """Traceable P(y, h)."""
        total = jnp.zeros_like(y)
        for i, coeff in enumerate(self.coeffs, start=1):
            weight = h ** i if weighting == "plain" else h ** i / factorial(i)
            total = total + weight * coeff.gradient(y)
        return total


def _t_derivative(fn):
    """d/dt of fn(t, m), by a forward-mode jet in t."""
    def derivative(t, m):
        return jax.jvp(lambda s: fn(s, m), (t,), (jnp.ones_like(t),))[1]
    return derivative


def _next_coefficient(hamiltonian, source, gradients):
    """S_{i+1} from the gradients of S_1..S_i."""
    i = len(gradients)

    def along(t, m):
        p = jnp.zeros_like(m)
        for j, grad in enumerate(gradients, start=1):
            p = p + t ** j / factorial(j) * grad(m)
        return hamiltonian(source(m, p))

    derivative = along
    for _ in range(i):
        derivative = _t_derivative(derivative)

    def value(m):
        return derivative(jnp.zeros((), dtype=m.dtype), m)

    return value


def compute_series(system: PoissonSystem, b: BiRealisation, k: int) -> GeneratingSeries:
    """Hamilton-Jacobi coefficients S_1..S_k for (system, oriented realisation)."""
    if not 1 <= k <= MAX_ORDER:
        raise ConfigError(f"Series order must be between 1 and {MAX_ORDER}, got {k}")
    if system.dim != b.dim:
        raise ConfigError(f"Realisation has dim {b.dim}, system has dim {system.dim}")
    probes = [np.zeros(b.dim), np.ones(b.dim)]
    if check_unit(b, probes) != 0.0:
        raise ConfigError(f"{b.name} does not restrict to the identity on the zero fiber")

    hamiltonian = system.hamiltonian.value
    values = [hamiltonian]
    gradients = [jax.grad(hamiltonian)]
    for _ in range(1, k):
        value = _next_coefficient(hamiltonian, b.source, tuple(gradients))
        values.append(value)
        gradients.append(jax.grad(value))

    coeffs = tuple(
        ScalarField(dim=system.dim, value=jax.jit(v), gradient=jax.jit(g), name=f"S{i}")
        for i, (v, g) in enumerate(zip(values, gradients), start=1)
    )
    log_debug(f"generating series of order {k} built for {system.name} with {b.name}")
    return GeneratingSeries(order=k, coeffs=coeffs, system=system, bireal=b)


def eval_generating_gradient(s: GeneratingSeries, y, h: float, weighting: str = "plain") -> np.ndarray:
    """P(y, h) = sum_i h^i grad S_i(y)."""
    y = as_state(y, s.system.dim)
    return np.asarray(s.step_gradient(jnp.asarray(y), h, weighting))


# ---------------------------------------------------------------------------
# Closed forms on the doubled space
# ---------------------------------------------------------------------------

def _omega_bracket(F, G):
    """Canonical bracket of two functions of (x, p)."""
    def bracket(x, p):
        fx, fp = jax.grad(F, argnums=(0, 1))(x, p)
        gx, gp = jax.grad(G, argnums=(0, 1))(x, p)
        return fx @ gp - fp @ gx
    return bracket


def _closed_s2_function(system: PoissonSystem, b: BiRealisation):
    grad_h = system.hamiltonian.gradient

    def s2(m):
        # {source* H, tau* S_1} at p = 0 is -grad H^T (d source / d p) grad S_1
        jp = b.source_fiber_jacobian(m, jnp.zeros_like(m))
        return -0.5 * grad_h(m) @ jp @ grad_h(m)
    return s2


def closed_form_S2(system: PoissonSystem, b: BiRealisation, x) -> float:
    """Zero-section pullback of 1/2 {source* H, tau* S_1}, evaluated at x."""
    x = as_state(x, system.dim)
    return float(_closed_s2_function(system, b)(jnp.asarray(x)))


def closed_form_S3(system: PoissonSystem, b: BiRealisation, x) -> float:
    """Zero-section pullback of 1/3 {source* H, tau* S_2} + 1/6 {{source* H, tau* S_1}, tau* S_1}, evaluated at x."""
    x = jnp.asarray(as_state(x, system.dim))
    hamiltonian = system.hamiltonian.value
    s2 = _closed_s2_function(system, b)

    def pulled_h(m, p):
        return hamiltonian(b.source(m, p))

    def tau_s1(m, p):
        return hamiltonian(m)

    def tau_s2(m, p):
        return s2(m)

    first = _omega_bracket(pulled_h, tau_s2)
    second = _omega_bracket(_omega_bracket(pulled_h, tau_s1), tau_s1)
    zero = jnp.zeros_like(x)
    return float(first(x, zero) / 3.0 + second(x, zero) / 6.0)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    y: np.ndarray
    iterations: int
    residual: float
    newton_iterations: int = 0


@dataclass
class StepResult:
    x_next: np.ndarray
    iterations: int
    residual: float
    newton_iterations: int = 0


class PhiStepper:
    """An oriented bi-realisation, its generating series and solver options."""

    def __init__(self, bireal: BiRealisation, series: GeneratingSeries, config: StepperConfig,
                 tracker: Optional[Dict] = None):
        if series.bireal is not bireal:
            raise ConfigError("Generating series was built from a different bi-realisation")
        if series.order != config.order:
            raise ConfigError(f"Series order {series.order} does not match stepper order {config.order}")
        self.bireal = bireal
        self.series = series
        self.config = config
        self.system = series.system
        self.tracker = tracker
        self._build_kernels()

    def _build_kernels(self) -> None:
        source, target = self.bireal.source, self.bireal.target
        fiber_ok = self.bireal.fiber_ok
        weighting = self.config.weighting
        tol = self.config.fp_tol
        budget = self.config.fp_max_iter
        if self.config.newton_fallback:
            budget = self.config.fp_max_iter // 2

        def gradient(y, h):
            return self.series.step_gradient(y, h, weighting)

        def residual(y, x_n, h):
            return source(y, gradient(y, h)) - x_n

        def push(y, h):
            return target(y, gradient(y, h))

        def fixed_point(x_n, h):
            scale = tol * (1.0 + jnp.linalg.norm(x_n))

            def cond(carry):
                _, increment, it, finite, inside = carry
                return finite & inside & (increment > scale) & (it < budget)

            def body(carry):
                y, _, it, _, _ = carry
                p = gradient(y, h)
                r = source(y, p) - x_n
                increment = jnp.linalg.norm(r)
                return y - r, increment, it + 1, jnp.isfinite(increment), fiber_ok(y, p)

            init = (x_n, jnp.asarray(jnp.inf, dtype=x_n.dtype), jnp.asarray(0),
                    jnp.asarray(True), jnp.asarray(True))
            y, increment, it, finite, inside = lax.while_loop(cond, body, init)
            converged = finite & inside & (increment <= scale)
            res = jnp.linalg.norm(residual(y, x_n, h))
            return y, push(y, h), res, it, converged, finite, inside

        self._fixed_point = jax.jit(fixed_point)
        self._residual = jax.jit(residual)
        self._push = jax.jit(push)
        self._inside = jax.jit(lambda y, h: fiber_ok(y, gradient(y, h)))
        self._fp_budget = budget

    def _newton(self, y: np.ndarray, x_n: np.ndarray, h: float, budget: int) -> Tuple[np.ndarray, int, float]:
        """Damped Newton on source(y, P(y, h)) = x_n with a finite-difference Jacobian."""
        scale = self.config.fp_tol * (1.0 + np.linalg.norm(x_n))
        xj = jnp.asarray(x_n)

        def residual(z):
            return np.asarray(self._residual(jnp.asarray(z), xj, h))

        r = residual(y)
        norm_r = float(np.linalg.norm(r))
        if not np.isfinite(norm_r):
            raise BlowUpError("Non-finite residual when starting the Newton fallback")
        for it in range(1, budget + 1):
            jac = fd_jacobian(residual, y)
            try:
                delta = np.linalg.solve(jac, -r)
            except np.linalg.LinAlgError as exc:
                raise StepTooLargeError(f"Singular Newton system: {exc}") from exc
            damping = 1.0
            for _ in range(MAX_HALVINGS + 1):
                candidate = y + damping * delta
                r_candidate = residual(candidate)
                norm_candidate = float(np.linalg.norm(r_candidate))
                if (np.isfinite(norm_candidate) and norm_candidate < norm_r
                        and bool(self._inside(jnp.asarray(candidate), h))):
                    break
                damping *= 0.5
            else:
                raise StepTooLargeError("Damped Newton step made no progress")
            y, r, norm_r = candidate, r_candidate, norm_candidate
            if norm_r <= scale:
                return y, it, norm_r
        raise StepTooLargeError(f"Newton fallback did not converge in {budget} iterations")

    def solve(self, x_n, h: Optional[float] = None) -> SolveResult:
        """Solve source(y, P(y, h)) = x_n."""
        h = self.config.dt if h is None else float(h)
        x_n = as_state(x_n, self.system.dim)
        if h == 0.0:
            return SolveResult(y=x_n.copy(), iterations=1, residual=0.0)
        if not np.all(np.isfinite(x_n)):
            raise BlowUpError("Cannot step from a non-finite state")

        y, _, res, it, converged, finite, inside = self._fixed_point(jnp.asarray(x_n), h)
        return self._settle(x_n, h, y, res, it, converged, finite, inside)

    def _settle(self, x_n: np.ndarray, h: float, y, res, it, converged, finite, inside) -> SolveResult:
        """Accept a fixed-point outcome or continue from its last iterate with Newton."""
        it = int(it)
        if not bool(finite):
            raise BlowUpError(f"Fixed-point iterate became non-finite after {it} iterations")
        if not bool(inside):
            raise StepTooLargeError("Fixed-point iterate left the fiber validity region")
        if bool(converged):
            return SolveResult(y=np.asarray(y), iterations=it, residual=float(res))
        if not self.config.newton_fallback:
            raise StepTooLargeError(
                f"Fixed point did not converge in {it} iterations; the time step is too large"
            )

        log_debug(f"fixed point stalled after {it} iterations, switching to damped Newton")
        remaining = self.config.fp_max_iter - it
        y_newton, newton_its, res = self._newton(np.asarray(y), x_n, h, remaining)
        return SolveResult(y=y_newton, iterations=it + newton_its, residual=res,
                           newton_iterations=newton_its)

    def step(self, x_n, h: Optional[float] = None) -> StepResult:
        """One PHI step with solver diagnostics."""
        h = self.config.dt if h is None else float(h)
        x_n = as_state(x_n, self.system.dim)
        if h == 0.0:
            return StepResult(x_next=x_n.copy(), iterations=1, residual=0.0)
        if not np.all(np.isfinite(x_n)):
            raise BlowUpError("Cannot step from a non-finite state")

        # Fast path: one compiled call solves and pushes
        y, x_next, res, it, converged, finite, inside = self._fixed_point(jnp.asarray(x_n), h)
        if bool(converged):
            result = StepResult(x_next=np.asarray(x_next), iterations=int(it), residual=float(res))
        else:
            solved = self._settle(x_n, h, y, res, it, converged, finite, inside)
            x_next = np.asarray(self._push(jnp.asarray(solved.y), h))
            result = StepResult(x_next=x_next, iterations=solved.iterations,
                                residual=solved.residual, newton_iterations=solved.newton_iterations)
        if not np.all(np.isfinite(result.x_next)):
            raise BlowUpError("Push map produced a non-finite state")
        if self.tracker is not None:
            record_step(self.tracker, result.iterations - result.newton_iterations,
                        result.newton_iterations, result.residual)
        return result

    def as_map(self, h: Optional[float] = None) -> DiscreteMap:
        """The step as a DiscreteMap, for residual checks."""
        return DiscreteMap(dim=self.system.dim, apply=lambda x: self.step(x, h).x_next,
                           name=f"phi{self.config.order}")


def build_stepper(system: PoissonSystem, b: BiRealisation, config: StepperConfig,
                  tracker: Optional[Dict] = None) -> PhiStepper:
    """Compute the generating series of the configured order and wrap it in a stepper."""
    series = compute_series(system, b, config.order)
    return PhiStepper(b, series, config, tracker)


def solve_intermediate(st: PhiStepper, x_n, h: Optional[float] = None) -> np.ndarray:
    """The intermediate point y_n of Step 2."""
    return st.solve(x_n, h).y


def phi_step(st: PhiStepper, x_n, h: Optional[float] = None) -> np.ndarray:
    """x_{n+1} = target(y_n, P(y_n, h))."""
    return st.step(x_n, h).x_next


def coadjoint_step(st: PhiStepper, x_n, h: Optional[float] = None) -> np.ndarray:
    """
    Order-1 Lie-Poisson step written as a coadjoint action:
    x_{n+1} = Q^T x_n with Q the Cayley rotation of the fiber value at y_n.
    """
    if st.system.dim != 3 or st.config.order != 1:
        raise ConfigError("The coadjoint form is only available for order-1 so(3) steppers")
    h = st.config.dt if h is None else float(h)
    x_n = as_state(x_n, 3)
    y = solve_intermediate(st, x_n, h)
    p = st.series.step_gradient(jnp.asarray(y), h, st.config.weighting)
    rotation = np.asarray(cayley_rotation(fiber_generator(p)))
    return rotation.T @ x_n


def integrate(st: PhiStepper, x0, n_steps: int, guard: Optional[StateGuardrails] = None,
              h: Optional[float] = None) -> TrajectoryRecord:
    """
    Iterate phi_step and record diagnostics. Stops early on blow-up or on a
    step that cannot be solved; the partial record carries the reason.
    `h` overrides the configured timestep without recompiling the stepper.
    """
    if n_steps < 0:
        raise ConfigError(f"Number of steps must be non-negative, got {n_steps}")
    guard = guard or StateGuardrails()
    dt = st.config.dt if h is None else float(h)
    is_ok, msg = guard.check_timestep(dt)
    if not is_ok:
        raise ConfigError(msg)
    x0 = as_state(x0, st.system.dim)
    is_ok, msg = guard.check_state(x0)
    if not is_ok:
        raise ConfigError(f"Invalid initial state: {msg}")
    if not st.system.in_domain(x0):
        raise ConfigError(f"Initial state {x0.tolist()} is outside the domain of {st.system.name or 'the system'}")

    states = [x0]
    iterations = [0]
    residuals = [0.0]
    termination, reason = Termination.COMPLETED, ""
    show_progress = is_verbose() or get_settings().progress
    for _ in tqdm(range(n_steps), desc=f"PHI-{st.config.order}", disable=not show_progress):
        try:
            result = st.step(states[-1], dt)
        except BlowUpError as exc:
            termination, reason = Termination.BLOW_UP, str(exc)
            break
        except StepTooLargeError as exc:
            termination, reason = guard.classify_failure(x0, states[-1]), str(exc)
            break
        is_ok, msg = guard.check_state(result.x_next)
        if not is_ok:
            termination, reason = Termination.BLOW_UP, msg
            break
        states.append(result.x_next)
        iterations.append(result.iterations)
        residuals.append(result.residual)

    if termination is not Termination.COMPLETED:
        t_stop = (len(states) - 1) * dt
        log_warning(f"PHI-{st.config.order} stopped at t={t_stop:.6g} ({termination.value}): {reason}")
        if st.tracker is not None:
            key = "blow_ups" if termination is Termination.BLOW_UP else "step_too_large"
            st.tracker[key] += 1
    return build_record(st.system, dt, states, iterations, residuals,
                        termination, reason, method=f"phi{st.config.order}")
