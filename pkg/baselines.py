"""
Classical integrators, closed-form maps and the reference-solution oracle
used to judge the PHI schemes.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax
from tqdm import tqdm

from errors import BlowUpError, ConfigError, StepTooLargeError
from geometry import PoissonSystem
from guardrails import StateGuardrails
from settings import get_settings
from trajectory import Termination, TrajectoryRecord, build_record
from utils import as_state, is_verbose, log_debug, log_warning

DEFAULT_REFERENCE_TOL = 1e-12
DEFAULT_CHECKPOINTS = 100
MAX_DOUBLINGS = 14
# Jitted kernels kept per PoissonSystem instance
KERNEL_CACHE_SIZE = 32


# ---------------------------------------------------------------------------
# Explicit and implicit one-step methods
# ---------------------------------------------------------------------------

def _rk4_increment(field: Callable, x, h):
    k1 = field(x)
    k2 = field(x + 0.5 * h * k1)
    k3 = field(x + 0.5 * h * k2)
    k4 = field(x + h * k3)
    return h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@lru_cache(maxsize=KERNEL_CACHE_SIZE)
def _explicit_kernels(system: PoissonSystem) -> Dict[str, Callable]:
    field = system.vector_field

    def euler(x, h):
        return x + h * field(x)

    def rk2(x, h):
        # explicit midpoint tableau
        return x + h * field(x + 0.5 * h * field(x))

    def rk4(x, h):
        return x + _rk4_increment(field, x, h)

    return {"euler": jax.jit(euler), "rk2": jax.jit(rk2), "rk4": jax.jit(rk4)}


def _explicit(system: PoissonSystem, scheme: str, x, h: float) -> np.ndarray:
    x = as_state(x, system.dim)
    if h == 0.0:
        return x.copy()
    x_next = np.asarray(_explicit_kernels(system)[scheme](jnp.asarray(x), float(h)))
    if not np.all(np.isfinite(x_next)):
        raise BlowUpError(f"{scheme} step produced a non-finite state")
    return x_next


def explicit_euler_step(system: PoissonSystem, x, h: float) -> np.ndarray:
    return _explicit(system, "euler", x, h)


def rk2_step(system: PoissonSystem, x, h: float) -> np.ndarray:
    """Explicit midpoint: x + h F(x + h/2 F(x))."""
    return _explicit(system, "rk2", x, h)


def rk4_step(system: PoissonSystem, x, h: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step."""
    return _explicit(system, "rk4", x, h)


@lru_cache(maxsize=KERNEL_CACHE_SIZE)
def _implicit_kernel(system: PoissonSystem, scheme: str, tol: float, max_iter: int) -> Callable:
    field = system.vector_field

    if scheme == "midpoint":
        def update(x, z, h):
            return x + h * field(0.5 * (x + z))
    else:
        def update(x, z, h):
            return x + h * field(z)

    def solve(x, h):
        scale = tol * (1.0 + jnp.linalg.norm(x))

        def cond(carry):
            _, increment, it = carry
            return jnp.isfinite(increment) & (increment > scale) & (it < max_iter)

        def body(carry):
            z, _, it = carry
            z_new = update(x, z, h)
            return z_new, jnp.linalg.norm(z_new - z), it + 1

        init = (x, jnp.asarray(jnp.inf, dtype=x.dtype), jnp.asarray(0))
        return lax.while_loop(cond, body, init)

    return jax.jit(solve)


def _implicit(system: PoissonSystem, scheme: str, x, h: float, tol: float, max_iter: int) -> np.ndarray:
    x = as_state(x, system.dim)
    if h == 0.0:
        return x.copy()
    z, increment, it = _implicit_kernel(system, scheme, float(tol), int(max_iter))(jnp.asarray(x), float(h))
    increment = float(increment)
    if not np.isfinite(increment) or not np.all(np.isfinite(np.asarray(z))):
        raise BlowUpError(f"{scheme} iterate became non-finite")
    if increment > tol * (1.0 + np.linalg.norm(x)):
        raise StepTooLargeError(f"{scheme} fixed point did not converge in {int(it)} iterations")
    return np.asarray(z)


def implicit_euler_step(system: PoissonSystem, x, h: float, tol: float = 1e-14,
                        max_iter: int = 100) -> np.ndarray:
    """x' = x + h F(x'), solved by fixed-point iteration."""
    return _implicit(system, "implicit_euler", x, h, tol, max_iter)


def _require_constant_canonical(system: PoissonSystem, x: np.ndarray) -> None:
    n = system.dim
    if n % 2:
        raise ConfigError(f"Symplectic midpoint needs an even dimension, got {n}")
    m = n // 2
    canonical = np.block([[np.zeros((m, m)), np.eye(m)], [-np.eye(m), np.zeros((m, m))]])
    for probe in (x, x + 1.0, x - 1.0):
        if not np.array_equal(system.tensor.matrix(probe), canonical):
            raise ConfigError(f"Symplectic midpoint needs the constant canonical structure, {system.name} has another")


def symplectic_midpoint_step(system: PoissonSystem, x, h: float, tol: float = 1e-14,
                             max_iter: int = 100) -> np.ndarray:
    """Implicit midpoint x' = x + h F((x + x') / 2) for constant canonical structures."""
    x = as_state(x, system.dim)
    _require_constant_canonical(system, x)
    return _implicit(system, "midpoint", x, h, tol, max_iter)


# ---------------------------------------------------------------------------
# Closed-form maps
# ---------------------------------------------------------------------------

def quad_example_flow(x, t: float) -> np.ndarray:
    """Exact flow of the quad-example system: x and y - z are conserved, so the velocity is constant."""
    x_, y, z = as_state(x, 3)
    radius = 0.5 * (x_ ** 2 + (y - z) ** 2)
    shift = 0.5 * t * radius * (x_ + y - z)
    return np.array([x_, y + shift, z + shift])


def leaf_breaking_map(x, dt: float, k: int) -> np.ndarray:
    """
    exp(dt^k) times the exact time-dt flow of quad-example.

    The structure is homogeneous of degree two, so scaling is a Poisson
    automorphism and the composite is a Poisson map of order k. Scaling moves
    x - y + z, so the map jumps between leaves.
    """
    if k < 1:
        raise ConfigError(f"Order k must be at least 1, got {k}")
    return np.exp(dt ** k) * quad_example_flow(x, dt)


def printed_leaf_breaking_map(x, dt: float, k: int) -> np.ndarray:
    """
    Rotation-based closed form rotating (x - y + z, x + y - z). Kept for
    comparison: it is not a Poisson map of that structure.
    """
    if k < 1:
        raise ConfigError(f"Order k must be at least 1, got {k}")
    x_, y, z = as_state(x, 3)
    u = x_ - y + z
    v = x_ + y - z
    w = -x_ + y + z
    angle = dt * (u ** 2 + v ** 2) / 4.0
    c, s = np.cos(angle), np.sin(angle)
    scale = np.exp(dt ** k)
    return np.array([
        x_ * c + y * s - z * s,
        -u / 2.0 * s + w / 2.0 * scale + v / 2.0 * c,
        w / 2.0 * scale + u / 2.0 * c + v / 2.0 * s,
    ])


def lotka_volterra_printed_step(x, h: float, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """
    Two-step exponential update for the three-species Lotka-Volterra system,
    written out coordinate by coordinate:
        solve  exp(-h/2 (y2 + y3)) y1 = x1,  exp(h/2 (y1 - y3)) y2 = x2,  exp(h/2 (y1 + y2)) y3 = x3
        push   x1' = exp(h/2 (y2 + y3)) y1,  x2' = exp(h/2 (y3 - y1)) y2,  x3' = exp(-h/2 (y1 + y2)) y3
    """
    x = as_state(x, 3)
    scale = tol * (1.0 + np.linalg.norm(x))
    y = x.copy()
    for _ in range(max_iter):
        y_new = np.array([
            x[0] * np.exp(0.5 * h * (y[1] + y[2])),
            x[1] * np.exp(-0.5 * h * (y[0] - y[2])),
            x[2] * np.exp(-0.5 * h * (y[0] + y[1])),
        ])
        if not np.all(np.isfinite(y_new)):
            raise BlowUpError("Lotka-Volterra intermediate point became non-finite")
        converged = np.linalg.norm(y_new - y) <= scale
        y = y_new
        if converged:
            break
    else:
        raise StepTooLargeError(f"Lotka-Volterra intermediate point did not converge in {max_iter} iterations")
    return np.array([
        np.exp(0.5 * h * (y[1] + y[2])) * y[0],
        np.exp(0.5 * h * (y[2] - y[0])) * y[1],
        np.exp(-0.5 * h * (y[0] + y[1])) * y[2],
    ])


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def run_explicit(system: PoissonSystem, step: Callable, x0, h: float, n_steps: int,
                 guard: Optional[StateGuardrails] = None, method: str = "") -> TrajectoryRecord:
    """
    Iterate `step(x, h)` n_steps times with the shared blow-up rules.
    Explicit schemes report zero solver iterations.
    """
    if n_steps < 0:
        raise ConfigError(f"Number of steps must be non-negative, got {n_steps}")
    guard = guard or StateGuardrails()
    is_ok, msg = guard.check_timestep(h)
    if not is_ok:
        raise ConfigError(msg)
    x0 = as_state(x0, system.dim)
    is_ok, msg = guard.check_state(x0)
    if not is_ok:
        raise ConfigError(f"Invalid initial state: {msg}")
    if not system.in_domain(x0):
        raise ConfigError(f"Initial state {x0.tolist()} is outside the domain of {system.name or 'the system'}")

    states = [x0]
    termination, reason = Termination.COMPLETED, ""
    show_progress = is_verbose() or get_settings().progress
    for _ in tqdm(range(n_steps), desc=method or "explicit", disable=not show_progress):
        try:
            x_next = step(states[-1], h)
        except BlowUpError as exc:
            termination, reason = Termination.BLOW_UP, str(exc)
            break
        except StepTooLargeError as exc:
            termination, reason = guard.classify_failure(x0, states[-1]), str(exc)
            break
        is_ok, msg = guard.check_state(x_next)
        if not is_ok:
            termination, reason = Termination.BLOW_UP, msg
            break
        states.append(np.asarray(x_next, dtype=np.float64))

    if termination is not Termination.COMPLETED:
        log_warning(f"{method or 'explicit run'} stopped at t={(len(states) - 1) * h:.6g} "
                    f"({termination.value}): {reason}")
    count = len(states)
    return build_record(system, h, states, [0] * count, [0.0] * count, termination, reason, method)


# ---------------------------------------------------------------------------
# Reference oracle
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    """States at uniform checkpoints, truncated at a detected blow-up."""
    times: np.ndarray
    states: np.ndarray
    blow_up_time: Optional[float]
    last_finite_time: float
    achieved_tol: float
    converged: bool
    steps_per_checkpoint: int

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        """State at a checkpoint time."""
        if self.blow_up_time is not None and t > self.last_finite_time:
            raise BlowUpError(f"Reference solution blew up at t={self.blow_up_time:.6g}, before t={t:.6g}")
        span = max(1.0, float(self.times[-1]))
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * span:
            raise ConfigError(f"t={t} is not a reference checkpoint")
        return self.states[idx]


@lru_cache(maxsize=KERNEL_CACHE_SIZE)
def _rk4_sweep(system: PoissonSystem, threshold: float) -> Callable:
    """Jitted RK4 over n_cp checkpoints of m steps each, halting at blow-up."""
    field = system.vector_field

    def segment(x, h, m, alive):
        def cond(carry):
            _, i, ok = carry
            return ok & (i < m)

        def body(carry):
            z, i, _ = carry
            z_new = z + _rk4_increment(field, z, h)
            ok = jnp.all(jnp.isfinite(z_new)) & (jnp.linalg.norm(z_new) <= threshold)
            return jnp.where(ok, z_new, z), i + 1, ok

        return lax.while_loop(cond, body, (x, jnp.asarray(0), alive))

    def sweep(x0, h, m, n_cp):
        def checkpoint(carry, _):
            x, alive, steps = carry
            z, i, ok = segment(x, h, m, alive)
            steps = steps + jnp.where(ok, i, jnp.maximum(i - 1, 0))
            return (z, ok, steps), jnp.where(ok, z, jnp.nan)

        init = (x0, jnp.asarray(True), jnp.asarray(0))
        (_, alive, steps), states = lax.scan(checkpoint, init, None, length=n_cp)
        return states, alive, steps

    return jax.jit(sweep, static_argnums=3)


def reference_solution(system: PoissonSystem, x0, T: float, tol: float = DEFAULT_REFERENCE_TOL,
                       n_checkpoints: int = DEFAULT_CHECKPOINTS, max_doublings: int = MAX_DOUBLINGS,
                       guard: Optional[StateGuardrails] = None) -> ReferenceSolution:
    """
    RK4 with step halving until two successive refinements agree at every
    finite checkpoint to tol * (1 + max state norm).

    A trajectory whose norm exceeds the blow-up threshold is cut there; the
    blow-up time is the time of the first step past the threshold.
    """
    guard = guard or StateGuardrails()
    x0 = as_state(x0, system.dim)
    if not np.isfinite(T) or T < 0.0:
        raise ConfigError(f"Reference horizon must be finite and non-negative, got {T}")
    if n_checkpoints < 1:
        raise ConfigError(f"Need at least one checkpoint, got {n_checkpoints}")
    is_ok, msg = guard.check_state(x0)
    if not is_ok:
        raise ConfigError(f"Invalid initial state: {msg}")
    if T == 0.0:
        return ReferenceSolution(times=np.zeros(1), states=x0[None, :], blow_up_time=None,
                                 last_finite_time=0.0, achieved_tol=0.0, converged=True,
                                 steps_per_checkpoint=0)

    sweep = _rk4_sweep(system, float(guard.blow_up_threshold))
    x0j = jnp.asarray(x0)

    def run(m: int):
        h = T / (n_checkpoints * m)
        states, alive, steps = sweep(x0j, h, m, n_checkpoints)
        states = np.vstack([x0[None, :], np.asarray(states)])
        blow_up = None if bool(alive) else (int(steps) + 1) * h
        return states, blow_up, int(steps) * h

    m = 1
    previous = run(m)
    achieved, converged = np.inf, False
    for _ in range(max_doublings):
        m *= 2
        current = run(m)
        valid = np.all(np.isfinite(previous[0]), axis=1) & np.all(np.isfinite(current[0]), axis=1)
        scale = 1.0 + float(np.max(np.linalg.norm(current[0][valid], axis=1)))
        achieved = float(np.max(np.abs(previous[0][valid] - current[0][valid]))) / scale
        log_debug(f"reference refinement m={m}: agreement {achieved:.3e}")
        finite_counts = {int(np.sum(np.all(np.isfinite(run_states), axis=1))) for run_states in (previous[0], current[0])}
        same_fate = len(finite_counts) == 1
        previous = current
        if achieved <= tol and same_fate and int(np.sum(valid)) > 1:
            converged = True
            break
    if not converged:
        log_warning(f"Reference solution reached {achieved:.3e}, not {tol:.1e}, after {max_doublings} refinements")

    states, blow_up, last_finite = previous
    finite_rows = np.all(np.isfinite(states), axis=1)
    times = np.linspace(0.0, T, n_checkpoints + 1)
    if blow_up is not None:
        log_warning(f"Reference solution blew up at t={blow_up:.6g}")
    return ReferenceSolution(
        times=times[finite_rows],
        states=states[finite_rows],
        blow_up_time=blow_up,
        last_finite_time=last_finite if blow_up is not None else T,
        achieved_tol=achieved,
        converged=converged,
        steps_per_checkpoint=m,
    )
