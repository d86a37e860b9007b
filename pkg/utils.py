"""
Utility functions for phi-kit.
Console logging, finite differences, random sampling and number formatting.
"""
from typing import Callable, Optional

import numpy as np
from rich.console import Console

from errors import ConfigError

# Data goes to files or stdout, messages go to stderr
console = Console(stderr=True, highlight=False)

QUIET, NORMAL, VERBOSE = 0, 1, 2
_verbosity = NORMAL


def set_verbosity(level: int) -> None:
    """Set the global message level (QUIET, NORMAL or VERBOSE)."""
    global _verbosity
    _verbosity = level


def is_verbose() -> bool:
    return _verbosity >= VERBOSE


def is_quiet() -> bool:
    return _verbosity <= QUIET


def log_info(message: str) -> None:
    if _verbosity >= NORMAL:
        console.print(f"🔍 {message}")


def log_success(message: str) -> None:
    if _verbosity >= NORMAL:
        console.print(f"✅ {message}")


def log_warning(message: str) -> None:
    if _verbosity >= NORMAL:
        console.print(f"⚠️  {message}")


def log_error(message: str) -> None:
    # Errors are shown even in quiet mode
    console.print(f"❌ {message}")


def log_debug(message: str) -> None:
    if _verbosity >= VERBOSE:
        console.print(f"   {message}", style="dim")


def as_state(x, dim: Optional[int] = None) -> np.ndarray:
    """
    Convert a state-like value to a 1-D float64 array.
    Raises ConfigError when the length does not match `dim`.
    """
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise ConfigError(f"Expected a state of length {dim}, got {arr.shape[0]}")
    return arr


def default_fd_step(x: np.ndarray) -> float:
    """Central-difference step scaled to the size of the point."""
    return 1e-6 * (1.0 + float(np.linalg.norm(x)))


def fd_gradient(f: Callable, x: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = as_state(x)
    h = default_fd_step(x) if step is None else step
    grad = np.empty_like(x)
    for a in range(x.shape[0]):
        e = np.zeros_like(x)
        e[a] = h
        grad[a] = (float(f(x + e)) - float(f(x - e))) / (2.0 * h)
    return grad


def fd_jacobian(f: Callable, x: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """
    Central finite-difference Jacobian of a vector function.
    Column a holds the derivative with respect to x[a].
    """
    x = as_state(x)
    h = default_fd_step(x) if step is None else step
    columns = []
    for a in range(x.shape[0]):
        e = np.zeros_like(x)
        e[a] = h
        plus = np.asarray(f(x + e), dtype=np.float64)
        minus = np.asarray(f(x - e), dtype=np.float64)
        columns.append((plus - minus) / (2.0 * h))
    return np.stack(columns, axis=-1)


def sample_states(rng: np.random.Generator, n: int, dim: int,
                  low: float = -2.0, high: float = 2.0) -> np.ndarray:
    """Uniform samples in a box, one state per row."""
    return rng.uniform(low, high, size=(n, dim))


def sample_covectors(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    """Random covectors with Euclidean norm at most `radius`."""
    directions = rng.normal(size=(n, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.uniform(0.0, 1.0, size=(n, 1))
    return directions * radii


def format_float(value: float) -> str:
    """17 significant digits, enough for an exact double round-trip."""
    return f"{value:.17g}"
