"""
Trajectory diagnostics: invariant deviation series, drift fits and
convergence-order sweeps against the reference oracle.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats

from baselines import DEFAULT_REFERENCE_TOL, reference_solution
from errors import BlowUpError, ConfigError, EvaluationError
from geometry import PoissonSystem
from settings import get_settings
from trajectory import Termination, TrajectoryRecord
from utils import as_state, log_debug, log_info


def energy_series(rec: TrajectoryRecord) -> np.ndarray:
    """|H(x_n) - H(x_0)| for every recorded step."""
    return np.abs(rec.hamiltonian - rec.hamiltonian[0])


def casimir_series(rec: TrajectoryRecord) -> np.ndarray:
    """|C_j(x_n) - C_j(x_0)|, one column per Casimir."""
    return np.abs(rec.casimirs - rec.casimirs[0])


def drift_slope(series: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares slope of the series against the step index, and its
    amplitude (largest deviation from the first value).
    """
    values = np.asarray(series, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ConfigError("Cannot fit a drift to an empty series")
    amplitude = float(np.max(np.abs(values - values[0])))
    if values.size < 2 or amplitude == 0.0 or np.ptp(values) == 0.0:
        return 0.0, amplitude
    fit = stats.linregress(np.arange(values.size, dtype=np.float64), values)
    return float(fit.slope), amplitude


@dataclass
class ConvergenceReport:
    """Errors at the horizon for a sweep of timesteps, with the fitted log-log slope."""
    h_values: List[float]
    errors: List[float]
    fitted_slope: float
    slope_ci: float
    method: str = ""
    horizon: float = 0.0

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["slope"] = payload.pop("fitted_slope")
        payload["ci"] = payload.pop("slope_ci")
        return payload


def _steps_for(T: float, h: float) -> int:
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"Timestep {h} does not divide the horizon {T}")
    return n


def convergence_report(system: PoissonSystem, method, x0, T: float, h_list: Sequence[float],
                       reference_tol: float = DEFAULT_REFERENCE_TOL) -> ConvergenceReport:
    """
    Sup-norm error at T against the reference oracle for each h, fitted as
    log(error) = slope * log(h) + c. `method` is anything with run(x0, h, n_steps).
    Runs for different h are independent and go to a thread pool.
    """
    if len(h_list) < 2:
        raise ConfigError(f"Need at least two timesteps for a convergence fit, got {len(h_list)}")
    if any((not np.isfinite(h)) or h <= 0.0 for h in h_list):
        raise ConfigError("Timesteps must be positive and finite")
    if not np.isfinite(T) or T <= 0.0:
        raise ConfigError(f"Horizon must be positive, got {T}")
    x0 = as_state(x0, system.dim)
    h_values = sorted((float(h) for h in h_list), reverse=True)
    steps = [_steps_for(T, h) for h in h_values]

    reference = reference_solution(system, x0, T, tol=reference_tol)
    if reference.blow_up_time is not None:
        raise BlowUpError(f"Reference solution blows up at t={reference.blow_up_time:.6g}, before T={T}")
    exact = reference.final_state
    label = getattr(method, "label", "method")

    def error_for(args):
        h, n = args
        record = method.run(x0, h, n)
        if record.termination is not Termination.COMPLETED:
            raise BlowUpError(f"{label} stopped at t={record.final_time:.6g} with h={h}: {record.reason}")
        err = float(np.max(np.abs(record.final_state - exact)))
        log_debug(f"{label} h={h:.3e}: error {err:.3e}")
        return err

    workers = max(1, min(get_settings().threads, len(h_values)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        errors = list(pool.map(error_for, zip(h_values, steps)))

    if any(e <= 0.0 or not np.isfinite(e) for e in errors):
        raise EvaluationError(f"Errors must be positive and finite for a log-log fit, got {errors}")
    fit = stats.linregress(np.log(h_values), np.log(errors))
    log_info(f"{label}: fitted order {fit.slope:.3f} ± {fit.stderr:.3f}")
    return ConvergenceReport(
        h_values=h_values,
        errors=errors,
        fitted_slope=float(fit.slope),
        slope_ci=float(fit.stderr),
        method=label,
        horizon=float(T),
    )
