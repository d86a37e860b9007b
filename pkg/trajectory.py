"""
Trajectory records shared by the PHI stepper and the classical baselines.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence

import jax
import numpy as np

from geometry import PoissonSystem


class Termination(str, Enum):
    COMPLETED = "completed"
    BLOW_UP = "blow_up"
    STEP_TOO_LARGE = "step_too_large"


@dataclass
class StepDiagnostics:
    """Diagnostics attached to one recorded state."""
    H: float
    casimirs: List[float]
    solver_iters: int
    residual: float


@dataclass
class TrajectoryRecord:
    """Time-indexed states plus per-step diagnostics. Row 0 is the initial state."""
    times: np.ndarray
    states: np.ndarray
    hamiltonian: np.ndarray
    casimirs: np.ndarray
    solver_iters: np.ndarray
    residuals: np.ndarray
    termination: Termination = Termination.COMPLETED
    reason: str = ""
    method: str = ""
    metadata: Dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def per_step(self) -> List[StepDiagnostics]:
        return [
            StepDiagnostics(
                H=float(self.hamiltonian[n]),
                casimirs=[float(c) for c in self.casimirs[n]],
                solver_iters=int(self.solver_iters[n]),
                residual=float(self.residuals[n]),
            )
            for n in range(len(self.times))
        ]

    def summary(self) -> Dict:
        return {
            "method": self.method,
            "steps": self.n_steps,
            "final_time": self.final_time,
            "termination": self.termination.value,
            "reason": self.reason,
        }


def evaluate_invariants(system: PoissonSystem, states: np.ndarray):
    """Hamiltonian and Casimir values for a stack of states, vectorised."""
    states = np.asarray(states, dtype=np.float64).reshape(-1, system.dim)
    hamiltonian = np.asarray(jax.vmap(system.hamiltonian.value)(states))
    if system.casimirs:
        casimirs = np.stack(
            [np.asarray(jax.vmap(c.value)(states)) for c in system.casimirs], axis=1
        )
    else:
        casimirs = np.zeros((states.shape[0], 0))
    return hamiltonian, casimirs


def build_record(system: PoissonSystem, dt: float, states: Sequence, solver_iters: Sequence[int],
                 residuals: Sequence[float], termination: Termination = Termination.COMPLETED,
                 reason: str = "", method: str = "") -> TrajectoryRecord:
    """Assemble a record on the uniform grid t_n = n dt."""
    states = np.asarray(states, dtype=np.float64).reshape(-1, system.dim)
    hamiltonian, casimirs = evaluate_invariants(system, states)
    return TrajectoryRecord(
        times=np.arange(states.shape[0], dtype=np.float64) * dt,
        states=states,
        hamiltonian=hamiltonian,
        casimirs=casimirs,
        solver_iters=np.asarray(solver_iters, dtype=np.int64),
        residuals=np.asarray(residuals, dtype=np.float64),
        termination=termination,
        reason=reason,
        method=method,
    )
