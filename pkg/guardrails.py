"""
Guardrails for integrator runs: state sanity checks and failure classification.
"""
from typing import Tuple

import numpy as np

from trajectory import Termination


class StateGuardrails:
    """Checks that decide when a trajectory has reached numerical infinity."""

    def __init__(self, blow_up_threshold: float = 1e12, growth_factor: float = 20.0):
        # State norm treated as "numerical infinity"
        self.blow_up_threshold = blow_up_threshold
        # Solver failures after this much growth count as blow-up
        self.growth_factor = growth_factor

    def check_state(self, x) -> Tuple[bool, str]:
        """
        Check that a state is finite and below the blow-up threshold.

        Returns:
            (is_ok, message) - True if the state can be used, False with the reason otherwise
        """
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return False, "State is empty"

        if not np.all(np.isfinite(x)):
            return False, "State has non-finite entries"

        norm = float(np.linalg.norm(x))
        if norm > self.blow_up_threshold:
            return False, f"State norm {norm:.3e} exceeds blow-up threshold {self.blow_up_threshold:.0e}"

        return True, "OK"

    def check_timestep(self, dt: float) -> Tuple[bool, str]:
        """Timesteps must be finite and non-negative; zero means identity steps."""
        if not np.isfinite(dt):
            return False, "Timestep must be finite"
        if dt < 0:
            return False, f"Timestep must be non-negative, got {dt}"
        return True, "OK"

    def classify_failure(self, x0, x_last) -> Termination:
        """
        Decide whether a failed implicit step is a blow-up or a too-large step.
        Near a finite-time singularity the implicit relation stops having a
        solution once the state has grown by orders of magnitude.
        """
        start = 1.0 + float(np.linalg.norm(np.asarray(x0, dtype=np.float64)))
        last = float(np.linalg.norm(np.asarray(x_last, dtype=np.float64)))
        if not np.isfinite(last) or last > self.growth_factor * start:
            return Termination.BLOW_UP
        return Termination.STEP_TOO_LARGE
