"""
Solver statistics for phi-kit runs.
Counts steps, fixed-point and Newton work, and how runs ended.
"""
from typing import Dict

from utils import console


def create_stats_tracker() -> Dict:
    """Initialize a new stats tracker dictionary."""
    return {
        "steps": 0,
        "fixed_point_iterations": 0,
        "newton_fallbacks": 0,
        "newton_iterations": 0,
        "max_residual": 0.0,
        "blow_ups": 0,
        "step_too_large": 0,
    }


def record_step(tracker: Dict, fixed_point_iterations: int, newton_iterations: int,
                residual: float) -> None:
    """Add one accepted step to the tracker."""
    tracker["steps"] += 1
    tracker["fixed_point_iterations"] += fixed_point_iterations
    if newton_iterations:
        tracker["newton_fallbacks"] += 1
        tracker["newton_iterations"] += newton_iterations
    tracker["max_residual"] = max(tracker["max_residual"], residual)


def log_stats_summary(tracker: Dict) -> None:
    """Print a formatted solver summary to the console."""
    steps = tracker["steps"]
    avg_iters = tracker["fixed_point_iterations"] / steps if steps else 0.0

    console.print("\n" + "=" * 60)
    console.print("📊 SOLVER SUMMARY")
    console.print("=" * 60)
    console.print(f"Accepted steps:           {steps}")
    console.print(f"Fixed-point iterations:   {tracker['fixed_point_iterations']} ({avg_iters:.2f} per step)")
    console.print(f"Newton fallbacks:         {tracker['newton_fallbacks']} ({tracker['newton_iterations']} iterations)")
    console.print(f"Max residual:             {tracker['max_residual']:.3e}")
    console.print(f"{'─' * 60}")
    console.print(f"Blow-ups:                 {tracker['blow_ups']}")
    console.print(f"Step too large:           {tracker['step_too_large']}")
    console.print("=" * 60 + "\n")
