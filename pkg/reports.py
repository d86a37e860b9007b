"""
CSV and JSON writers for run results.
Floats are written with 17 significant digits so values round-trip exactly.
"""
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from baselines import ReferenceSolution
from geometry import PoissonSystem
from trajectory import Termination, TrajectoryRecord

FLOAT_FORMAT = "%.17g"


def _write_frame(frame: pd.DataFrame, path, footer: Optional[str] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="nan")
    if footer:
        with open(path, "a", encoding="utf-8", newline="\n") as f:
            f.write(footer)


def _termination_footer(record: TrajectoryRecord) -> Optional[str]:
    if record.termination is Termination.COMPLETED:
        return None
    reason = " ".join(record.reason.split())
    return f"# termination: {record.termination.value} at t={record.final_time:.17g}: {reason}\n"


def trajectory_frame(record: TrajectoryRecord, system: PoissonSystem,
                     outputs: Sequence[str] = ("trajectory",)) -> pd.DataFrame:
    """step, t, x1..xn, H, C1..Cm, solver_iters, plus columns for the extra outputs."""
    columns: Dict[str, np.ndarray] = {
        "step": np.arange(len(record.times), dtype=np.int64),
        "t": record.times,
    }
    for i in range(system.dim):
        columns[f"x{i + 1}"] = record.states[:, i]
    columns["H"] = record.hamiltonian
    for j in range(record.casimirs.shape[1]):
        columns[f"C{j + 1}"] = record.casimirs[:, j]
    columns["solver_iters"] = record.solver_iters

    if "energy" in outputs:
        columns["dH"] = np.abs(record.hamiltonian - record.hamiltonian[0])
    if "casimir" in outputs:
        for j in range(record.casimirs.shape[1]):
            columns[f"dC{j + 1}"] = np.abs(record.casimirs[:, j] - record.casimirs[0, j])
    if "diagnostics" in outputs:
        columns["residual"] = record.residuals
    return pd.DataFrame(columns)


def write_trajectory_csv(record: TrajectoryRecord, system: PoissonSystem, path,
                         outputs: Sequence[str] = ("trajectory",)) -> None:
    """Trajectory CSV; runs that did not complete get a trailing '# termination:' row."""
    _write_frame(trajectory_frame(record, system, outputs), path, _termination_footer(record))


def compare_frame(record: TrajectoryRecord, reference: ReferenceSolution, label: str) -> pd.DataFrame:
    """Per-step sup-norm error against the reference and invariant deviations for one method."""
    n = len(record.times)
    err = np.full(n, np.nan)
    available = min(n, len(reference.times))
    err[:available] = np.max(np.abs(record.states[:available] - reference.states[:available]), axis=1)
    columns: Dict[str, np.ndarray] = {
        "step": np.arange(n, dtype=np.int64),
        "t": record.times,
        f"{label}_err": err,
        f"{label}_dH": np.abs(record.hamiltonian - record.hamiltonian[0]),
    }
    for j in range(record.casimirs.shape[1]):
        columns[f"{label}_dC{j + 1}"] = np.abs(record.casimirs[:, j] - record.casimirs[0, j])
    return pd.DataFrame(columns)


def join_compare_frames(frames: List[pd.DataFrame]) -> pd.DataFrame:
    """Outer join on (step, t); methods that stopped early leave nan cells."""
    joined = frames[0]
    for frame in frames[1:]:
        joined = joined.merge(frame, on=["step", "t"], how="outer")
    return joined.sort_values("step", kind="stable").reset_index(drop=True)


def write_compare_csv(frames: List[pd.DataFrame], path, notes: Sequence[str] = ()) -> None:
    footer = "".join(f"# {' '.join(note.split())}\n" for note in notes) or None
    _write_frame(join_compare_frames(frames), path, footer)


def _to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(payload: Dict, path) -> None:
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_to_builtin)
        f.write("\n")
