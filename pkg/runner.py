"""
Builds systems and integrators from run configs.
Shared by the CLI commands and the convergence sweep.
"""
import dataclasses
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from baselines import (
    leaf_breaking_map,
    rk2_step,
    rk4_step,
    run_explicit,
    symplectic_midpoint_step,
)
from birealisations import auto_orient
from config import MethodConfig, RunConfig, SystemConfig
from errors import ConfigError
from geometry import DiscreteMap
from guardrails import StateGuardrails
from hj_phi import PhiStepper, StepperConfig, build_stepper, integrate
from systems import LV_BLOW_UP_HINT, SystemSpec, get_system, lotka_volterra, rigid_body
from trajectory import TrajectoryRecord
from utils import as_state, log_debug


def build_system(cfg: SystemConfig) -> SystemSpec:
    """Catalog entry with the config's parameter overrides applied."""
    if cfg.name == "rigid-body" and cfg.inertia is not None:
        spec = rigid_body(np.diag(cfg.inertia))
    elif cfg.name == "lv3" and cfg.matrix is not None:
        matrix = np.asarray(cfg.matrix, dtype=np.float64)
        default = get_system("lv3").default_x0 if matrix.shape[0] == 3 else None
        spec = lotka_volterra(matrix, default, name="lv3", blow_up_hint=LV_BLOW_UP_HINT)
    else:
        spec = get_system(cfg.name)
    if cfg.x0 is not None:
        spec = dataclasses.replace(spec, default_x0=as_state(cfg.x0, spec.system.dim))
    if not spec.system.in_domain(spec.default_x0):
        raise ConfigError(f"x0 {spec.default_x0.tolist()} is outside the domain of {cfg.name}")
    return spec


@dataclass
class Method:
    """A configured integrator bound to one system."""
    name: str
    label: str
    spec: SystemSpec
    step_map: Callable[[float], DiscreteMap]
    _run: Callable[[np.ndarray, float, int], TrajectoryRecord]
    stepper: Optional[PhiStepper] = None

    def run(self, x0, h: float, n_steps: int) -> TrajectoryRecord:
        record = self._run(as_state(x0, self.spec.system.dim), float(h), int(n_steps))
        record.method = self.label
        return record


def _explicit_method(spec: SystemSpec, mc: MethodConfig, step: Callable, guard: StateGuardrails) -> Method:
    system = spec.system

    def step_map(h: float) -> DiscreteMap:
        return DiscreteMap(dim=system.dim, apply=lambda x: step(x, h), name=mc.display_label)

    def run(x0, h, n_steps):
        return run_explicit(system, step, x0, h, n_steps, guard, mc.display_label)

    return Method(name=mc.name, label=mc.display_label, spec=spec, step_map=step_map, _run=run)


def make_method(spec: SystemSpec, mc: MethodConfig, run_cfg: Optional[RunConfig] = None,
                tracker: Optional[Dict] = None, guard: Optional[StateGuardrails] = None) -> Method:
    """Integrator for one method entry of a run config."""
    guard = guard or StateGuardrails()
    system = spec.system
    fp_tol = run_cfg.fp_tol if run_cfg else 1e-14
    fp_max_iter = run_cfg.fp_max_iter if run_cfg else 100

    if mc.name == "phi":
        if spec.bireal is None:
            raise ConfigError(f"System {spec.name} has no bi-realisation, so PHI is unavailable")
        bireal = auto_orient(spec.bireal, system, spec.default_x0)
        log_debug(f"{spec.name}: solving with {bireal.orientation.value}")
        config = StepperConfig(
            dt=run_cfg.dt if run_cfg else 1e-3,
            order=mc.order,
            fp_tol=fp_tol,
            fp_max_iter=fp_max_iter,
            newton_fallback=run_cfg.newton_fallback if run_cfg else True,
            weighting=mc.weighting,
        )
        stepper = build_stepper(system, bireal, config, tracker)

        def run(x0, h, n_steps):
            return integrate(stepper, x0, n_steps, guard, h=h)

        return Method(name="phi", label=mc.display_label, spec=spec,
                      step_map=stepper.as_map, _run=run, stepper=stepper)

    if mc.name == "rk2":
        return _explicit_method(spec, mc, lambda x, h: rk2_step(system, x, h), guard)
    if mc.name == "rk4":
        return _explicit_method(spec, mc, lambda x, h: rk4_step(system, x, h), guard)
    if mc.name == "midpoint":
        # Fails early for structures that are not constant canonical
        symplectic_midpoint_step(system, spec.default_x0, 0.0)
        return _explicit_method(
            spec, mc, lambda x, h: symplectic_midpoint_step(system, x, h, fp_tol, fp_max_iter), guard
        )
    if mc.name == "leaf-demo":
        if spec.name != "quad-example":
            raise ConfigError(f"leaf-demo only runs on quad-example, not {spec.name}")
        return _explicit_method(spec, mc, lambda x, h: leaf_breaking_map(x, h, mc.order), guard)
    raise ConfigError(f"Unknown method '{mc.name}'")
