"""
Run configuration schema for the phi-kit CLI.
Configs are JSON files validated strictly: unknown keys are errors.
"""
import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

SystemName = Literal["lv3", "rigid-body", "harmonic", "quad-example"]
MethodName = Literal["phi", "rk2", "rk4", "midpoint", "leaf-demo"]
OutputName = Literal["trajectory", "energy", "casimir", "diagnostics"]


class SystemConfig(BaseModel):
    """Catalog system plus optional parameter overrides."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: SystemName
    # Diagonal of the rigid-body inertia tensor
    inertia: Optional[List[float]] = None
    # Antisymmetric matrix of a quadratic Lotka-Volterra system
    matrix: Optional[List[List[float]]] = None
    x0: Optional[List[float]] = None

    @field_validator("inertia")
    @classmethod
    def _three_positive(cls, v):
        if v is not None and (len(v) != 3 or min(v) <= 0.0):
            raise ValueError("inertia must be three positive numbers")
        return v

    @field_validator("matrix")
    @classmethod
    def _antisymmetric(cls, v):
        if v is None:
            return v
        n = len(v)
        if n == 0 or any(len(row) != n for row in v):
            raise ValueError("matrix must be square")
        if any(v[i][j] != -v[j][i] for i in range(n) for j in range(n)):
            raise ValueError("matrix must be antisymmetric")
        return v

    @model_validator(mode="after")
    def _parameters_match_system(self):
        if self.inertia is not None and self.name != "rigid-body":
            raise ValueError("inertia only applies to rigid-body")
        if self.matrix is not None and self.name != "lv3":
            raise ValueError("matrix only applies to lv3")
        return self


class MethodConfig(BaseModel):
    """One integrator: a PHI order or a classical baseline."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: MethodName
    order: int = Field(default=1, ge=1, le=3)
    weighting: Literal["plain", "taylor"] = "plain"
    label: Optional[str] = None

    @property
    def display_label(self) -> str:
        if self.label:
            return self.label
        if self.name in ("phi", "leaf-demo"):
            return f"{self.name}{self.order}"
        return self.name


class RunConfig(BaseModel):
    """Everything a simulate / compare / convergence run needs."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    system: SystemConfig
    method: Optional[MethodConfig] = None
    methods: Optional[List[MethodConfig]] = None
    dt: float = Field(default=1e-3, gt=0)
    steps: int = Field(default=100, ge=0)
    fp_tol: float = Field(default=1e-14, gt=0)
    fp_max_iter: int = Field(default=100, ge=2)
    newton_fallback: bool = True
    outputs: List[OutputName] = Field(default_factory=lambda: ["trajectory"])
    seed: int = 0
    # Convergence sweeps
    horizon: Optional[float] = Field(default=None, gt=0)
    h_values: Optional[List[float]] = None
    reference_tol: float = Field(default=1e-12, gt=0)

    @model_validator(mode="after")
    def _one_method_source(self):
        if self.method is not None and self.methods is not None:
            raise ValueError("give either 'method' or 'methods', not both")
        if self.method is None and not self.methods:
            raise ValueError("a run needs 'method' or a non-empty 'methods' list")
        return self

    def method_list(self) -> List[MethodConfig]:
        return [self.method] if self.method is not None else list(self.methods)


def parse_config(payload: dict) -> RunConfig:
    """Validate a decoded JSON payload."""
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid run config: {e}") from e


def load_config(path) -> RunConfig:
    """Read and validate a JSON run config."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return parse_config(payload)
