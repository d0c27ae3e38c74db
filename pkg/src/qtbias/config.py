"""Experiment configuration: schema, validation and canonical serialisation.

Documents are JSON objects; missing sections take defaults matching the
reference operating point (``omega = 10``, ``gamma = dt = 1``, ``N = 20``,
``10^4`` trajectories). Unknown keys are rejected.
"""

import hashlib
import json
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .collision import ModelParams
from .errors import ConfigError

EXPERIMENTS = ("fi", "bias-global", "bias-local", "sweep", "enumerate", "limit-check", "sse",
               "collapse")

STATE_LABELS = {
    "g": (0j, 1 + 0j),
    "e": (1 + 0j, 0j),
    "+": (2 ** -0.5 + 0j, 2 ** -0.5 + 0j),
    "-": (2 ** -0.5 + 0j, -(2 ** -0.5) + 0j),
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Section):
    omega: float = 10.0
    gamma: float = Field(1.0, ge=0)
    dt: float = Field(1.0, gt=0)
    n_collisions: int = Field(20, ge=1)
    # a label from STATE_LABELS or [[re, im], [re, im]] (excited amplitude first)
    psi0: Union[Literal["g", "e", "+", "-"], Tuple[Tuple[float, float], Tuple[float, float]]] = "g"
    kraus: Literal["exact", "first_order"] = "exact"

    @field_validator("psi0")
    @classmethod
    def _normalised(cls, v):
        if not isinstance(v, str):
            norm = sum(re * re + im * im for re, im in v)
            if abs(norm - 1.0) > 1e-12:
                raise ValueError(f"state must be normalised (squared norm {norm!r})")
        return v

    def params(self):
        psi = STATE_LABELS[self.psi0] if isinstance(self.psi0, str) else \
            tuple(complex(re, im) for re, im in self.psi0)
        return ModelParams(self.omega, self.gamma, self.dt, self.n_collisions, psi, self.kraus)


class BiasSection(_Section):
    mode: Literal["none", "explicit", "global", "local"] = "none"
    s: float = 0.0
    b: Optional[List[float]] = None
    local_sensitivity_mode: Literal["branch", "one_step_fi", "weighted"] = "branch"

    @model_validator(mode="after")
    def _pattern(self):
        if self.mode == "explicit" and self.b is None:
            raise ValueError("mode 'explicit' requires b")
        if self.mode in ("global", "local") and self.b is not None:
            raise ValueError(f"mode {self.mode!r} chooses b itself; b must be omitted")
        if self.mode == "none" and self.b is not None:
            raise ValueError("mode 'none' does not take b")
        return self


class EstimationSection(_Section):
    n_traj: int = Field(10_000, ge=2)
    n_batches: int = Field(10, ge=2)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    fd_step: Optional[float] = Field(None, gt=0)
    enumeration_cap: int = Field(24, ge=1)
    rel_tol: float = Field(0.01, gt=0)
    max_traj: int = Field(1_000_000, ge=2)
    cross_check_max_n: int = Field(12, ge=0)

    @model_validator(mode="after")
    def _batches(self):
        if self.n_batches > self.n_traj:
            raise ValueError("n_batches must not exceed n_traj")
        return self


class SweepSection(_Section):
    strategy: Literal["global", "local"] = "global"
    s_values: List[float] = Field(default_factory=lambda: [0.5 * k for k in range(11)])


class DynamicsSection(_Section):
    t_final: float = Field(1.0, gt=0)
    dt_int: float = Field(1e-4, gt=0)
    dt_list: List[float] = Field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    n_traj: int = Field(10_000, ge=2)
    record_every: int = Field(100, ge=1)


class CollapseSection(_Section):
    input: Optional[str] = None
    a_range: Tuple[float, float] = (-3.0, 3.0)
    b_range: Tuple[float, float] = (-3.0, 3.0)
    grid: int = Field(41, ge=2)


class OutputsSection(_Section):
    directory: str = "results"
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv"], min_length=1)


class ExperimentConfig(_Section):
    experiment: Literal[EXPERIMENTS] = "fi"
    model: ModelSection = ModelSection()
    bias: BiasSection = BiasSection()
    estimation: EstimationSection = EstimationSection()
    sweep: SweepSection = SweepSection()
    dynamics: DynamicsSection = DynamicsSection()
    collapse: CollapseSection = CollapseSection()
    outputs: OutputsSection = OutputsSection()


def _problems(exc):
    return [(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"]) for err in exc.errors()]


def parse_config(document):
    """Validate a JSON document (text, bytes or already-decoded mapping)."""
    if isinstance(document, (str, bytes)):
        text = document.strip()
        try:
            document = json.loads(text) if text else {}
        except json.JSONDecodeError as exc:
            raise ConfigError([("<document>", f"not valid JSON: {exc}")]) from None
    if not isinstance(document, dict):
        raise ConfigError([("<document>", "top level must be an object")])
    try:
        cfg = ExperimentConfig.model_validate(document)
    except ValidationError as exc:
        raise ConfigError(_problems(exc)) from None
    if cfg.bias.b is not None and len(cfg.bias.b) != cfg.model.n_collisions:
        raise ConfigError([("bias.b", f"length {len(cfg.bias.b)} does not match "
                                      f"model.n_collisions = {cfg.model.n_collisions}")])
    return cfg


def config_to_dict(cfg):
    return cfg.model_dump(mode="json")


def dump_config(cfg):
    """Canonical JSON text; ``parse_config(dump_config(c)) == c``."""
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2)


def config_hash(cfg):
    """SHA-256 over the canonical config, excluding output placement."""
    data = config_to_dict(cfg)
    data.pop("outputs")
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def apply_overrides(cfg, overrides):
    """New config with dotted-path overrides, e.g. ``{"model.omega": 5.0}``, revalidated."""
    data = config_to_dict(cfg)
    for path, value in overrides.items():
        if value is None:
            continue
        node = data
        *head, last = path.split(".")
        for key in head:
            node = node[key]
        node[last] = value
    return parse_config(data)
