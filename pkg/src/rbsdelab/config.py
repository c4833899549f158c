"""Strict YAML experiment configuration.

Unknown keys are rejected. Errors carry the YAML line and the dotted field
path, e.g. ``line 7: representation.eta: Input should be a valid number``.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import registry
from .core import ConfigurationError, ObstacleSpec, TimeGrid

EXPERIMENTS = ("solve", "representation", "corollary32", "corollary33", "converse-comparison", "properties",
               "apriori")


class ConfigError(ConfigurationError):
    """Configuration file could not be parsed or does not match the schema."""

    def __init__(self, messages):
        self.messages = [messages] if isinstance(messages, str) else list(messages)
        super().__init__("\n".join(self.messages))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Vector = Union[float, list[float]]


class GeneratorCfg(_Strict):
    id: str
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("id")
    @classmethod
    def _known(cls, v):
        if v not in registry.GENERATORS:
            raise ValueError(f"unknown generator {v!r}; known: {sorted(registry.GENERATORS)}")
        return v


class ObstacleCfg(_Strict):
    id: str = "low"
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("id")
    @classmethod
    def _known(cls, v):
        if v not in registry.OBSTACLES:
            raise ValueError(f"unknown obstacle {v!r}; known: {sorted(registry.OBSTACLES)}")
        return v


class SDECfg(_Strict):
    id: str = "brownian"
    params: dict[str, Any] = Field(default_factory=dict)
    n: int = Field(1, ge=1)
    d: int = Field(1, ge=1)

    @field_validator("id")
    @classmethod
    def _known(cls, v):
        if v not in registry.COEFFICIENTS:
            raise ValueError(f"unknown coefficient set {v!r}; known: {sorted(registry.COEFFICIENTS)}")
        return v


class TerminalCfg(_Strict):
    id: Literal["obstacle", "constant", "put", "linear"] = "obstacle"
    params: dict[str, Any] = Field(default_factory=dict)


class GridCfg(_Strict):
    t0: float = Field(0.0, ge=0.0)
    T: float = 1.0
    n_steps: int = Field(200, ge=1)
    x0: Vector = 0.0

    @model_validator(mode="after")
    def _order(self):
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        return self


class MonteCarloCfg(_Strict):
    n_paths: int = Field(100_000, ge=1)
    seed: int = Field(0, ge=0)
    degree: int = Field(3, ge=0)
    n_seed_replicates: int = Field(8, ge=1)
    picard: int = Field(1, ge=1)


class SolverCfg(_Strict):
    backend: Literal["tree", "lsmc"] = "tree"
    scheme: Literal["one-step", "realized"] = "one-step"
    control: bool = True
    reflect: bool = True
    n_penalty: list[float] = Field(default_factory=list)


class RepresentationCfg(_Strict):
    preset: Optional[Literal["corollary34"]] = None
    t: float = Field(0.0, ge=0.0)
    x: Vector = 0.0
    eta: float = 1.0
    q: Optional[Vector] = None
    z: Optional[Vector] = None
    epsilons: Optional[list[float]] = None
    p_norm: float = Field(1.0, ge=1.0, lt=2.0)
    backend: Literal["lsmc", "tree"] = "lsmc"
    n_sub: int = Field(20, ge=1)
    stop_cap: Optional[int] = None
    C: Optional[float] = None

    @model_validator(mode="after")
    def _direction(self):
        if self.preset == "corollary34":
            if self.z is None or self.q is not None:
                raise ValueError("the corollary34 preset takes z (and no q)")
        elif self.q is None or self.z is not None:
            raise ValueError("give the direction q (z only with preset corollary34)")
        return self


class ProbeCfg(_Strict):
    t: float = Field(0.0, ge=0.0)
    eta: float
    z: Vector = 1.0


class ConverseCfg(_Strict):
    probes: list[ProbeCfg] = Field(min_length=1)
    backend: Literal["lsmc", "tree"] = "tree"
    epsilons: Optional[list[float]] = None
    n_sub: int = Field(20, ge=1)


class PropertiesCfg(_Strict):
    checks: list[Literal["self-financing", "zero-interest", "flatness"]] = Field(min_length=1)
    level: float = -1.0
    y_values: list[float] = Field(default_factory=lambda: [1.0])
    C: Optional[float] = None
    eta: float = 1.0
    t: float = 0.0
    probe: bool = True


class AprioriCfg(_Strict):
    sigma_idx: int = Field(0, ge=0)
    tau_idx: Optional[int] = None
    n_sample_paths: int = Field(20_000, ge=1)
    refine: bool = True


class ExpectCfg(_Strict):
    y0: Optional[float] = None
    y0_tol: float = Field(1e-8, gt=0)
    verdict: Optional[str] = None
    difference: Optional[float] = None
    difference_tol: float = Field(0.02, gt=0)
    holds: Optional[bool] = None


class TolerancesCfg(_Strict):
    abs_tol: Optional[float] = Field(None, gt=0)
    noise_sigmas: float = Field(3.0, gt=0)
    monotone_slack: float = Field(0.25, ge=0)
    skorokhod_tol: float = Field(1e-6, gt=0)
    k_rel_tol: float = Field(0.01, gt=0)
    y_tol: float = Field(1e-3, ge=0)
    deviation_tol: float = Field(1e-8, gt=0)
    probe_tol: float = Field(0.02, gt=0)
    penalty_gap: float = Field(0.02, gt=0)
    ratio_change: float = Field(0.2, gt=0)
    lhs_tol: float = Field(1e-8, gt=0)
    forward_tol: Optional[float] = Field(None, ge=0)
    assumption_samples: int = Field(2000, ge=1)


class OutputCfg(_Strict):
    dir: str = "out"
    name: Optional[str] = None
    path_rows: int = Field(0, ge=0)


class ExperimentConfig(_Strict):
    experiment: Literal[EXPERIMENTS]
    description: str = ""
    generator: GeneratorCfg = GeneratorCfg(id="zero")
    generator2: Optional[GeneratorCfg] = None
    obstacle: ObstacleCfg = ObstacleCfg()
    sde: SDECfg = SDECfg()
    terminal: TerminalCfg = TerminalCfg()
    grid: GridCfg = GridCfg()
    monte_carlo: MonteCarloCfg = MonteCarloCfg()
    solver: SolverCfg = SolverCfg()
    representation: Optional[RepresentationCfg] = None
    converse: Optional[ConverseCfg] = None
    properties: Optional[PropertiesCfg] = None
    apriori: AprioriCfg = AprioriCfg()
    expect: ExpectCfg = ExpectCfg()
    tolerances: TolerancesCfg = TolerancesCfg()
    output: OutputCfg = OutputCfg()

    @model_validator(mode="after")
    def _sections(self):
        need = {"representation": "representation", "corollary32": "representation",
                "corollary33": "representation", "converse-comparison": "converse",
                "properties": "properties"}.get(self.experiment)
        if need and getattr(self, need) is None:
            raise ValueError(f"experiment {self.experiment!r} needs a '{need}' section")
        if self.experiment == "converse-comparison" and self.generator2 is None:
            raise ValueError("converse-comparison needs 'generator2'")
        return self

    def with_overrides(self, seed: Optional[int] = None, n_paths: Optional[int] = None) -> "ExperimentConfig":
        mc = self.monte_carlo.model_dump()
        mc.update({k: v for k, v in (("seed", seed), ("n_paths", n_paths)) if v is not None})
        # re-validate so overrides obey the same bounds
        return ExperimentConfig.model_validate(dict(self.model_dump(), monte_carlo=mc))


# ---------------------------------------------------------------------------
# loading


def git_blob_sha1(data: bytes) -> str:
    """Content hash in the same form as ``git hash-object``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _locate(node, loc) -> Optional[int]:
    """1-based YAML line of the deepest node along the pydantic error path."""
    line = node.start_mark.line + 1 if node is not None else None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == part:
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _duplicate_keys(node, path=()) -> list:
    out = []
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for k, v in node.value:
            if k.value in seen:
                out.append(f"line {k.start_mark.line + 1}: {'.'.join(map(str, path + (k.value,)))}: duplicate key")
            seen.add(k.value)
            out.extend(_duplicate_keys(v, path + (k.value,)))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.extend(_duplicate_keys(v, path + (i,)))
    return out


def parse_config(text: str) -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError("line 1: the top level must be a mapping")
    dups = _duplicate_keys(root)
    if dups:
        raise ConfigError(dups)
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
            line = _locate(root, loc)
            field = ".".join(str(p) for p in loc) or "<root>"
            msgs.append(f"line {line}: {field}: {err['msg']}")
        raise ConfigError(msgs) from None
    build(cfg)  # registry parameters are part of the schema
    return cfg


def load_config(path) -> tuple:
    """Return ``(config, raw_bytes)`` for the file at ``path``."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError("config is not valid UTF-8") from None
    return parse_config(text), raw


# ---------------------------------------------------------------------------
# building specs


def _terminal(cfg: TerminalCfg, obs: ObstacleSpec, grid: GridCfg, n: int):
    p = dict(cfg.params)
    allowed = {"obstacle": set(), "constant": {"value"}, "put": {"strike", "log_state"}, "linear": {"a", "c"}}
    extra = set(p) - allowed[cfg.id]
    if extra:
        raise ConfigurationError(f"terminal {cfg.id}: unknown parameter(s) {sorted(extra)}")
    if cfg.id == "obstacle":
        if obs.kind == "ito":
            raise ConfigurationError("terminal 'obstacle' is not available for Itô barriers")
        T = grid.T
        return lambda x: obs.at(T, x)
    if cfg.id == "constant":
        v = float(p.get("value", 0.0))
        return lambda x: np.full(np.shape(x)[:-1], v)
    if cfg.id == "put":
        K = float(p.get("strike", 100.0))
        if p.get("log_state", True):
            return lambda x: np.maximum(K - np.exp(x[..., 0]), 0.0)
        return lambda x: np.maximum(K - x[..., 0], 0.0)
    a = np.atleast_1d(np.asarray(p.get("a", 0.0), dtype=float))
    c = float(p.get("c", 0.0))
    return lambda x: c + x @ np.broadcast_to(a, (n,))


def build(cfg: ExperimentConfig) -> dict:
    """Instantiate the specs named by ``cfg`` (raises :class:`ConfigError`)."""
    n, d = cfg.sde.n, cfg.sde.d
    out = {}
    try:
        out["gen"] = registry.build_generator(cfg.generator.id, cfg.generator.params, d)
    except ConfigurationError as exc:
        raise ConfigError(f"generator: {exc}") from None
    if cfg.generator2 is not None:
        try:
            out["gen2"] = registry.build_generator(cfg.generator2.id, cfg.generator2.params, d)
        except ConfigurationError as exc:
            raise ConfigError(f"generator2: {exc}") from None
    try:
        out["obs"] = registry.build_obstacle(cfg.obstacle.id, cfg.obstacle.params, n, d)
    except ConfigurationError as exc:
        raise ConfigError(f"obstacle: {exc}") from None
    try:
        out["coeffs"] = registry.build_coefficients(cfg.sde.id, cfg.sde.params, n, d)
    except ConfigurationError as exc:
        raise ConfigError(f"sde: {exc}") from None
    try:
        out["grid"] = TimeGrid.uniform_grid(cfg.grid.t0, cfg.grid.T, cfg.grid.n_steps)
        x0 = np.atleast_1d(np.asarray(cfg.grid.x0, dtype=float))
        out["x0"] = np.broadcast_to(x0, (n,)).copy() if x0.size == 1 else x0
        if out["x0"].shape != (n,):
            raise ConfigurationError(f"x0 must have length {n}")
    except (ConfigurationError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from None
    if cfg.experiment not in ("solve", "apriori"):
        out["terminal"] = None
        return out
    try:
        out["terminal"] = _terminal(cfg.terminal, out["obs"], cfg.grid, n)
    except ConfigurationError as exc:
        raise ConfigError(f"terminal: {exc}") from None
    return out


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """Every field with its effective value, defaults included."""
    return cfg.model_dump(mode="json")
