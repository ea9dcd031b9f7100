"""Run configuration: a YAML document validated by pydantic.

Unknown keys are rejected; every field has a default.  Validation errors are
reported with the offending key path and, when available, its line number.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from .asymptotics import default_ladder_values
from .exceptions import ValidationError
from .models import (
    ConditioningSet,
    ProcessModel,
    conditioning_fn_from_dict,
    kernel_from_dict,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelConfig(_Strict):
    family: Literal["brownian", "fbm", "mfold", "integrated"] = "brownian"
    H: Optional[float] = None
    m: Optional[int] = None
    inner: Optional["KernelConfig"] = None
    inner_method: Literal["hyp2f1", "quad"] = "hyp2f1"

    @model_validator(mode="after")
    def _params(self):
        if self.family == "fbm" and self.H is None:
            raise ValueError("fbm kernel needs H")
        if self.family == "mfold" and self.m is None:
            raise ValueError("mfold kernel needs m")
        if self.family == "integrated" and self.inner is None:
            raise ValueError("integrated kernel needs inner")
        return self

    def to_spec(self) -> dict:
        spec = {"family": self.family}
        if self.family == "fbm":
            spec.update(H=self.H, inner_method=self.inner_method)
        elif self.family == "mfold":
            spec["m"] = self.m
        elif self.family == "integrated":
            spec["inner"] = self.inner.to_spec()
        return spec


class ModelConfig(_Strict):
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    T: float = 1.0
    alpha: float = 1.0
    alpha_tilde: float = 0.0


class FunctionConfig(_Strict):
    type: Literal["indicator", "linear_decay", "tabulated"]
    grid: Optional[List[float]] = None
    values: Optional[List[float]] = None


class ConditioningConfig(_Strict):
    mode: Literal["none", "functional", "path"] = "none"
    functions: List[FunctionConfig] = Field(default_factory=list)
    x: Optional[List[float]] = None
    psi_csv: Optional[str] = None

    @model_validator(mode="after")
    def _mode(self):
        if self.mode == "functional" and not self.functions:
            raise ValueError("functional conditioning needs at least one function")
        if self.mode == "path" and not self.psi_csv:
            raise ValueError("path conditioning needs psi_csv")
        return self


class LadderConfig(_Strict):
    values: List[float] = Field(default_factory=lambda: list(default_ladder_values()))


class LimitsConfig(_Strict):
    example: Optional[Literal["fbm", "mfold", "integrated", "brownian"]] = None
    gamma_exp: Optional[float] = None
    kind: Optional[Literal["base", "functional", "path"]] = None
    points: List[Tuple[float, float]] = Field(default_factory=lambda: [(1.0, 1.0), (1.0, 0.5), (0.5, 0.25)])
    quantities: List[Literal["kbar", "rbar", "Kbar", "kbar_g", "upsilon"]] = Field(
        default_factory=lambda: ["kbar", "rbar", "Kbar", "kbar_g", "upsilon"]
    )


class GridsConfig(_Strict):
    cov: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    probe_points: int = 64


class RateConfig(_Strict):
    h_csv: Optional[str] = None


class ProbeConfig(_Strict):
    delta: float = 1.0
    N: int = 100_000
    block: int = 10_000
    workers: int = 1
    threshold_scaling: Literal["fixed", "self_similar"] = "fixed"


class TolerancesConfig(_Strict):
    quad: float = 1e-11
    rel_cutoff: float = 1e-10
    residual_threshold: float = 1e-6
    ladder_rtol: float = 5e-3
    cond_bound: float = 1e8


class OutputConfig(_Strict):
    dir: str = "out"


class RunConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    conditioning: ConditioningConfig = Field(default_factory=ConditioningConfig)
    ladder: LadderConfig = Field(default_factory=LadderConfig)
    limits: LimitsConfig = Field(default_factory=LimitsConfig)
    grids: GridsConfig = Field(default_factory=GridsConfig)
    rate: RateConfig = Field(default_factory=RateConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    tolerances: TolerancesConfig = Field(default_factory=TolerancesConfig)
    seed: int = 0
    output: OutputConfig = Field(default_factory=OutputConfig)
    paper_literal_coefficients: bool = False
    base_dir: Optional[str] = Field(default=None, exclude=True)

    def build_model(self) -> ProcessModel:
        m = self.model
        return ProcessModel(kernel_from_dict(m.kernel.to_spec()), m.T, m.alpha, m.alpha_tilde)

    def build_gset(self) -> Optional[ConditioningSet]:
        c = self.conditioning
        if not c.functions:
            return None
        fs = tuple(conditioning_fn_from_dict(f.model_dump(exclude_none=True)) for f in c.functions)
        x = c.x if c.x is not None else [0.0] * len(fs)
        return ConditioningSet(fs, tuple(x))

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p


def _node_line(node, loc) -> Optional[int]:
    """Line (1-based) of the YAML node at key path ``loc``, best effort."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt, line = v, k.start_mark.line + 1
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def parse_config(text: str, source: str = "<config>", base_dir: Optional[str] = None) -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{source}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: top level must be a mapping")
    try:
        cfg = RunConfig.model_validate(data)
    except PydanticError as exc:
        lines = []
        for err in exc.errors():
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
            where = ".".join(str(p) for p in loc) or "<root>"
            ln = _node_line(node, loc)
            at = f" (line {ln})" if ln else ""
            lines.append(f"{source}: {where}{at}: {err['msg']}")
        raise ValidationError("\n".join(lines)) from exc
    cfg.base_dir = base_dir
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), str(path.parent))
