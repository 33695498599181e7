"""
Run configuration: pydantic sections plus the flat ``key = value`` loader.

A config file drives the whole pipeline, e.g.::

    seed = 13
    data.zipf_s = 1.0
    loss.alphas = 0.05, 0.1
    train.profile = desk
"""

from __future__ import annotations

import logging
import os
import typing
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

logger = logging.getLogger(__name__)


class UsageError(ValueError):
    """Bad command line, unknown config key or invalid config value."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# ── data ─────────────────────────────────────────────────────────────────── #
class SyntheticSpec(_Section):
    branching: List[int] = Field(default_factory=lambda: [4, 3])
    docs_per_leaf: int = Field(75, gt=0)
    zipf_s: float = Field(1.0, ge=0.0)
    words_per_topic: int = Field(12, gt=0)
    background_words: int = Field(60, gt=0)
    doc_len_min: int = Field(20, gt=0)
    doc_len_max: int = Field(40, gt=0)
    noise_rate: float = Field(0.2, ge=0.0, le=1.0)
    ancestor_mix: float = Field(0.35, ge=0.0, le=1.0)
    # chance a document also carries a leaf from another top-level branch
    multi_path: float = Field(0.0, ge=0.0, le=1.0)
    seed: Optional[int] = None

    @field_validator("branching")
    @classmethod
    def _positive_branching(cls, v: List[int]) -> List[int]:
        if not v or any(b <= 0 for b in v):
            raise ValueError("branching needs at least one level and positive counts")
        return v

    @model_validator(mode="after")
    def _length_range(self) -> "SyntheticSpec":
        if self.doc_len_min > self.doc_len_max:
            raise ValueError("doc_len_min must not exceed doc_len_max")
        return self


class DataConfig(SyntheticSpec):
    split: List[float] = Field(default_factory=lambda: [4 / 6, 1 / 6, 1 / 6])
    pretrain_docs: int = Field(600, ge=0)
    pretrain_perturb: float = Field(0.3, ge=0.0, le=1.0)
    min_count: int = Field(1, ge=1)


class MaskSpec(_Section):
    p_level: float = Field(0.3, ge=0.0, le=1.0)
    p_span: float = Field(0.15, ge=0.0, le=1.0)
    span_mean: float = Field(2.0, ge=1.0)
    max_resample: int = Field(16, ge=1)
    seed: Optional[int] = None


# ── model ────────────────────────────────────────────────────────────────── #
class ModelConfig(_Section):
    d_model: int = Field(128, gt=0)
    n_layers: int = Field(2, gt=0)
    n_decoder_layers: int = Field(2, gt=0)
    n_heads: int = Field(4, gt=0)
    ffn: int = Field(256, gt=0)
    max_len: int = Field(256, gt=2)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    vocab_size: int = Field(0, ge=0)
    proj_dim: int = Field(64, gt=0)
    proj_hidden: int = Field(128, gt=0)
    positions: Literal["sinusoidal", "learned"] = "sinusoidal"
    norm_first: bool = True
    tie_lm_head: bool = True

    @model_validator(mode="after")
    def _heads_divide(self) -> "ModelConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        return self


# ── objective ────────────────────────────────────────────────────────────── #
class LossWeights(_Section):
    lambda1: float = Field(1e-3, ge=0.0)
    lambda2: float = Field(1e-5, ge=0.0)
    lambda3: float = Field(1.0, ge=0.0)
    alphas: List[float] = Field(default_factory=lambda: [0.05, 0.1])
    restrict_to_gold: bool = False

    @field_validator("alphas")
    @classmethod
    def _increasing(cls, v: List[float]) -> List[float]:
        if any(a < 0 for a in v):
            raise ValueError("margins must be non-negative")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"margins must increase strictly with depth, got {v}")
        return v


# ── training ─────────────────────────────────────────────────────────────── #
_PROFILES: Dict[str, Dict[str, Any]] = {
    "desk": {"batch_size": 8, "lr": 3e-4},
    "full": {"batch_size": 12, "lr": 5e-5},
}


class TrainConfig(_Section):
    profile: Literal["desk", "full"] = "desk"
    batch_size: int = Field(8, gt=0)
    lr: float = Field(3e-4, gt=0.0)
    warmup_ratio: float = Field(0.1, ge=0.0, le=1.0)
    warmup_steps: Optional[int] = Field(None, ge=0)
    epochs: int = Field(30, gt=0)
    pretrain_epochs: int = Field(10, gt=0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    grad_clip: float = Field(1.0, gt=0.0)
    no_pretrain: bool = False
    no_lo: bool = False
    no_lt: bool = False
    no_ls: bool = False

    @model_validator(mode="before")
    @classmethod
    def _apply_profile(cls, data: Any) -> Any:
        if isinstance(data, Mapping):
            preset = _PROFILES.get(str(data.get("profile", "desk")), {})
            data = {**preset, **data}
        return data


# ── evaluation and experiments ───────────────────────────────────────────── #
class EvalConfig(_Section):
    constraint: Literal["none", "vocabulary", "hierarchy"] = "none"
    repair: Literal["drop-invalid", "strict"] = "drop-invalid"
    max_steps: Optional[int] = Field(None, gt=0)
    batch_size: int = Field(64, gt=0)


class GridConfig(_Section):
    lambda1: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])
    lambda2: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])


class EfficiencyConfig(_Section):
    proportions: List[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])

    @field_validator("proportions")
    @classmethod
    def _in_unit_interval(cls, v: List[float]) -> List[float]:
        if any(not 0.0 < p <= 1.0 for p in v):
            raise ValueError("proportions must lie in (0, 1]")
        return v


class AblateConfig(_Section):
    seeds: List[int] = Field(default_factory=lambda: [0])
    include_vanilla: bool = False


class GradcheckConfig(_Section):
    points: int = Field(50, gt=0)
    eps: float = Field(1e-4, gt=0.0)
    tolerance: float = Field(1e-4, gt=0.0)
    batch: int = Field(4, ge=2)
    vocab: int = Field(12, ge=6)
    levels: int = Field(3, ge=1)


class HiGenConfig(_Section):
    seed: int = 13
    data: DataConfig = Field(default_factory=DataConfig)
    mask: MaskSpec = Field(default_factory=MaskSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    efficiency: EfficiencyConfig = Field(default_factory=EfficiencyConfig)
    ablate: AblateConfig = Field(default_factory=AblateConfig)
    gradcheck: GradcheckConfig = Field(default_factory=GradcheckConfig)

    def with_overrides(self, **sections: Dict[str, Any]) -> "HiGenConfig":
        """Copy with some section fields replaced, re-validated."""
        raw = self.model_dump()
        for section, values in sections.items():
            if section == "seed":
                raw["seed"] = values
                continue
            raw[section].update(values)
        # an explicit profile switch should re-apply its preset
        if "train" in sections and "profile" in sections["train"]:
            for key in _PROFILES["desk"]:
                if key not in sections["train"]:
                    raw["train"].pop(key, None)
        return HiGenConfig.model_validate(raw)


# ── flat file loader ─────────────────────────────────────────────────────── #
def _coerce(raw: str, section_cls: type[BaseModel], name: str) -> Any:
    """``none`` means ``None`` only for optional fields; ``eval.constraint = none`` stays a string."""
    ann = section_cls.model_fields[name].annotation
    raw = raw.strip()
    if raw.lower() in ("none", "null") and type(None) in typing.get_args(ann):
        return None
    if typing.get_origin(ann) in (list, tuple):
        return [p.strip() for p in raw.split(",") if p.strip()]
    return raw


def parse_assignments(lines: Sequence[str], origin: str = "<config>") -> Dict[str, str]:
    """``key = value`` lines to a flat dict; ``#`` lines and blanks skipped."""
    flat: Dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{origin}:{lineno}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def _nest(flat: Mapping[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if key == "seed":
            nested["seed"] = value
            continue
        section, _, name = key.partition(".")
        section_field = HiGenConfig.model_fields.get(section)
        if not name or section_field is None or section == "seed":
            raise UsageError(f"unknown config key {key!r}")
        section_cls = section_field.annotation
        if name not in section_cls.model_fields:
            raise UsageError(f"unknown config key {key!r}")
        nested.setdefault(section, {})[name] = _coerce(value, section_cls, name)
    return nested


def load_config(
    path: Optional[str | Path] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
) -> HiGenConfig:
    """File, then ``--set key=value`` overrides, then ``--seed``."""
    flat: Dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file {p} does not exist")
        flat.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), origin=str(p)))
    flat.update(parse_assignments(list(overrides), origin="--set"))
    if seed is not None:
        flat["seed"] = str(seed)
    try:
        return HiGenConfig.model_validate(_nest(flat))
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc


def dump_config(cfg: HiGenConfig) -> List[str]:
    """Flat ``key = value`` lines, the inverse of :func:`load_config`."""
    lines = [f"seed = {cfg.seed}"]
    for section in HiGenConfig.model_fields:
        if section == "seed":
            continue
        for name, value in getattr(cfg, section).model_dump().items():
            if isinstance(value, list):
                value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            lines.append(f"{section}.{name} = {value}")
    return lines


def worker_count() -> int:
    """Bounded pool size from ``HIGEN_THREADS`` (``.env`` honoured)."""
    load_dotenv()
    raw = os.getenv("HIGEN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"HIGEN_THREADS must be an integer, got {raw!r}") from None
