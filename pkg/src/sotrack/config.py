"""Configuration models for every tunable knob.

All models reject unknown keys and range-check their values. ``RunConfig``
is the document read by the command line (YAML); ``paper_parity: true``
switches the defaults to the published hyper-parameters.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _sweep(start: float, stop: float, step: float) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]


TAU1_SWEEP = _sweep(0.1, 0.7, 0.05)
EPS_SWEEP = _sweep(0.55, 0.6, 0.025)


class TrainHyper(_Model):
    learning_rate: float = Field(1e-4, gt=0, allow_inf_nan=False)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0, allow_inf_nan=False)


class NetConfig(_Model):
    profile: Literal["desk", "paper"] = "desk"
    map_size: int = Field(25, ge=1)
    stride: int = Field(2, ge=1)
    channels: Literal[1, 3] = 3
    filters: int = Field(16, ge=1)
    hidden: int = Field(512, ge=1)
    dropout: float = Field(0.5, ge=0, lt=1)
    pool_grids: list[int] = Field(default_factory=lambda: [1, 2, 4], min_length=1)

    @field_validator("pool_grids")
    @classmethod
    def _positive_grids(cls, v):
        if any(g < 1 for g in v):
            raise ValueError("pool grids must be positive")
        return v

    def to_spec(self):
        from sotrack.nnet import LayerSpec, NetSpec, paper_layers

        if self.profile == "paper":
            layers = paper_layers(self.map_size)
        else:
            block = (LayerSpec.conv(self.filters, 5), LayerSpec.relu(), LayerSpec.maxpool(2))
            layers = block * 3 + (
                LayerSpec.multiscale_pool(tuple(self.pool_grids)),
                LayerSpec.fc(self.hidden),
                LayerSpec.relu(),
                LayerSpec.dropout(self.dropout),
                LayerSpec.fc(self.map_size * self.map_size),
                LayerSpec.sigmoid_map(),
            )
        return NetSpec(layers=layers, map_size=self.map_size, stride=self.stride,
                       channels=self.channels)


class InferenceConfig(_Model):
    tau1_sweep: list[float] = Field(default_factory=lambda: list(TAU1_SWEEP), min_length=1)
    eps_sweep: list[float] = Field(default_factory=lambda: list(EPS_SWEEP), min_length=1)
    search_scales: list[float] = Field(default_factory=lambda: [1.6, 2.0, 2.5, 3.0],
                                       min_length=1)
    size_factors: list[float] = Field(default_factory=lambda: [0.85, 0.925, 1.0, 1.08, 1.17],
                                      min_length=1)
    # map-sum threshold for accepting a search scale, as a mean per cell;
    # the absolute threshold is tau_search_mean * S^2
    tau_search_mean: float = Field(0.04, ge=0)
    center_refine: int = Field(2, ge=0)

    @field_validator("search_scales")
    @classmethod
    def _ascending(cls, v):
        if any(s <= 0 for s in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("search scales must be positive and strictly ascending")
        return v

    @field_validator("size_factors")
    @classmethod
    def _positive(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError("size factors must be positive")
        return v

    def tau_search(self, map_size: int) -> float:
        return self.tau_search_mean * map_size * map_size


class TrackerConfig(_Model):
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    positive_scales: list[float] = Field(default_factory=lambda: [1.2, 1.5, 2.0, 2.5],
                                         min_length=4, max_length=4)
    jitter: float = Field(0.1, ge=0, lt=0.5)
    negative_scales: list[float] = Field(default_factory=lambda: [1.0, 1.6],
                                         min_length=2, max_length=2)
    # negative-map sum threshold as a mean per cell: tau2 = tau2_mean * S^2
    tau2_mean: float = Field(0.04, ge=0)
    tau3: float = Field(0.8, gt=0, lt=1)
    first_frame_iterations: int = Field(20, ge=0)
    update_iterations: int = Field(1, ge=0)
    short: TrainHyper = Field(default_factory=lambda: TrainHyper(learning_rate=2e-4,
                                                                 momentum=0.5))
    long: TrainHyper = Field(default_factory=lambda: TrainHyper(learning_rate=1e-4,
                                                                momentum=0.5))

    @field_validator("positive_scales", "negative_scales")
    @classmethod
    def _scales_positive(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError("scales must be positive")
        return v

    @field_validator("negative_scales")
    @classmethod
    def _negatives_disjoint(cls, v):
        if any(s < 1 for s in v):
            raise ValueError("negative scales below 1 would overlap the target")
        return v

    def tau2(self, map_size: int) -> float:
        return self.tau2_mean * map_size * map_size


class PretrainConfig(_Model):
    dataset_size: int = Field(2000, ge=1)
    epochs: int = Field(15, ge=1)
    decay_period: int = Field(5, ge=1)
    decay_factor: float = Field(0.5, gt=0, le=1)
    negative_fraction: float = Field(0.5, gt=0, lt=1)
    negative_max_iou: float = Field(0.3, ge=0, lt=1)
    batch_size: int = Field(16, ge=1)
    image_size: int = Field(96, ge=32)
    hyper: TrainHyper = Field(default_factory=TrainHyper)

    def learning_rate(self, epoch: int) -> float:
        return self.hyper.learning_rate * self.decay_factor ** (epoch // self.decay_period)


class RunConfig(_Model):
    paper_parity: bool = False
    net: NetConfig = Field(default_factory=NetConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)

    @model_validator(mode="before")
    @classmethod
    def _apply_profile(cls, data):
        if isinstance(data, dict) and data.get("paper_parity"):
            return _merge(paper_parity_defaults(), data)
        return data

    def dump(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def paper_parity_defaults() -> dict:
    """Published values: S=50 maps, tau2=100, lr 1e-7 / 2e-7, momentum 0.9 / 0.5."""
    return {
        "paper_parity": True,
        "net": {"profile": "paper", "map_size": 50, "stride": 2},
        "pretrain": {"hyper": {"learning_rate": 1e-7, "momentum": 0.9, "weight_decay": 5e-4}},
        "tracker": {
            "inference": {"tau1_sweep": list(TAU1_SWEEP), "eps_sweep": list(EPS_SWEEP)},
            "tau2_mean": 100 / 2500,
            "tau3": 0.8,
            "first_frame_iterations": 20,
            "update_iterations": 1,
            "short": {"learning_rate": 2e-7, "momentum": 0.5, "weight_decay": 5e-4},
            "long": {"learning_rate": 2e-7, "momentum": 0.5, "weight_decay": 5e-4},
        },
    }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: configuration must be a mapping")
    return RunConfig.model_validate(data)

