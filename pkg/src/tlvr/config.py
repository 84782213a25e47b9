"""Pipeline configuration shared by the CLI and the retrieval loop."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .automaton import BuildConfig
from .checker import SmoothingParams


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs in one place; field ranges are enforced by the owning types.

    fps defaults to the 3 frames-per-second sampling rate and frame_budget to
    the 32-frame answering budget.
    """

    window_size: int = 10
    stride: int = 0  # 0 means "same as window_size" (non-overlapping windows)
    fps: float = 3.0
    prune_epsilon: float = 1e-3
    max_branches: int = 16
    gamma: float = 50.0
    tau: float = 0.7
    tau_stop: float = 0.7
    frame_budget: int = 32
    label_thresholds: tuple[float, ...] = ()
    default_extension: tuple[int, int] | None = None
    endpoint: str = ""
    translator_model: str = ""
    detector_model: str = ""
    answerer_model: str = ""
    use_cache: bool = True
    detector_fanout: int = 4

    def __post_init__(self):
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if self.stride < 0:
            raise ConfigError(f"stride must be >= 0, got {self.stride}")
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.frame_budget < 1:
            raise ConfigError(f"frame_budget must be >= 1, got {self.frame_budget}")
        if not 0.0 < self.tau_stop < 1.0:
            raise ConfigError(f"tau_stop must be in (0, 1), got {self.tau_stop}")
        if self.detector_fanout < 1:
            raise ConfigError(f"detector_fanout must be >= 1, got {self.detector_fanout}")

    @property
    def effective_stride(self) -> int:
        return self.stride or self.window_size

    def build_config(self) -> BuildConfig:
        return BuildConfig(
            label_thresholds=self.label_thresholds,
            prune_epsilon=self.prune_epsilon,
            max_branches=self.max_branches,
        )

    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(gamma=self.gamma, tau=self.tau)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = dict(data)
        if "label_thresholds" in coerced:
            coerced["label_thresholds"] = tuple(coerced["label_thresholds"])
        if coerced.get("default_extension") is not None:
            alpha, beta = coerced["default_extension"]
            coerced["default_extension"] = (int(alpha), int(beta))
        try:
            return cls(**coerced)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["label_thresholds"] = list(self.label_thresholds)
        if self.default_extension is not None:
            out["default_extension"] = list(self.default_extension)
        return out
