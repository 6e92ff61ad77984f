"""Pipeline configuration and its ``section.field = value`` text format."""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .features import FeatureConfig
from .graph import GraphConfig
from .icp import IcpConfig
from .loop import LoopConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    output: str = "out"
    taxonomy: str | None = None  # taxonomy file; built-in defaults when None
    ground_truth: str | None = None
    ground_truth_in_camera: bool = False  # KITTI poses.txt: convert with calib.txt Tr
    loop_closure: bool = True
    range_min: float = 2.0
    range_max: float = 120.0
    submap_frames: int = 20  # N_m
    # correspondence gate of an extra first pass when no motion prior exists (second scan)
    coarse_gate: float = 3.0
    # zero-mean noise added to every odometry increment (simulates a weaker front end)
    odom_noise_trans: float = 0.0
    odom_noise_rot_deg: float = 0.0
    max_skip_ratio: float = 0.1
    posegraph_max_iters: int = 50
    loop_edge_weight: float = 1.0
    map_voxels: bool = True

    def __post_init__(self):
        if not 0 <= self.range_min < self.range_max:
            raise ValueError("need 0 <= range_min < range_max")
        if self.submap_frames < 1:
            raise ValueError("submap_frames must be >= 1")
        if self.odom_noise_trans < 0 or self.odom_noise_rot_deg < 0:
            raise ValueError("odometry noise must be non-negative")


@dataclass(frozen=True)
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)

    @property
    def seed(self) -> int:
        return self.loop.rng_seed

    def with_overrides(self, **sections) -> "PipelineConfig":
        """``cfg.with_overrides(run={"output": "x"}, loop={"zeta": 0.9})``."""
        updates = {}
        for name, values in sections.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section {name!r}")
            updates[name] = replace(getattr(self, name), **values)
        return replace(self, **updates)

    def dumps(self) -> str:
        lines = []
        for name in _SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{name}.{f.name} = {getattr(section, f.name)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        values: dict[str, dict] = {name: {} for name in _SECTIONS}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or "." not in key:
                raise ConfigError(f"line {lineno}: expected 'section.field = value', got {raw!r}")
            section, _, name = key.strip().partition(".")
            if section not in values:
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            known = {f.name for f in fields(_SECTIONS[section])}
            if name not in known:
                raise ConfigError(f"line {lineno}: unknown key {section}.{name}")
            try:
                values[section][name] = ast.literal_eval(value.strip())
            except (ValueError, SyntaxError) as exc:
                raise ConfigError(f"line {lineno}: cannot parse value {value.strip()!r}") from exc
        try:
            return cls(**{name: _SECTIONS[name](**vals) for name, vals in values.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


_SECTIONS = {
    "run": RunConfig,
    "features": FeatureConfig,
    "icp": IcpConfig,
    "graph": GraphConfig,
    "loop": LoopConfig,
}
