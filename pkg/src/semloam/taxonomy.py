"""Semantic label taxonomy: retained classes, raw-id mapping, weights, voxels."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DISCARD = -1

DEFAULT_CLASSES = (
    "road",
    "sidewalk",
    "parking",
    "other-ground",
    "building",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
    "fence",
    "other-structure",
)

# SemanticKITTI raw ids of the retained classes; everything else is dropped.
DEFAULT_RAW_TO_NAME = {
    40: "road",
    60: "road",  # lane-marking
    44: "parking",
    48: "sidewalk",
    49: "other-ground",
    50: "building",
    51: "fence",
    52: "other-structure",
    70: "vegetation",
    71: "trunk",
    72: "terrain",
    80: "pole",
    81: "traffic-sign",
}

# Inverse used by the synthetic generator.
NAME_TO_RAW = {
    "road": 40,
    "parking": 44,
    "sidewalk": 48,
    "other-ground": 49,
    "building": 50,
    "fence": 51,
    "other-structure": 52,
    "vegetation": 70,
    "trunk": 71,
    "terrain": 72,
    "pole": 80,
    "traffic-sign": 81,
}

GROUND_CLASSES = ("road", "sidewalk", "parking", "terrain", "other-ground")
VERTICAL_CLASSES = ("building", "fence")
COMPACT_CLASSES = ("pole", "trunk", "traffic-sign")

DEFAULT_VOXELS = {
    "road": 0.8,
    "sidewalk": 0.8,
    "parking": 0.8,
    "other-ground": 0.8,
    "terrain": 0.8,
    "building": 0.4,
    "vegetation": 0.4,
    "fence": 0.4,
    "other-structure": 0.4,
    "pole": 0.2,
    "trunk": 0.2,
    "traffic-sign": 0.2,
}

# SemanticKITTI colour convention, RGB.
PALETTE = {
    "road": (255, 0, 255),
    "sidewalk": (75, 0, 75),
    "parking": (255, 150, 255),
    "other-ground": (175, 0, 75),
    "building": (255, 200, 0),
    "vegetation": (0, 175, 0),
    "trunk": (135, 60, 0),
    "terrain": (150, 240, 80),
    "pole": (255, 240, 150),
    "traffic-sign": (255, 0, 0),
    "fence": (255, 120, 50),
    "other-structure": (255, 150, 0),
}
_FALLBACK_COLOR = (128, 128, 128)


@dataclass(frozen=True)
class SemanticLabel:
    id: int
    name: str


@dataclass
class LabelTaxonomy:
    classes: list[SemanticLabel]
    raw_to_class: dict[int, int]
    per_class_weight: dict[int, float]
    per_class_voxel: dict[int, float]
    ground: frozenset[int] = field(default_factory=frozenset)
    vertical: frozenset[int] = field(default_factory=frozenset)
    compact: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        for i, c in enumerate(self.classes):
            if c.id != i:
                raise ValueError(f"class {c.name!r} has id {c.id}, expected {i}")
        n = len(self.classes)
        for raw, cls in self.raw_to_class.items():
            if cls != DISCARD and not 0 <= cls < n:
                raise ValueError(f"raw id {raw} maps to unknown class {cls}")
        for cls in range(n):
            self.per_class_weight.setdefault(cls, 1.0)
            self.per_class_voxel.setdefault(cls, 0.4)
        if any(w <= 0 for w in self.per_class_weight.values()):
            raise ValueError("class weights must be positive")
        if any(v <= 0 for v in self.per_class_voxel.values()):
            raise ValueError("voxel sizes must be positive")
        lut = np.full(1 << 16, DISCARD, dtype=np.int16)
        for raw, cls in self.raw_to_class.items():
            lut[raw] = cls
        self._lut = lut

    @property
    def size(self) -> int:
        return len(self.classes)

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.id
        raise KeyError(name)

    def name_of(self, cls: int) -> str:
        return self.classes[cls].name

    def map_raw(self, raw: np.ndarray) -> np.ndarray:
        """Vectorised raw semantic id -> class id (DISCARD for dropped ids)."""
        return self._lut[np.asarray(raw, dtype=np.int64) & 0xFFFF].astype(np.int64)

    def weights(self) -> np.ndarray:
        return np.array([self.per_class_weight[i] for i in range(self.size)])

    def voxels(self) -> np.ndarray:
        return np.array([self.per_class_voxel[i] for i in range(self.size)])

    def colors(self) -> np.ndarray:
        return np.array([PALETTE.get(c.name, _FALLBACK_COLOR) for c in self.classes], dtype=np.uint8)

    def restricted(self, keep: set[str]) -> "LabelTaxonomy":
        """Same class ids, but raw ids of classes outside ``keep`` are discarded."""
        keep_ids = {self.id_of(n) for n in keep}
        raw = {r: (c if c in keep_ids else DISCARD) for r, c in self.raw_to_class.items()}
        return LabelTaxonomy(
            list(self.classes),
            raw,
            dict(self.per_class_weight),
            dict(self.per_class_voxel),
            self.ground,
            self.vertical,
            self.compact,
        )

    @classmethod
    def default(cls) -> "LabelTaxonomy":
        classes = [SemanticLabel(i, n) for i, n in enumerate(DEFAULT_CLASSES)]
        ids = {n: i for i, n in enumerate(DEFAULT_CLASSES)}
        return cls(
            classes,
            {raw: ids[name] for raw, name in DEFAULT_RAW_TO_NAME.items()},
            {i: 1.0 for i in range(len(classes))},
            {ids[n]: v for n, v in DEFAULT_VOXELS.items()},
            frozenset(ids[n] for n in GROUND_CLASSES),
            frozenset(ids[n] for n in VERTICAL_CLASSES),
            frozenset(ids[n] for n in COMPACT_CLASSES),
        )

    # -- text key-value format -------------------------------------------------

    def dumps(self) -> str:
        lines = ["classes = " + ", ".join(c.name for c in self.classes)]
        for key, group in (("ground", self.ground), ("vertical", self.vertical), ("compact", self.compact)):
            lines.append(f"{key} = " + ", ".join(self.name_of(i) for i in sorted(group)))
        for raw in sorted(self.raw_to_class):
            cls = self.raw_to_class[raw]
            lines.append(f"raw.{raw} = " + ("discard" if cls == DISCARD else self.name_of(cls)))
        for i in range(self.size):
            lines.append(f"weight.{self.name_of(i)} = {self.per_class_weight[i]!r}")
        for i in range(self.size):
            lines.append(f"voxel.{self.name_of(i)} = {self.per_class_voxel[i]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LabelTaxonomy":
        entries = {}
        for lineno, raw_line in enumerate(text.splitlines(), 1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"taxonomy line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key] = value
        if "classes" not in entries:
            raise ValueError("taxonomy file must define 'classes'")
        names = [n.strip() for n in entries.pop("classes").split(",") if n.strip()]
        ids = {n: i for i, n in enumerate(names)}

        def group(key):
            value = entries.pop(key, "")
            return frozenset(ids[n.strip()] for n in value.split(",") if n.strip())

        ground, vertical, compact = group("ground"), group("vertical"), group("compact")
        raw_map, weights, voxels = {}, {}, {}
        for key, value in entries.items():
            kind, _, name = key.partition(".")
            if kind == "raw":
                raw_map[int(name)] = DISCARD if value == "discard" else ids[value]
            elif kind == "weight":
                weights[ids[name]] = float(value)
            elif kind == "voxel":
                voxels[ids[name]] = float(value)
            else:
                raise ValueError(f"unknown taxonomy key {key!r}")
        return cls(
            [SemanticLabel(i, n) for i, n in enumerate(names)], raw_map, weights, voxels, ground, vertical, compact
        )

    @classmethod
    def load(cls, path) -> "LabelTaxonomy":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())
