"""Batch expansion with fixed augmentation suites (the OASIS defense)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError, ContractViolation
from .imaging import IDENTITY, Image, TransformSpec, apply_transform

_MAJOR = (TransformSpec("rotate", 90.0), TransformSpec("rotate", 180.0), TransformSpec("rotate", 270.0))
_SHEAR = (TransformSpec("shear", 0.55), TransformSpec("shear", 1.0), TransformSpec("shear", 0.9))

SUITES: dict[str, tuple[TransformSpec, ...]] = {
    "none": (),
    "major-rotation": _MAJOR,
    "minor-rotation": (TransformSpec("rotate", 30.0), TransformSpec("rotate", 45.0), TransformSpec("rotate", 60.0)),
    "shear": _SHEAR,
    "hflip": (TransformSpec("flip_h"),),
    "vflip": (TransformSpec("flip_v"),),
    "mr-sh": _MAJOR + _SHEAR,
}

SUITE_NAMES = tuple(SUITES)

#: suites whose every transform permutes pixels (so the pixel mean is preserved exactly)
PERMUTATION_SUITES = ("major-rotation", "hflip", "vflip")


@dataclass(frozen=True)
class AugmentationSuite:
    name: str
    transforms: tuple[TransformSpec, ...] = ()

    def __post_init__(self):
        if not self.transforms and self.name != "none":
            raise ConfigError(f"suite {self.name!r} has no transforms")

    def __len__(self) -> int:
        return len(self.transforms)


def suite(name: str) -> AugmentationSuite:
    try:
        return AugmentationSuite(name, SUITES[name])
    except KeyError:
        raise ConfigError(f"unknown suite {name!r}; valid suites: {', '.join(SUITE_NAMES)}") from None


@dataclass
class LabeledBatch:
    images: list[Image]
    labels: list[int]

    def __post_init__(self):
        self.images = list(self.images)
        self.labels = [int(y) for y in self.labels]
        if len(self.images) != len(self.labels):
            raise ContractViolation("images and labels differ in length")
        if not self.images:
            raise ContractViolation("a batch needs at least one image")

    @property
    def size(self) -> int:
        return len(self.images)

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class AugmentedBatch:
    base: LabeledBatch
    expanded: LabeledBatch
    origin_map: list[tuple[int, TransformSpec]] = field(default_factory=list)

    def originals(self) -> list[int]:
        """Expanded indices holding un-augmented images, in base order."""
        return [i for i, (_, spec) in enumerate(self.origin_map) if spec == IDENTITY]

    def members_of(self, base_index: int) -> list[int]:
        return [i for i, (b, _) in enumerate(self.origin_map) if b == base_index]


def build_augmented_batch(batch: LabeledBatch, aug: AugmentationSuite) -> AugmentedBatch:
    """Each original followed by its transforms in suite order; labels are inherited."""
    images: list[Image] = []
    labels: list[int] = []
    origin: list[tuple[int, TransformSpec]] = []
    for t, (img, label) in enumerate(zip(batch.images, batch.labels)):
        images.append(img)
        labels.append(label)
        origin.append((t, IDENTITY))
        for spec in aug.transforms:
            images.append(apply_transform(img, spec))
            labels.append(label)
            origin.append((t, spec))
    return AugmentedBatch(batch, LabeledBatch(images, labels), origin)
