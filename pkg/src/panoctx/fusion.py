"""Per-pixel fusion of predictions made in heterogeneous label spaces.

Each head emits unnormalized scores over its own class list. Fusion
picks the most reliable head per pixel (lowest variance, highest
softmax probability, or highest top-1/top-2 probability ratio), and,
when that head's prediction lies in the intersection of all class
lists, re-labels the pixel restricted to that intersection. Ties break
toward the lowest head or class index everywhere.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import formats
from .errors import ContractError, DimensionError, SchemaError
from .formats import LabelMap
from .tensor import Tensor


@dataclass(frozen=True)
class SemanticSpace:
    """An ordered class list identified by a source id."""

    space_id: str
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ContractError(f"space {self.space_id!r} has no classes")
        if len(set(self.classes)) != len(self.classes):
            raise ContractError(f"space {self.space_id!r} repeats class names")


@dataclass(frozen=True)
class LogitVolume:
    """Unnormalized per-class scores of one head: a (C, H, W) tensor."""

    space_id: str
    logits: Tensor

    def __post_init__(self) -> None:
        if self.logits.ndim != 3:
            raise DimensionError(
                f"logit volume must be (C, H, W), got shape {self.logits.shape}"
            )


class FusionStrategy(enum.Enum):
    MIN_VARIANCE = "min-variance"
    MAX_PROBABILITY = "max-probability"
    CALIBRATED_RATIO = "calibrated-ratio"


@dataclass(frozen=True)
class FusedResult:
    """Fused labels, per-pixel selector scores, and the refinement mask.

    `refined_mask` marks pixels whose label was re-derived inside the
    intersection and differs from the default head's own prediction.
    """

    label_map: LabelMap
    uncertainty: np.ndarray
    refined_mask: np.ndarray
    intersection: tuple[str, ...]


def intersect_spaces(spaces: Sequence[SemanticSpace]) -> tuple[str, ...]:
    """Class names present in every space, ordered by name."""
    if not spaces:
        raise ContractError("intersect_spaces needs at least one space")
    common = set(spaces[0].classes)
    for space in spaces[1:]:
        common &= set(space.classes)
    return tuple(sorted(common))


def pixel_variance(z) -> float:
    """Population variance of a score vector: (1/C) * sum((z_c - mean)^2)."""
    arr = np.asarray(z, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise ContractError("pixel_variance needs at least one score")
    return float(np.mean((arr - arr.mean()) ** 2))


def _softmax(z: np.ndarray, axis: int = 0) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _selector_scores(stacks: Sequence[np.ndarray], strategy: FusionStrategy):
    """Per-head score grids and whether selection minimizes or maximizes.

    Each element of `stacks` is one head's (C, ...) score array.
    """
    scores = []
    for z in stacks:
        if strategy is FusionStrategy.MIN_VARIANCE:
            scores.append(np.mean((z - z.mean(axis=0)) ** 2, axis=0))
        elif strategy is FusionStrategy.MAX_PROBABILITY:
            scores.append(_softmax(z).max(axis=0))
        elif strategy is FusionStrategy.CALIBRATED_RATIO:
            if z.shape[0] < 2:
                raise ContractError(
                    "calibrated ratio needs heads with at least 2 classes"
                )
            p = np.sort(_softmax(z), axis=0)
            # p[-2] can underflow to zero for extreme gaps; inf is a
            # legitimate "maximally confident" score for the argmax
            with np.errstate(divide="ignore"):
                scores.append(p[-1] / p[-2])
        else:  # pragma: no cover - enum is closed
            raise ContractError(f"unknown strategy {strategy}")
    return np.stack(scores), strategy is FusionStrategy.MIN_VARIANCE


def select_head(z_per_head: Sequence, strategy: FusionStrategy) -> int:
    """Index of the head the strategy prefers; ties go to the lowest index."""
    if not z_per_head:
        raise ContractError("select_head needs at least one head")
    stacks = [np.asarray(z, dtype=np.float64).reshape(-1, 1) for z in z_per_head]
    scores, minimize = _selector_scores(stacks, strategy)
    flat = scores[:, 0]
    return int(np.argmin(flat) if minimize else np.argmax(flat))


def fuse(
    volumes: Sequence[LogitVolume],
    spaces: Sequence[SemanticSpace],
    default_head: int,
    strategy: FusionStrategy,
) -> FusedResult:
    """Fuse per-head logit volumes into one label map over the default space.

    Per pixel: pick head j* with `strategy`; if j*'s full-space argmax
    lies in the intersection of all spaces, re-label as the argmax over
    the intersection's classes within j*'s scores, else keep the default
    head's own argmax. The uncertainty grid stores j*'s selector score.
    """
    if not volumes:
        raise ContractError("fuse needs at least one logit volume")
    by_id = {s.space_id: s for s in spaces}
    aligned: list[SemanticSpace] = []
    for v in volumes:
        space = by_id.get(v.space_id)
        if space is None:
            raise ContractError(f"no semantic space for volume {v.space_id!r}")
        if v.logits.shape[0] != len(space.classes):
            raise ContractError(
                f"volume {v.space_id!r} carries {v.logits.shape[0]} classes, "
                f"space defines {len(space.classes)}"
            )
        aligned.append(space)
    h, w = volumes[0].logits.shape[1:]
    for v in volumes:
        if v.logits.shape[1:] != (h, w):
            raise DimensionError(
                f"volumes disagree spatially: {(h, w)} vs {v.logits.shape[1:]}"
            )
    if not (0 <= default_head < len(volumes)):
        raise ContractError(f"default head {default_head} out of range")

    cin = intersect_spaces(aligned)
    cin_set = set(cin)
    default_space = aligned[default_head]
    class_pos = {name: i for i, name in enumerate(default_space.classes)}

    stacks = [v.logits.data for v in volumes]
    scores, minimize = _selector_scores(stacks, strategy)
    selected = np.argmin(scores, axis=0) if minimize else np.argmax(scores, axis=0)
    uncertainty = np.take_along_axis(scores, selected[None], axis=0)[0]

    # Per head: plain argmax, whether it falls in the intersection, and the
    # intersection-restricted argmax mapped into the default head's indices.
    applies = np.zeros((len(volumes), h, w), dtype=bool)
    refined_idx = np.zeros((len(volumes), h, w), dtype=np.int64)
    for j, (v, space) in enumerate(zip(volumes, aligned)):
        own_argmax = v.logits.data.argmax(axis=0)
        in_cin = np.array([name in cin_set for name in space.classes])
        applies[j] = in_cin[own_argmax]
        if cin:
            # Candidate rows in the head's own index order so argmax ties
            # break toward the lowest class index of that head.
            candidates = sorted(space.classes.index(name) for name in cin)
            sub = v.logits.data[candidates]
            pick = np.asarray(candidates)[sub.argmax(axis=0)]
            to_default = np.array(
                [class_pos.get(name, -1) for name in space.classes], dtype=np.int64
            )
            refined_idx[j] = to_default[pick]

    default_labels = volumes[default_head].logits.data.argmax(axis=0)
    grid = selected[None]
    applied = np.take_along_axis(applies, grid, axis=0)[0]
    refined_labels = np.take_along_axis(refined_idx, grid, axis=0)[0]
    final = np.where(applied, refined_labels, default_labels)
    refined_mask = applied & (final != default_labels)

    return FusedResult(
        label_map=LabelMap(classes=default_space.classes, indices=final),
        uncertainty=uncertainty,
        refined_mask=refined_mask,
        intersection=cin,
    )


# ---------------------------------------------------------------------------
# volume files: tensor container + JSON sidecar declaring the space
# ---------------------------------------------------------------------------

def save_logit_volume(path, volume: LogitVolume, space: SemanticSpace) -> None:
    formats.save_tensors(path, {"logits": volume.logits})
    formats.write_json(
        formats.sidecar_path(path),
        {"space_id": space.space_id, "classes": list(space.classes)},
    )


def load_logit_volume(path) -> tuple[LogitVolume, SemanticSpace]:
    entries = formats.load_tensors(path)
    if "logits" not in entries:
        raise SchemaError(f"{path} does not contain a 'logits' tensor")
    side = formats.sidecar_path(path)
    if not side.exists():
        raise SchemaError(f"missing sidecar {side} for volume {path}")
    meta = json.loads(side.read_text())
    if "space_id" not in meta or "classes" not in meta:
        raise SchemaError(f"sidecar {side} needs 'space_id' and 'classes'")
    space = SemanticSpace(space_id=str(meta["space_id"]), classes=tuple(meta["classes"]))
    logits = entries["logits"]
    if logits.ndim != 3 or logits.shape[0] != len(space.classes):
        raise SchemaError(
            f"{path}: logits shape {logits.shape} does not match "
            f"{len(space.classes)} sidecar classes"
        )
    return LogitVolume(space_id=space.space_id, logits=logits), space
