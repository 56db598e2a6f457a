"""Rotation-ensemble pseudo-labeling for wrap-around panoramas, plus the
directional class-correlation estimator.

A panorama's left and right edges are physically adjacent, so horizontal
column rotation is a lossless augmentation: predictions on rotated
copies are rotated back and averaged into a pseudo-annotation. The
predictor is pluggable; stubs below stand in for a real teacher.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, UndefinedCorrelationError
from .formats import LabelMap
from .fusion import LogitVolume
from .tensor import FeatureMap, Tensor

Predictor = Callable[[Tensor], LogitVolume]


def _as_tensor(img) -> Tensor:
    return img.values if isinstance(img, FeatureMap) else img


def rotate_columns(img: Tensor, offset: int) -> Tensor:
    """Circularly shift a (C, H, W) tensor right by `offset` columns.

    Column w maps to (w + offset) mod W; rotating by 0 is the identity
    and rotating by offset then W - offset restores the input.
    """
    if img.ndim != 3:
        raise DimensionError(f"rotate_columns needs rank 3, got shape {img.shape}")
    width = img.shape[2]
    if not (0 <= offset < width):
        raise ContractError(f"offset {offset} outside [0, {width})")
    if offset == 0:
        return img
    return Tensor._adopt(np.roll(img.data, offset, axis=2))


@dataclass(frozen=True)
class RotationSchedule:
    """Distinct column offsets to ensemble over; 0 must be present."""

    offsets: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "offsets", tuple(int(o) for o in self.offsets))
        if not self.offsets:
            raise ContractError("rotation schedule is empty")
        if len(set(self.offsets)) != len(self.offsets):
            raise ContractError(f"rotation offsets repeat: {self.offsets}")
        if 0 not in self.offsets:
            raise ContractError("rotation schedule must contain offset 0")

    @classmethod
    def uniform(cls, width: int, count: int = 4) -> "RotationSchedule":
        if count < 1 or count > width:
            raise ContractError(f"cannot place {count} distinct offsets in [0, {width})")
        return cls(offsets=tuple(sorted({(i * width) // count for i in range(count)})))


def ensemble_members(
    img, predictor: Predictor, schedule: RotationSchedule
) -> list[tuple[int, np.ndarray]]:
    """(offset, back-rotated logits) per offset, in ascending offset order.

    `img` may be a rank-3 tensor or a FeatureMap.
    """
    img = _as_tensor(img)
    if img.ndim != 3:
        raise DimensionError(f"ensemble input needs rank 3, got shape {img.shape}")
    width = img.shape[2]
    members = []
    for offset in sorted(schedule.offsets):
        if offset >= width:
            raise ContractError(f"offset {offset} outside [0, {width})")
        volume = predictor(rotate_columns(img, offset))
        if volume.logits.shape[1:] != img.shape[1:]:
            raise ContractError(
                f"predictor changed spatial extents: {img.shape[1:]} -> "
                f"{volume.logits.shape[1:]}"
            )
        back = rotate_columns(volume.logits, (width - offset) % width)
        members.append((offset, back.data))
    return members


def _exact_mean(stacked: np.ndarray) -> np.ndarray:
    # fsum is correctly rounded, so the mean is independent of both the
    # schedule order and the accumulation order.
    count, rest = stacked.shape[0], stacked.shape[1:]
    flat = stacked.reshape(count, -1)
    sums = np.fromiter(
        (math.fsum(flat[:, i]) for i in range(flat.shape[1])),
        dtype=np.float64,
        count=flat.shape[1],
    )
    return (sums / count).reshape(rest)


def _softmax_channels(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def rotation_ensemble(
    img,
    predictor: Predictor,
    schedule: RotationSchedule,
    classes: Sequence[str] | None = None,
    average: str = "logits",
) -> tuple[LogitVolume, LabelMap]:
    """Average back-rotated predictions and take the per-pixel argmax.

    `img` may be a rank-3 tensor or a FeatureMap. Ties in the argmax go
    to the lowest class index. `classes` names the pseudo-label map;
    generic names are generated when omitted. `average` picks the
    ensembled quantity: raw scores ("logits", the default) or softmax
    probabilities ("probabilities").
    """
    if average not in ("logits", "probabilities"):
        raise ContractError(f"average must be 'logits' or 'probabilities', got {average!r}")
    members = ensemble_members(_as_tensor(img), predictor, schedule)
    stacked = np.stack([logits for _, logits in members])
    if average == "probabilities":
        stacked = np.stack([_softmax_channels(m) for m in stacked])
    mean = _exact_mean(stacked)
    labels = mean.argmax(axis=0)
    k = mean.shape[0]
    names = tuple(classes) if classes is not None else tuple(f"class_{i}" for i in range(k))
    if len(names) != k:
        raise ContractError(f"{len(names)} class names for {k} logit channels")
    space_id = getattr(predictor, "space_id", "ensemble")
    volume = LogitVolume(space_id=space_id, logits=Tensor._adopt(mean))
    return volume, LabelMap(classes=names, indices=labels)


@dataclass(frozen=True)
class IdentityPredictor:
    """Logits are the input channels themselves: a pure per-pixel map,
    hence exactly rotation-equivariant."""

    space_id: str = "identity"

    def __call__(self, img: Tensor) -> LogitVolume:
        return LogitVolume(space_id=self.space_id, logits=img)


@dataclass(frozen=True)
class LinearPredictor:
    """Per-pixel linear map from input channels to class scores.

    Pure column-wise function of the input, so rotation-equivariant.
    """

    weights: Tensor  # (K, C)
    space_id: str = "linear"

    def __call__(self, img: Tensor) -> LogitVolume:
        if self.weights.ndim != 2 or self.weights.shape[1] != img.shape[0]:
            raise DimensionError(
                f"predictor weights {self.weights.shape} do not match "
                f"{img.shape[0]} input channels"
            )
        logits = np.einsum("kc,chw->khw", self.weights.data, img.data)
        return LogitVolume(space_id=self.space_id, logits=Tensor._adopt(logits))


@dataclass(frozen=True)
class ColumnZeroPredictor:
    """Wraps a predictor and zeroes logits in a fixed column window.

    Position-dependent, so deliberately not rotation-equivariant.
    """

    inner: Predictor
    start: int
    stop: int

    def __call__(self, img: Tensor) -> LogitVolume:
        volume = self.inner(img)
        if not (0 <= self.start < self.stop <= volume.logits.shape[2]):
            raise ContractError(
                f"zero window [{self.start}, {self.stop}) outside width "
                f"{volume.logits.shape[2]}"
            )
        data = volume.logits.data.copy()
        data[:, :, self.start:self.stop] = 0.0
        return LogitVolume(space_id=volume.space_id, logits=Tensor._adopt(data))

    @property
    def space_id(self) -> str:
        return getattr(self.inner, "space_id", "ensemble")


# ---------------------------------------------------------------------------
# directional class correlation
# ---------------------------------------------------------------------------

def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    # Exactly equal vectors short-circuit so perfect correlation is an
    # exact 1.0 rather than 1.0 minus sqrt rounding.
    if np.array_equal(x, y):
        return 1.0
    xm = x - x.mean()
    ym = y - y.mean()
    return float((xm * ym).sum() / math.sqrt((xm * xm).sum() * (ym * ym).sum()))


def directional_correlation(labels: Sequence[LabelMap]) -> tuple[float, float]:
    """Mean pairwise Pearson correlation of per-position class frequencies,
    horizontally and vertically.

    Builds, per position, the class-frequency vector over the dataset;
    correlates all same-row position pairs (horizontal) and all
    same-column pairs (vertical). Positions with a constant frequency
    vector are excluded; a direction with no valid pair at all raises
    `UndefinedCorrelationError`.
    """
    if not labels:
        raise ContractError("directional_correlation needs at least one label map")
    h, w = labels[0].indices.shape
    k = len(labels[0].classes)
    if k < 2:
        raise ContractError("directional_correlation needs at least 2 classes")
    for lm in labels:
        if lm.indices.shape != (h, w) or len(lm.classes) != k:
            raise ContractError(
                "label maps must share extents and class count: "
                f"({h}, {w}, {k}) vs ({lm.indices.shape}, {len(lm.classes)})"
            )

    freq = np.zeros((k, h, w))
    rows, cols = np.indices((h, w))
    for lm in labels:
        np.add.at(freq, (lm.indices, rows, cols), 1.0)
    freq /= len(labels)
    varying = freq.max(axis=0) > freq.min(axis=0)

    def mean_r(line_vectors) -> float:
        values = []
        for vectors in line_vectors:
            for a, b in combinations(vectors, 2):
                values.append(_pearson(a, b))
        if not values:
            raise UndefinedCorrelationError(
                "every candidate position pair is degenerate (constant frequencies)"
            )
        return math.fsum(values) / len(values)

    r_hor = mean_r(
        [freq[:, row, col] for col in range(w) if varying[row, col]]
        for row in range(h)
    )
    r_ver = mean_r(
        [freq[:, row, col] for row in range(h) if varying[row, col]]
        for col in range(w)
    )
    return r_hor, r_ver
