"""Segment, pyramid, and full pairwise attention over feature maps.

All three forwards share the tensor primitives but compose them
independently: `nonlocal_forward` is the quadratic pixel-to-pixel
baseline used as the equivalence oracle, `hsa_forward` attends within
horizontal segments against strip-pooled keys/values, `psa_forward`
attends from every pixel to a pyramid of pooled grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import formats
from .audit import active_ledger
from .errors import ContractError, DimensionError, GeometryError, SchemaError
from .tensor import (
    FeatureMap,
    Tensor,
    adaptive_avg_pool,
    add,
    concat_channels,
    concat_h,
    matmul,
    project_1x1,
    reshape,
    scale,
    softmax_rows,
    split_h,
    transpose2d,
)


def default_reduced(channels: int) -> int:
    """Query/key channel width used when a config leaves it unset."""
    return max(channels // 8, 1)


@dataclass(frozen=True)
class HsaConfig:
    """Geometry of horizontal segment attention.

    `segments` horizontal bands, keys/values strip-pooled to
    (pooled_h, pooled_w). `reduced_channels=None` derives the query/key
    width as max(C/8, 1). The affinity-scaling and residual toggles
    default off.
    """

    segments: int = 4
    pooled_h: int = 2
    pooled_w: int = 16
    reduced_channels: int | None = None
    scale_affinity: bool = False
    residual: bool = False

    def __post_init__(self) -> None:
        if self.segments < 1 or self.pooled_h < 1 or self.pooled_w < 1:
            raise ContractError(f"segment/pool counts must be >= 1: {self}")
        if self.reduced_channels is not None and self.reduced_channels < 1:
            raise ContractError(f"reduced_channels must be >= 1: {self}")


@dataclass(frozen=True)
class PsaConfig:
    """Geometry of pyramid space attention: one pooled grid per scale."""

    scales: tuple[tuple[int, int], ...] = ((3, 3), (4, 4), (6, 6))
    reduced_channels: int | None = None
    scale_affinity: bool = False
    residual: bool = False

    def __post_init__(self) -> None:
        if not self.scales:
            raise ContractError("PsaConfig needs at least one scale")
        if any(ph < 1 or pw < 1 for ph, pw in self.scales):
            raise ContractError(f"pooled extents must be >= 1: {self.scales}")
        if self.reduced_channels is not None and self.reduced_channels < 1:
            raise ContractError(f"reduced_channels must be >= 1: {self}")


@dataclass(frozen=True)
class AttentionWeights:
    """Projection matrices: wq, wk (reduced x C) and wv (C x C)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor

    def __post_init__(self) -> None:
        if self.wq.ndim != 2 or self.wk.ndim != 2 or self.wv.ndim != 2:
            raise DimensionError("attention weights must be rank-2")
        if self.wq.shape != self.wk.shape:
            raise DimensionError(
                f"wq and wk shapes disagree: {self.wq.shape} vs {self.wk.shape}"
            )
        ce = self.wq.shape[1]
        if self.wv.shape != (ce, ce):
            raise DimensionError(
                f"wv must be ({ce}, {ce}) to preserve channels, got {self.wv.shape}"
            )


@dataclass(frozen=True)
class HeadWeights:
    """Weights for a combined context head: one HSA set, one PSA set per scale."""

    hsa: AttentionWeights
    psa: tuple[AttentionWeights, ...]


def random_weights(channels: int, reduced: int | None = None, rng=None) -> AttentionWeights:
    rng = rng if rng is not None else np.random.default_rng()
    c = reduced if reduced is not None else default_reduced(channels)
    s = 1.0 / math.sqrt(channels)
    return AttentionWeights(
        wq=Tensor(rng.standard_normal((c, channels)) * s),
        wk=Tensor(rng.standard_normal((c, channels)) * s),
        wv=Tensor(rng.standard_normal((channels, channels)) * s),
    )


def random_head_weights(channels: int, hsa: HsaConfig, psa: PsaConfig, rng=None) -> HeadWeights:
    rng = rng if rng is not None else np.random.default_rng()
    return HeadWeights(
        hsa=random_weights(channels, hsa.reduced_channels, rng),
        psa=tuple(
            random_weights(channels, psa.reduced_channels, rng) for _ in psa.scales
        ),
    )


def _check_weights(f: FeatureMap, w: AttentionWeights) -> int:
    if w.wq.shape[1] != f.channels:
        raise DimensionError(
            f"weights expect {w.wq.shape[1]} channels, feature map has {f.channels}"
        )
    return w.wq.shape[0]


def _count_only(ledger, entries: int, reduced: int, channels: int) -> None:
    # Mirror of the materialized path: entries*C MACs for the affinity
    # product, entries*Ce for the aggregation product.
    ledger.open_map(entries)
    ledger.add_macs(entries * reduced + entries * channels)
    ledger.close_map(entries)


def _attend(
    f: FeatureMap,
    pooled_h: int,
    pooled_w: int,
    w: AttentionWeights,
    scale_affinity: bool,
    capture: list | None = None,
) -> FeatureMap:
    ce, h, wd = f.channels, f.height, f.width
    c = w.wq.shape[0]
    q = project_1x1(f, w.wq)                                  # (c, H, W)
    k = adaptive_avg_pool(project_1x1(f, w.wk), pooled_h, pooled_w)
    v = adaptive_avg_pool(project_1x1(f, w.wv), pooled_h, pooled_w)
    qm = transpose2d(reshape(q.values, (c, h * wd)))          # (HW, c)
    km = reshape(k.values, (c, pooled_h * pooled_w))          # (c, P)
    entries = (h * wd) * (pooled_h * pooled_w)
    ledger = active_ledger()
    if ledger is not None:
        ledger.open_map(entries)
    a = matmul(qm, km)                                        # (HW, P)
    if scale_affinity:
        a = scale(a, 1.0 / math.sqrt(c))
    a = softmax_rows(a)
    if capture is not None:
        capture.append(a)
    vm = reshape(v.values, (ce, pooled_h * pooled_w))         # (Ce, P)
    out = matmul(vm, transpose2d(a))                          # (Ce, HW)
    if ledger is not None:
        ledger.close_map(entries)
    return FeatureMap(reshape(out, (ce, h, wd)))


def _check_hsa_geometry(f: FeatureMap, cfg: HsaConfig) -> None:
    if f.height % cfg.segments != 0:
        raise GeometryError(
            f"height {f.height} is not divisible into {cfg.segments} segments"
        )
    seg_h = f.height // cfg.segments
    if cfg.pooled_h > seg_h or cfg.pooled_w > f.width:
        raise GeometryError(
            f"pooled grid ({cfg.pooled_h}, {cfg.pooled_w}) exceeds segment extents "
            f"({seg_h}, {f.width})"
        )


def hsa_forward(f: FeatureMap, cfg: HsaConfig, w: AttentionWeights) -> FeatureMap:
    """Horizontal segment attention; output shape equals input shape."""
    _check_hsa_geometry(f, cfg)
    c = _check_weights(f, w)
    ledger = active_ledger()
    if ledger is not None and ledger.counting_only:
        seg_h = f.height // cfg.segments
        entries = (seg_h * f.width) * (cfg.pooled_h * cfg.pooled_w)
        for _ in range(cfg.segments):
            _count_only(ledger, entries, c, f.channels)
        out = FeatureMap(Tensor._adopt(np.zeros(f.values.shape)))
    else:
        parts = [
            _attend(seg, cfg.pooled_h, cfg.pooled_w, w, cfg.scale_affinity)
            for seg in split_h(f, cfg.segments)
        ]
        out = concat_h(parts)
    if cfg.residual:
        out = FeatureMap(add(out.values, f.values))
    return out


def hsa_attention_maps(f: FeatureMap, cfg: HsaConfig, w: AttentionWeights) -> list[Tensor]:
    """Post-softmax affinity map per segment, each (segH*W, poolH*poolW)."""
    _check_hsa_geometry(f, cfg)
    _check_weights(f, w)
    maps: list[Tensor] = []
    for seg in split_h(f, cfg.segments):
        _attend(seg, cfg.pooled_h, cfg.pooled_w, w, cfg.scale_affinity, capture=maps)
    return maps


def _check_psa_geometry(f: FeatureMap, cfg: PsaConfig) -> None:
    for ph, pw in cfg.scales:
        if ph > f.height or pw > f.width:
            raise GeometryError(
                f"scale ({ph}, {pw}) exceeds feature extents ({f.height}, {f.width})"
            )


def psa_forward(
    f: FeatureMap, cfg: PsaConfig, weights: Sequence[AttentionWeights]
) -> list[FeatureMap]:
    """Pyramid space attention: one attended map per pooled scale."""
    _check_psa_geometry(f, cfg)
    if len(weights) != len(cfg.scales):
        raise ContractError(
            f"need one weight set per scale: {len(weights)} given for {len(cfg.scales)} scales"
        )
    outs: list[FeatureMap] = []
    ledger = active_ledger()
    for (ph, pw), w in zip(cfg.scales, weights):
        c = _check_weights(f, w)
        if ledger is not None and ledger.counting_only:
            _count_only(ledger, f.height * f.width * ph * pw, c, f.channels)
            out = FeatureMap(Tensor._adopt(np.zeros(f.values.shape)))
        else:
            out = _attend(f, ph, pw, w, cfg.scale_affinity)
        if cfg.residual:
            out = FeatureMap(add(out.values, f.values))
        outs.append(out)
    return outs


def psa_attention_maps(
    f: FeatureMap, cfg: PsaConfig, weights: Sequence[AttentionWeights]
) -> list[Tensor]:
    """Post-softmax affinity map per scale, each (H*W, poolH*poolW)."""
    _check_psa_geometry(f, cfg)
    maps: list[Tensor] = []
    for (ph, pw), w in zip(cfg.scales, weights):
        _check_weights(f, w)
        _attend(f, ph, pw, w, cfg.scale_affinity, capture=maps)
    return maps


def nonlocal_forward(f: FeatureMap, w: AttentionWeights, capture: list | None = None) -> FeatureMap:
    """Full pairwise attention: every pixel attends to every pixel.

    The quadratic baseline; serves as the equivalence oracle and the
    complexity reference point for the efficient variants.
    """
    c = _check_weights(f, w)
    ce, h, wd = f.channels, f.height, f.width
    hw = h * wd
    entries = hw * hw
    ledger = active_ledger()
    if ledger is not None and ledger.counting_only:
        _count_only(ledger, entries, c, ce)
        return FeatureMap(Tensor._adopt(np.zeros(f.values.shape)))
    q = project_1x1(f, w.wq)
    k = project_1x1(f, w.wk)
    v = project_1x1(f, w.wv)
    qm = transpose2d(reshape(q.values, (c, hw)))              # (HW, c)
    km = reshape(k.values, (c, hw))                           # (c, HW)
    if ledger is not None:
        ledger.open_map(entries)
    a = softmax_rows(matmul(qm, km))                          # (HW, HW)
    if capture is not None:
        capture.append(a)
    out = matmul(reshape(v.values, (ce, hw)), transpose2d(a))  # (Ce, HW)
    if ledger is not None:
        ledger.close_map(entries)
    return FeatureMap(reshape(out, (ce, h, wd)))


def context_head(
    f: FeatureMap, hsa_cfg: HsaConfig, psa_cfg: PsaConfig, weights: HeadWeights
) -> FeatureMap:
    """Concatenate backbone, HSA output, and per-scale PSA outputs along channels.

    Output channels = C * (2 + number of PSA scales); spatial extents preserved.
    """
    parts = [f, hsa_forward(f, hsa_cfg, weights.hsa)]
    parts.extend(psa_forward(f, psa_cfg, weights.psa))
    return concat_channels(parts)


# ---------------------------------------------------------------------------
# weight import/export (flat binary container, see panoctx.formats)
# ---------------------------------------------------------------------------

def save_weights(path, w: AttentionWeights) -> None:
    formats.save_tensors(path, {"wq": w.wq, "wk": w.wk, "wv": w.wv})


def load_weights(path) -> AttentionWeights:
    entries = formats.load_tensors(path)
    try:
        return AttentionWeights(wq=entries["wq"], wk=entries["wk"], wv=entries["wv"])
    except KeyError as missing:
        raise SchemaError(f"weight file {path} lacks tensor {missing}") from None


def save_head_weights(path, w: HeadWeights) -> None:
    entries: dict[str, Tensor] = {
        "hsa.wq": w.hsa.wq, "hsa.wk": w.hsa.wk, "hsa.wv": w.hsa.wv,
    }
    for i, scale_w in enumerate(w.psa):
        entries[f"psa{i}.wq"] = scale_w.wq
        entries[f"psa{i}.wk"] = scale_w.wk
        entries[f"psa{i}.wv"] = scale_w.wv
    formats.save_tensors(path, entries)


def load_head_weights(path) -> HeadWeights:
    entries = formats.load_tensors(path)
    try:
        hsa = AttentionWeights(
            wq=entries["hsa.wq"], wk=entries["hsa.wk"], wv=entries["hsa.wv"]
        )
        psa = []
        i = 0
        while f"psa{i}.wq" in entries:
            psa.append(
                AttentionWeights(
                    wq=entries[f"psa{i}.wq"],
                    wk=entries[f"psa{i}.wk"],
                    wv=entries[f"psa{i}.wv"],
                )
            )
            i += 1
    except KeyError as missing:
        raise SchemaError(f"head weight file {path} lacks tensor {missing}") from None
    if not psa:
        raise SchemaError(f"head weight file {path} has no PSA scales")
    return HeadWeights(hsa=hsa, psa=tuple(psa))
