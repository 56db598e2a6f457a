"""Shared test helpers: independent brute-force oracles.

These deliberately reimplement behavior with plain Python loops and the
stdlib (math, statistics) so the vectorized library paths are checked
against a second, independent route.
"""
from __future__ import annotations

import math
import statistics
from itertools import combinations


def softmax_list(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    total = sum(e)
    return [v / total for v in e]


def variance_list(z):
    mean = sum(z) / len(z)
    return sum((v - mean) ** 2 for v in z) / len(z)


def argmax_list(z):
    best = 0
    for i in range(1, len(z)):
        if z[i] > z[best]:
            best = i
    return best


def brute_force_fuse(volumes, spaces, default_head, strategy_name):
    """Per-pixel reference fusion over plain Python lists.

    Returns (label name grid, refined grid, selector score grid).
    """
    by_id = {s.space_id: s for s in spaces}
    heads = [(v, by_id[v.space_id]) for v in volumes]
    cin = set(heads[0][1].classes)
    for _, space in heads[1:]:
        cin &= set(space.classes)
    h, w = volumes[0].logits.shape[1:]

    names, refined, scores = [], [], []
    for row in range(h):
        name_row, refined_row, score_row = [], [], []
        for col in range(w):
            zs = [
                [float(v.logits.data[c, row, col]) for c in range(v.logits.shape[0])]
                for v, _ in heads
            ]
            if strategy_name == "min-variance":
                vals = [variance_list(z) for z in zs]
                j = min(range(len(vals)), key=lambda i: (vals[i], i))
            elif strategy_name == "max-probability":
                vals = [max(softmax_list(z)) for z in zs]
                j = max(range(len(vals)), key=lambda i: (vals[i], -i))
            elif strategy_name == "calibrated-ratio":
                vals = []
                for z in zs:
                    p = sorted(softmax_list(z))
                    vals.append(p[-1] / p[-2])
                j = max(range(len(vals)), key=lambda i: (vals[i], -i))
            else:
                raise ValueError(strategy_name)

            space = heads[j][1]
            default_space = heads[default_head][1]
            default_name = default_space.classes[argmax_list(zs[default_head])]
            own_name = space.classes[argmax_list(zs[j])]
            if own_name in cin:
                candidates = [i for i, n in enumerate(space.classes) if n in cin]
                best = candidates[0]
                for i in candidates[1:]:
                    if zs[j][i] > zs[j][best]:
                        best = i
                name = space.classes[best]
                is_refined = name != default_name
            else:
                name = default_name
                is_refined = False
            name_row.append(name)
            refined_row.append(is_refined)
            score_row.append(vals[j])
        names.append(name_row)
        refined.append(refined_row)
        scores.append(score_row)
    return names, refined, scores


def brute_force_directional_correlation(label_maps):
    """Reference pairwise-Pearson estimator built on statistics.correlation."""
    h, w = label_maps[0].indices.shape
    k = len(label_maps[0].classes)
    freq = {}
    for row in range(h):
        for col in range(w):
            counts = [0] * k
            for lm in label_maps:
                counts[int(lm.indices[row, col])] += 1
            freq[(row, col)] = [c / len(label_maps) for c in counts]
    valid = {pos: max(v) > min(v) for pos, v in freq.items()}

    def pair_value(x, y):
        if x == y:
            return 1.0
        return statistics.correlation(x, y)

    hor = []
    for row in range(h):
        cols = [c for c in range(w) if valid[(row, c)]]
        for c1, c2 in combinations(cols, 2):
            hor.append(pair_value(freq[(row, c1)], freq[(row, c2)]))
    ver = []
    for col in range(w):
        rows = [r for r in range(h) if valid[(r, col)]]
        for r1, r2 in combinations(rows, 2):
            ver.append(pair_value(freq[(r1, col)], freq[(r2, col)]))
    return math.fsum(hor) / len(hor), math.fsum(ver) / len(ver)
