"""Command-line front end: bench, gradcheck, fuse, distill.

Every command takes --seed, --out, and --config (a flat ``key = value``
file whose entries are overridden by flags). Reports are deterministic
given identical flags: CSV/JSON bytes do not change between runs, and
wall-clock measurements go to a separate timing.json. Exit codes:
0 success, 1 check failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import audit
from . import tensor as tc
from .attention import (
    AttentionWeights,
    HeadWeights,
    HsaConfig,
    PsaConfig,
    context_head,
    hsa_forward,
    load_head_weights,
    nonlocal_forward,
    psa_forward,
    random_head_weights,
    save_head_weights,
)
from .autodiff import grad_check
from .distill import (
    ColumnZeroPredictor,
    IdentityPredictor,
    LinearPredictor,
    RotationSchedule,
    ensemble_members,
    rotation_ensemble,
)
from .errors import PanoctxError, SchemaError
from .formats import LabelMap, load_tensors, save_float_raster, save_label_map, save_tensors, write_json
from .fusion import FusionStrategy, fuse, load_logit_volume
from .tensor import FeatureMap, Tensor

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

_STRATEGIES = [s.value for s in FusionStrategy]
_STUBS = ["identity", "columnwise", "window-zero"]


# ---------------------------------------------------------------------------
# option parsing and config-file merging
# ---------------------------------------------------------------------------

class RunConfig(dict):
    """Resolved per-command parameters with attribute access."""

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError as exc:
            raise AttributeError(key) from exc


def _parse_bool(raw: str) -> bool:
    lowered = str(raw).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise SchemaError(f"expected a boolean, got {raw!r}")


def _parse_pair(raw: str) -> tuple[int, int]:
    parts = str(raw).lower().split("x")
    if len(parts) != 2:
        raise SchemaError(f"expected AxB, got {raw!r}")
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise SchemaError(f"expected integers in AxB, got {raw!r}") from None
    return a, b


def _parse_pairs(raw: str) -> tuple[tuple[int, int], ...]:
    items = [p for p in str(raw).split(",") if p.strip()]
    return tuple(_parse_pair(p) for p in items)


def _parse_ints(raw: str) -> tuple[int, ...]:
    items = [p for p in str(raw).split(",") if p.strip()]
    try:
        return tuple(int(p) for p in items)
    except ValueError:
        raise SchemaError(f"expected comma-separated integers, got {raw!r}") from None


def _read_config_file(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SchemaError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def _resolve(args: argparse.Namespace, keys: dict) -> RunConfig:
    cfg = RunConfig({k: default for k, (_, default) in keys.items()})
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key not in keys:
                raise SchemaError(
                    f"unknown config key {key!r}; valid keys: {', '.join(sorted(keys))}"
                )
            convert = keys[key][0]
            cfg[key] = convert(raw)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="root seed for all randomness (default 0)")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--config", type=str, default=None,
                        help="flat 'key = value' config file; flags override it")
    parser.add_argument("--no-figures", dest="figures", action="store_false",
                        default=None, help="skip PNG figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panoctx",
        description="Attention complexity benchmarks, gradient checks, "
                    "multi-space fusion, and rotation-ensemble distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run the attention complexity benchmark matrix")
    p.add_argument("--shapes", type=str, default=None,
                   help="comma-separated HxW feature shapes (default 64x128)")
    p.add_argument("--channels", type=int, default=None, help="feature channels (default 8)")
    p.add_argument("--segments", type=int, default=None, help="segment count N (default 4)")
    p.add_argument("--pool", type=str, default=None, help="strip-pool grid AxB (default 2x16)")
    p.add_argument("--psa-scales", dest="psa_scales", type=str, default=None,
                   help="pyramid scales, e.g. 3x3,4x4,6x6")
    p.add_argument("--mem-limit-mb", dest="mem_limit_mb", type=int, default=None,
                   help="materialize affinity maps only under this size (default 256)")
    p.add_argument("--materialize", action="store_true", default=None,
                   help="force full materialization regardless of size")
    p.add_argument("--weights", type=str, default=None,
                   help="head-weight container to reuse instead of seeded weights")
    p.add_argument("--dump-weights", dest="dump_weights", type=str, default=None,
                   help="write the head weights used to this path")
    _add_shared(p)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--ops", type=str, default=None,
                   help=f"comma-separated subset of: {', '.join(_GRAD_OP_NAMES)}")
    p.add_argument("--seeds", type=int, default=None, help="random repetitions (default 5)")
    p.add_argument("--tol", type=float, default=None, help="pass tolerance (default 1e-4)")
    p.add_argument("--step", type=float, default=None, help="finite-difference step (default 1e-5)")
    _add_shared(p)

    p = sub.add_parser("fuse", help="fuse multi-space logit volumes into one label map")
    p.add_argument("--volumes", type=str, default=None,
                   help="comma-separated logit-volume files (each with a JSON sidecar)")
    p.add_argument("--default-head", dest="default_head", type=int, default=None,
                   help="head whose space names the output (default 0)")
    p.add_argument("--strategy", type=str, default=None, choices=_STRATEGIES,
                   help="head-selection strategy")
    _add_shared(p)

    p = sub.add_parser("distill", help="rotation-ensemble pseudo-labels for a panorama")
    p.add_argument("--input", type=str, default=None,
                   help="tensor container holding the (C,H,W) panorama features")
    p.add_argument("--stub", type=str, default=None, choices=_STUBS,
                   help="stand-in predictor (default columnwise)")
    p.add_argument("--classes", type=int, default=None,
                   help="class count for the columnwise stub (default 5)")
    p.add_argument("--offsets", type=str, default=None,
                   help="comma-separated column offsets (default 0,W/4,W/2,3W/4)")
    _add_shared(p)

    return parser


def _timing_file(out_dir: Path, command: str, seconds: dict) -> None:
    write_json(out_dir / "timing.json", {
        "command": command,
        "seconds": seconds,
        "written_at": datetime.now(timezone.utc).isoformat(),
    })


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

_BENCH_KEYS = {
    "shapes": (str, "64x128"),
    "channels": (int, 8),
    "segments": (int, 4),
    "pool": (str, "2x16"),
    "psa_scales": (str, "3x3,4x4,6x6"),
    "mem_limit_mb": (int, 256),
    "materialize": (_parse_bool, False),
    "weights": (str, None),
    "dump_weights": (str, None),
    "seed": (int, 0),
    "out": (str, "reports/bench"),
    "figures": (_parse_bool, True),
}


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _BENCH_KEYS)
    shapes = _parse_pairs(cfg.shapes)
    if not shapes:
        raise SchemaError("the shape grid is empty")
    pool_h, pool_w = _parse_pair(cfg.pool)
    scales = _parse_pairs(cfg.psa_scales)
    if not scales:
        raise SchemaError("the pyramid scale list is empty")
    mem_limit_bytes = cfg.mem_limit_mb * 1024 * 1024

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(cfg.seed)
    feature_seqs, weight_seqs = root.spawn(2)
    feature_seqs = feature_seqs.spawn(len(shapes))
    weight_seqs = weight_seqs.spawn(len(shapes))

    rows: list[dict] = []
    seconds: dict[str, float] = {}
    dumped = False
    for idx, (he, we) in enumerate(shapes):
        feats = FeatureMap(Tensor(
            np.random.default_rng(feature_seqs[idx]).standard_normal((cfg.channels, he, we))
        ))
        hsa_cfg = HsaConfig(segments=cfg.segments, pooled_h=pool_h, pooled_w=pool_w)
        nopool_cfg = HsaConfig(segments=cfg.segments,
                               pooled_h=he // cfg.segments, pooled_w=we)
        psa_cfg = PsaConfig(scales=scales)
        if cfg.weights:
            head = load_head_weights(cfg.weights)
            if len(head.psa) != len(scales):
                raise SchemaError(
                    f"weight file has {len(head.psa)} PSA scales, run uses {len(scales)}"
                )
        else:
            head = random_head_weights(
                cfg.channels, hsa_cfg, psa_cfg,
                rng=np.random.default_rng(weight_seqs[idx]),
            )
        if cfg.dump_weights and not dumped:
            save_head_weights(cfg.dump_weights, head)
            dumped = True

        seg_hw = (he // cfg.segments) * we
        cells = [
            ("nonlocal", audit.NonLocal(), (he * we) ** 2,
             lambda: nonlocal_forward(feats, head.hsa)),
            (f"hsa_nopool[N={cfg.segments}]", audit.HsaNoPool(cfg.segments),
             seg_hw * seg_hw,
             lambda: hsa_forward(feats, nopool_cfg, head.hsa)),
            (f"hsa[N={cfg.segments},pool={pool_h}x{pool_w}]",
             audit.Hsa(cfg.segments, pool_h, pool_w),
             seg_hw * pool_h * pool_w,
             lambda: hsa_forward(feats, hsa_cfg, head.hsa)),
            (f"psa[{'+'.join(f'{a}x{b}' for a, b in scales)}]",
             audit.Psa(scales),
             he * we * max(a * b for a, b in scales),
             lambda: psa_forward(feats, psa_cfg, head.psa)),
        ]
        for name, count_cfg, peak_entries, run in cells:
            analytic = audit.analytic_counts(he, we, count_cfg)
            counting = (peak_entries * 8 > mem_limit_bytes) and not cfg.materialize
            started = time.perf_counter()
            ledger = audit.measured_counts(run, counting_only=counting)
            seconds[f"{name}@{he}x{we}"] = time.perf_counter() - started
            rows.append({
                "config": name,
                "he": he,
                "we": we,
                "analytic_entries": analytic,
                "measured_entries": ledger.affinity_entries,
                "attention_macs": ledger.attention_macs,
                "peak_live_entries": ledger.peak_live_entries,
                "mode": "counting" if counting else "materialized",
                "match": ledger.affinity_entries == analytic,
            })

    all_match = all(r["match"] for r in rows)
    header = ["config", "he", "we", "analytic_entries", "measured_entries",
              "attention_macs", "peak_live_entries"]
    _write_csv(out_dir / "bench.csv", header, [[r[k] for k in header] for r in rows])
    write_json(out_dir / "bench.json", {
        "all_match": all_match,
        "channels": cfg.channels,
        "pool": f"{pool_h}x{pool_w}",
        "psa_scales": [f"{a}x{b}" for a, b in scales],
        "rows": rows,
        "seed": cfg.seed,
        "segments": cfg.segments,
        "shapes": [f"{h}x{w}" for h, w in shapes],
    })
    _timing_file(out_dir, "bench", seconds)
    if cfg.figures:
        from . import figures
        figures.save_entries_chart(rows, out_dir / "bench.png")
    for r in rows:
        status = "ok" if r["match"] else "MISMATCH"
        print(f"bench {r['config']} @{r['he']}x{r['we']}: "
              f"analytic={r['analytic_entries']} measured={r['measured_entries']} [{status}]")
    return EXIT_OK if all_match else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _loss_against(values: tc.Tensor, reference: Tensor) -> Tensor:
    # Random-projection loss: plain sums can hide misrouted gradients.
    return tc.sum_all(tc.multiply(values, reference))


def _gc_matmul(rng):
    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 2)))
    r = Tensor(rng.standard_normal((3, 2)))
    return (lambda a, b: _loss_against(tc.matmul(a, b), r)), {"a": a, "b": b}


def _gc_softmax(rng):
    x = Tensor(rng.standard_normal((4, 6)))
    r = Tensor(rng.standard_normal((4, 6)))
    return (lambda x: _loss_against(tc.softmax_rows(x), r)), {"x": x}


def _gc_pool(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    r = Tensor(rng.standard_normal((4, 3, 5)))

    def f(x):
        pooled = tc.adaptive_avg_pool(FeatureMap(x), 3, 5)
        return _loss_against(pooled.values, r)

    return f, {"x": x}


def _gc_project(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    w = Tensor(rng.standard_normal((5, 4)))
    r = Tensor(rng.standard_normal((5, 8, 16)))

    def f(x, w):
        return _loss_against(tc.project_1x1(FeatureMap(x), w).values, r)

    return f, {"x": x, "w": w}


def _gc_split(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    refs = [Tensor(rng.standard_normal((4, 2, 16))) for _ in range(4)]

    def f(x):
        loss = None
        for part, r in zip(tc.split_h(FeatureMap(x), 4), refs):
            term = _loss_against(part.values, r)
            loss = term if loss is None else tc.add(loss, term)
        return loss

    return f, {"x": x}


def _gc_concat(rng):
    parts = {f"p{i}": Tensor(rng.standard_normal((4, 2, 16))) for i in range(4)}
    r = Tensor(rng.standard_normal((4, 8, 16)))

    def f(p0, p1, p2, p3):
        joined = tc.concat_h([FeatureMap(p) for p in (p0, p1, p2, p3)])
        return _loss_against(joined.values, r)

    return f, parts


_GC_HSA_CFG = HsaConfig(segments=4, pooled_h=2, pooled_w=5, reduced_channels=2)
_GC_PSA_CFG = PsaConfig(scales=((3, 3), (4, 4), (6, 6)), reduced_channels=2)


def _triple(rng, channels=4, reduced=2):
    return (
        Tensor(rng.standard_normal((reduced, channels)) * 0.5),
        Tensor(rng.standard_normal((reduced, channels)) * 0.5),
        Tensor(rng.standard_normal((channels, channels)) * 0.5),
    )


def _gc_hsa(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    wq, wk, wv = _triple(rng)
    r = Tensor(rng.standard_normal((4, 8, 16)))

    def f(x, wq, wk, wv):
        out = hsa_forward(FeatureMap(x), _GC_HSA_CFG, AttentionWeights(wq, wk, wv))
        return _loss_against(out.values, r)

    return f, {"x": x, "wq": wq, "wk": wk, "wv": wv}


def _gc_psa(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    point = {"x": x}
    for i in range(3):
        point[f"wq{i}"], point[f"wk{i}"], point[f"wv{i}"] = _triple(rng)
    r = Tensor(rng.standard_normal((4, 8, 16)))

    def f(x, **w):
        weights = [
            AttentionWeights(w[f"wq{i}"], w[f"wk{i}"], w[f"wv{i}"]) for i in range(3)
        ]
        outs = psa_forward(FeatureMap(x), _GC_PSA_CFG, weights)
        loss = None
        for out in outs:
            term = _loss_against(out.values, r)
            loss = term if loss is None else tc.add(loss, term)
        return loss

    return f, point


def _gc_nonlocal(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    wq, wk, wv = _triple(rng)
    r = Tensor(rng.standard_normal((4, 8, 16)))

    def f(x, wq, wk, wv):
        out = nonlocal_forward(FeatureMap(x), AttentionWeights(wq, wk, wv))
        return _loss_against(out.values, r)

    return f, {"x": x, "wq": wq, "wk": wk, "wv": wv}


def _gc_head(rng):
    x = Tensor(rng.standard_normal((4, 8, 16)))
    point = {"x": x}
    point["hq"], point["hk"], point["hv"] = _triple(rng)
    for i in range(3):
        point[f"pq{i}"], point[f"pk{i}"], point[f"pv{i}"] = _triple(rng)
    r = Tensor(rng.standard_normal((4 * 5, 8, 16)))

    def f(x, **w):
        head = HeadWeights(
            hsa=AttentionWeights(w["hq"], w["hk"], w["hv"]),
            psa=tuple(
                AttentionWeights(w[f"pq{i}"], w[f"pk{i}"], w[f"pv{i}"]) for i in range(3)
            ),
        )
        out = context_head(FeatureMap(x), _GC_HSA_CFG, _GC_PSA_CFG, head)
        return _loss_against(out.values, r)

    return f, point


_GRAD_OPS = {
    "matmul": _gc_matmul,
    "softmax": _gc_softmax,
    "pool": _gc_pool,
    "project": _gc_project,
    "split": _gc_split,
    "concat": _gc_concat,
    "hsa": _gc_hsa,
    "psa": _gc_psa,
    "nonlocal": _gc_nonlocal,
    "head": _gc_head,
}
_GRAD_OP_NAMES = list(_GRAD_OPS)

_GRADCHECK_KEYS = {
    "ops": (str, ",".join(_GRAD_OP_NAMES)),
    "seeds": (int, 5),
    "tol": (float, 1e-4),
    "step": (float, 1e-5),
    "seed": (int, 0),
    "out": (str, "reports/gradcheck"),
    "figures": (_parse_bool, True),
}


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _GRADCHECK_KEYS)
    names = [n.strip() for n in cfg.ops.split(",") if n.strip()]
    unknown = [n for n in names if n not in _GRAD_OPS]
    if unknown:
        raise SchemaError(
            f"unknown ops {unknown}; valid ops: {', '.join(_GRAD_OP_NAMES)}"
        )
    if not names:
        raise SchemaError("the op list is empty")

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(cfg.seed)
    seed_seqs = root.spawn(cfg.seeds)

    results = []
    seconds: dict[str, float] = {}
    for name in names:
        started = time.perf_counter()
        worst = 0.0
        leaves: dict[str, float] = {}
        for seq in seed_seqs:
            f, point = _GRAD_OPS[name](np.random.default_rng(seq))
            reports = grad_check(f, point, h=cfg.step, tol=cfg.tol)
            for leaf, report in reports.items():
                worst = max(worst, report.max_rel_error)
                leaves[leaf] = max(leaves.get(leaf, 0.0), report.max_rel_error)
        seconds[name] = time.perf_counter() - started
        results.append({
            "op": name,
            "max_rel_error": worst,
            "per_leaf": leaves,
            "passed": worst < cfg.tol,
        })
        status = "PASS" if worst < cfg.tol else "FAIL"
        print(f"gradcheck {name}: {status} (max rel err {worst:.3e}, tol {cfg.tol:g})")

    all_passed = all(r["passed"] for r in results)
    write_json(out_dir / "gradcheck.json", {
        "all_passed": all_passed,
        "results": results,
        "seed": cfg.seed,
        "seeds": cfg.seeds,
        "step": cfg.step,
        "tol": cfg.tol,
    })
    _timing_file(out_dir, "gradcheck", seconds)
    if cfg.figures:
        from . import figures
        figures.save_gradcheck_chart(results, cfg.tol, out_dir / "gradcheck.png")
    return EXIT_OK if all_passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------

_FUSE_KEYS = {
    "volumes": (str, None),
    "default_head": (int, 0),
    "strategy": (str, "calibrated-ratio"),
    "seed": (int, 0),
    "out": (str, "reports/fuse"),
    "figures": (_parse_bool, True),
}


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _FUSE_KEYS)
    if not cfg.volumes:
        raise SchemaError("fuse needs --volumes (comma-separated logit-volume files)")
    if cfg.strategy not in _STRATEGIES:
        raise SchemaError(
            f"unknown strategy {cfg.strategy!r}; valid strategies: {', '.join(_STRATEGIES)}"
        )
    paths = [p.strip() for p in cfg.volumes.split(",") if p.strip()]
    if not paths:
        raise SchemaError("the volume list is empty")

    started = time.perf_counter()
    volumes, spaces = [], []
    for path in paths:
        volume, space = load_logit_volume(path)
        volumes.append(volume)
        spaces.append(space)
    result = fuse(volumes, spaces, cfg.default_head, FusionStrategy(cfg.strategy))

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_label_map(out_dir / "fused_labels.bin", result.label_map)
    save_float_raster(out_dir / "uncertainty.f64", result.uncertainty)
    mask_map = LabelMap(classes=("kept", "refined"),
                        indices=result.refined_mask.astype(np.uint8))
    save_label_map(out_dir / "refined_mask.bin", mask_map)

    histogram = {name: 0 for name in result.label_map.classes}
    values, counts = np.unique(result.label_map.indices, return_counts=True)
    for value, count in zip(values, counts):
        histogram[result.label_map.classes[int(value)]] = int(count)
    total = result.refined_mask.size
    summary = {
        "default_head": cfg.default_head,
        "height": result.label_map.height,
        "histogram": histogram,
        "intersection": list(result.intersection),
        "refined_fraction": float(result.refined_mask.sum()) / total,
        "refined_pixels": int(result.refined_mask.sum()),
        "strategy": cfg.strategy,
        "volumes": [v.space_id for v in volumes],
        "width": result.label_map.width,
    }
    write_json(out_dir / "summary.json", summary)
    _timing_file(out_dir, "fuse", {"fuse": time.perf_counter() - started})
    if cfg.figures:
        from . import figures
        figures.save_label_map_figure(result.label_map, out_dir / "fused_labels.png",
                                      title="Fused labels")
        figures.save_heatmap_figure(result.uncertainty, out_dir / "uncertainty.png",
                                    title=f"Selector score ({cfg.strategy})")
    print(f"fuse: {summary['refined_pixels']}/{total} pixels refined "
          f"({summary['refined_fraction']:.4f}) with {cfg.strategy}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# distill
# ---------------------------------------------------------------------------

_DISTILL_KEYS = {
    "input": (str, None),
    "stub": (str, "columnwise"),
    "classes": (int, 5),
    "offsets": (str, None),
    "seed": (int, 0),
    "out": (str, "reports/distill"),
    "figures": (_parse_bool, True),
}


def cmd_distill(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _DISTILL_KEYS)
    if not cfg.input:
        raise SchemaError("distill needs --input (a tensor container with the panorama)")
    if cfg.stub not in _STUBS:
        raise SchemaError(f"unknown stub {cfg.stub!r}; valid stubs: {', '.join(_STUBS)}")
    entries = load_tensors(cfg.input)
    img = entries.get("image")
    if img is None:
        if len(entries) != 1:
            raise SchemaError(
                f"{cfg.input} must hold one tensor or one named 'image'; "
                f"found {list(entries)}"
            )
        img = next(iter(entries.values()))
    if img.ndim != 3:
        raise SchemaError(f"panorama must be (C, H, W), got shape {img.shape}")
    width = img.shape[2]

    if cfg.offsets is not None:
        schedule = RotationSchedule(offsets=_parse_ints(cfg.offsets))
    else:
        schedule = RotationSchedule.uniform(width, count=4)

    if cfg.stub == "identity":
        predictor = IdentityPredictor()
        class_names = [f"class_{i}" for i in range(img.shape[0])]
    elif cfg.stub == "columnwise":
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        weights = Tensor(rng.standard_normal((cfg.classes, img.shape[0])))
        predictor = LinearPredictor(weights=weights)
        class_names = [f"class_{i}" for i in range(cfg.classes)]
    else:  # window-zero wraps the identity stub so runs are weight-free
        predictor = ColumnZeroPredictor(
            inner=IdentityPredictor(), start=0, stop=max(1, width // 8)
        )
        class_names = [f"class_{i}" for i in range(img.shape[0])]

    started = time.perf_counter()
    volume, labels = rotation_ensemble(img, predictor, schedule, classes=class_names)
    members = ensemble_members(img, predictor, schedule)
    agreement = {}
    for offset, logits in members:
        member_labels = logits.argmax(axis=0)
        agreement[str(offset)] = float(np.mean(member_labels == labels.indices))

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_label_map(out_dir / "pseudo_labels.bin", labels,
                   extra={"space_id": volume.space_id})
    save_tensors(out_dir / "ensemble_logits.bin", {"logits": volume.logits})
    write_json(out_dir / "summary.json", {
        "agreement": agreement,
        "classes": list(labels.classes),
        "offsets": list(sorted(schedule.offsets)),
        "seed": cfg.seed,
        "space_id": volume.space_id,
        "stub": cfg.stub,
    })
    _timing_file(out_dir, "distill", {"distill": time.perf_counter() - started})
    if cfg.figures:
        from . import figures
        figures.save_label_map_figure(labels, out_dir / "pseudo_labels.png",
                                      title=f"Pseudo-labels ({cfg.stub} stub)")
    rates = ", ".join(f"{k}:{v:.3f}" for k, v in agreement.items())
    print(f"distill: {len(schedule.offsets)} offsets, per-offset agreement {rates}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

_COMMANDS = {
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "fuse": cmd_fuse,
    "distill": cmd_distill,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PanoctxError as exc:
        print(f"panoctx {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"panoctx {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def console_main() -> None:
    sys.exit(main())
