"""Command-line surface.

Subcommands: profile, select, estimate, analyze, reorder, freq-report,
bench, sweep, synth-table. Exit codes: 0 success, 2 input error, 3
device/IO error, 4 internal invariant violation. All file writers are
canonical, so identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import formats, ioengine, latency, profile as profiling, reorder, select, tune
from .core import (
    WeightLayout,
    contiguity_distribution,
    distribution_stats,
    popcount,
    run_bounds,
)
from .ioengine import DeviceError


def _parse_layout(text: str) -> WeightLayout:
    try:
        rows_s, bytes_s = text.lower().split("x")
        return WeightLayout(int(rows_s), int(bytes_s))
    except ValueError as exc:
        raise ValueError(f"layout must be ROWSxROWBYTES, got {text!r}") from exc


def _parse_shim(text: str):
    try:
        overhead_s, bw_s = text.split(",")
        return float(overhead_s), float(bw_s)
    except ValueError as exc:
        raise ValueError(
            f"--shim must be OVERHEAD_US,BANDWIDTH_MBPS, got {text!r}"
        ) from exc


def _open_device(args, file_bytes_needed: int = 0):
    """RealDevice from --file/--weights, or a SyntheticDevice when --shim given."""
    if getattr(args, "shim", None):
        overhead_us, bw_mbps = _parse_shim(args.shim)
        size = max(file_bytes_needed, getattr(args, "file_bytes", 0) or 0)
        rng = np.random.default_rng(args.seed)
        data = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        # 1 MB/s moves 1 byte/us, so MB/s and bytes/us are numerically equal
        return ioengine.SyntheticDevice(
            data, overhead_us, bw_mbps, workers=args.workers, seed=args.seed
        )
    path = getattr(args, "file", None) or getattr(args, "weights", None)
    if not path:
        raise ValueError("need --file/--weights or --shim")
    return ioengine.RealDevice(path, workers=args.workers, use_direct_io=args.direct)


def _load_params(args, layout: WeightLayout, table) -> select.ChunkSelectParams:
    if args.params and args.params_file:
        raise ValueError("--params and --params-file are mutually exclusive")
    if args.params:
        try:
            start, end, step, cap = (int(x) for x in args.params.split(","))
        except ValueError as exc:
            raise ValueError(
                f"--params must be START,END,STEP,CAP in KB, got {args.params!r}"
            ) from exc
        return select.ChunkSelectParams(start, end, step, cap)
    if args.params_file:
        by_shape = tune.load_params_file(args.params_file)
        key = (layout.n_rows, layout.row_bytes)
        if key not in by_shape:
            raise ValueError(
                f"params file {args.params_file} has no feasible entry for shape "
                f"{layout.n_rows}x{layout.row_bytes}"
            )
        return by_shape[key]
    return select.default_params(layout, table)


def _print_stats(mask, layout, table, importance, elapsed_us):
    stats = distribution_stats(contiguity_distribution(mask))
    est = latency.estimate_mask_latency(mask, layout, table)
    total = float(importance[mask].sum())
    obj = total / est if est > 0 else 0.0
    print(f"selected_rows {popcount(mask)}")
    print(f"estimated_latency_us {est:.6g}")
    print(f"total_importance {total:.6g}")
    print(f"objective {obj:.6g}")
    print(f"num_chunks {stats.num_chunks}")
    print(f"mean_chunk_rows {stats.mean_chunk_rows:.6g}")
    print(f"mode_chunk_rows {stats.mode_chunk_rows}")
    print(f"selection_runtime_us {elapsed_us}")


def cmd_profile(args) -> int:
    cfg = profiling.ProfileConfig(
        target_file_path=args.file or "",
        file_bytes=args.file_bytes,
        size_step_bytes=args.step_kb * 1024,
        max_size_bytes=args.max_kb * 1024,
        trials_per_size=args.trials,
        workers=args.workers,
        use_direct_io=args.direct,
        randomize_order=args.randomize_order,
        seed=args.seed,
        device_label=args.label,
    )
    device = _open_device(args, file_bytes_needed=cfg.file_bytes) if args.shim else None
    try:
        result = profiling.run_profile(cfg, device=device)
    finally:
        if device is not None:
            device.close()
    print(profiling.warmup_and_drop_caches_hint(result.access_mode))
    print(
        f"profiled {result.sizes_bytes.size} sizes up to "
        f"{int(result.sizes_bytes[-1])} bytes in {result.elapsed_s:.1f}s"
    )
    print(f"saturation_bytes {result.saturation_bytes}")
    for s in result.flagged_sizes:
        print(f"warning: size {s} variance above threshold")
    latency.save_table(result.table, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_synth_table(args) -> int:
    params = latency.SyntheticDeviceParams(
        fixed_overhead_us=args.overhead_us,
        bandwidth_bytes_per_us=args.bandwidth_mbps,  # MB/s == bytes/us
        step_bytes=args.step_kb * 1024,
        max_bytes=args.max_kb * 1024,
    )
    table = latency.synthesize_table(params, device_label=args.label)
    latency.save_table(table, args.out)
    print(f"wrote {args.out} ({table.sizes_bytes.size} entries)")
    return 0


def cmd_select(args) -> int:
    importance = formats.read_importance(args.importance)
    if np.any(importance < 0):
        raise ValueError(f"{args.importance}: negative importance values")
    layout = _parse_layout(args.layout)
    if importance.size != layout.n_rows:
        raise ValueError(
            f"importance length {importance.size} != layout rows {layout.n_rows}"
        )
    table = latency.load_table(args.table)
    if (args.budget is None) == (args.sparsity is None):
        raise ValueError("give exactly one of --budget or --sparsity")
    if args.budget is not None:
        budget = args.budget
    else:
        budget = select.budget_from_sparsity(args.sparsity, layout.n_rows)

    method = args.baseline
    if method == "chunk":
        params = _load_params(args, layout, table)
        result = select.chunk_select(importance, budget, layout, table, params)
        mask, elapsed = result.mask, result.elapsed_us
    elif method == "topk":
        t0 = time.perf_counter_ns()
        mask = select.topk_select(importance, budget)
        elapsed = (time.perf_counter_ns() - t0) // 1000
    elif method == "threshold":
        if args.tau is None:
            raise ValueError("--baseline threshold requires --tau")
        t0 = time.perf_counter_ns()
        mask = select.threshold_select(importance, args.tau)
        elapsed = (time.perf_counter_ns() - t0) // 1000
    else:
        raise ValueError(f"unknown baseline {method!r}")

    formats.write_mask(args.out, mask)
    print(f"method {method}")
    _print_stats(mask, layout, table, importance, elapsed)
    print(f"wrote {args.out}")
    return 0


def cmd_estimate(args) -> int:
    mask = formats.read_mask(args.mask)
    layout = _parse_layout(args.layout)
    if mask.size != layout.n_rows:
        raise ValueError(f"mask rows {mask.size} != layout rows {layout.n_rows}")
    table = latency.load_table(args.table)
    est = latency.estimate_mask_latency(mask, layout, table)
    print(f"estimated_latency_us {est:.6g}")
    return 0


def cmd_analyze(args) -> int:
    print(f"{'mask':<28} {'rows':>8} {'set':>8} {'chunks':>7} {'mean':>9} {'mode':>6}")
    dists = []
    for path in args.mask:
        mask = formats.read_mask(path)
        dist = contiguity_distribution(mask)
        stats = distribution_stats(dist)
        dists.append((path, dist))
        print(
            f"{os.path.basename(path):<28} {mask.size:>8} {popcount(mask):>8} "
            f"{stats.num_chunks:>7} {stats.mean_chunk_rows:>9.6g} {stats.mode_chunk_rows:>6}"
        )
    for path, dist in dists:
        print(f"\ndistribution {os.path.basename(path)} (size count)")
        for size in sorted(dist):
            print(f"  {size} {dist[size]}")
    return 0


def _load_calibration(directory: str) -> list[np.ndarray]:
    files = sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if os.path.isfile(os.path.join(directory, name))
    )
    if not files:
        raise ValueError(f"no calibration files in {directory}")
    vectors = [formats.read_importance(path) for path in files]
    n = vectors[0].size
    for path, v in zip(files, vectors):
        if v.size != n:
            raise ValueError(f"{path}: length {v.size} != {n} of {files[0]}")
    return vectors


def _build_profile(args) -> reorder.FrequencyProfile:
    vectors = _load_calibration(args.calibrate)
    prof = reorder.FrequencyProfile(vectors[0].size, active_fraction=args.active_fraction)
    for v in vectors:
        reorder.accumulate(prof, v)
    return prof


def cmd_reorder(args) -> int:
    prof = _build_profile(args)
    perm = reorder.build_permutation(prof)
    layout = _parse_layout(args.layout)
    if layout.n_rows != prof.n_rows:
        raise ValueError(
            f"layout rows {layout.n_rows} != calibration rows {prof.n_rows}"
        )
    reorder.permute_rows(args.weights, args.out_weights, layout, perm)
    reorder.save_permutation(perm, args.out_perm)
    print(f"calibrated on {prof.num_samples} samples")
    print(f"wrote {args.out_weights}")
    print(f"wrote {args.out_perm}")
    return 0


def cmd_freq_report(args) -> int:
    prof = _build_profile(args)
    hot, cold = reorder.hot_cold_fractions(prof, args.hot_threshold, args.cold_threshold)
    counts, edges = reorder.frequency_histogram(prof, bins=args.bins)
    doc = {
        "n_rows": prof.n_rows,
        "num_samples": prof.num_samples,
        "active_fraction": float(prof.active_fraction),
        "hot_threshold": float(args.hot_threshold),
        "cold_threshold": float(args.cold_threshold),
        "hot_fraction": float(hot),
        "cold_fraction": float(cold),
        "histogram_bin_edges": [float(e) for e in edges],
        "histogram_counts": [int(c) for c in counts],
    }
    text = formats.canonical_json(doc) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    layout = _parse_layout(args.layout)
    table = latency.load_table(args.table)
    mask_files = sorted(
        os.path.join(args.masks, name)
        for name in os.listdir(args.masks)
        if os.path.isfile(os.path.join(args.masks, name))
    )
    if not mask_files:
        raise ValueError(f"no mask files in {args.masks}")
    masks = []
    for path in mask_files:
        mask = formats.read_mask(path)
        if mask.size != layout.n_rows:
            raise ValueError(f"{path}: rows {mask.size} != layout rows {layout.n_rows}")
        masks.append(mask)
    device = _open_device(args, file_bytes_needed=layout.total_bytes)
    try:
        report = ioengine.validate_estimator(device, layout, table, masks)
        mode = device.access_mode
    finally:
        device.close()
    doc = {
        "access_mode": mode,
        "n_masks": len(masks),
        "pairs": [
            [float(e), float(m)] for e, m in zip(report.estimated_us, report.measured_us)
        ],
        "correlation": formats.format_float(report.correlation),
        "fitted_scale": formats.format_float(report.fitted_scale),
    }
    text = formats.canonical_json(doc) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if mode == "buffered":
        print(profiling.warmup_and_drop_caches_hint(mode), file=sys.stderr)
    if len(masks) < 2:
        print("correlation undefined for a single mask", file=sys.stderr)
    return 0


def _parse_grid(text: str) -> list[int]:
    try:
        lo, hi, step = (int(x) for x in text.split(":"))
        values = list(range(lo, hi + 1, step))
    except ValueError as exc:
        raise ValueError(f"--grid must be LO:HI:STEP in KB, got {text!r}") from exc
    if not values:
        raise ValueError(f"empty grid {text!r}")
    return values


def cmd_sweep(args) -> int:
    try:
        with open(args.shapes) as f:
            doc = json.load(f)
        shapes = [WeightLayout(int(e[0]), int(e[1])) for e in doc]
    except (ValueError, TypeError, KeyError, IndexError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed shapes file {args.shapes}: {exc}") from exc
    table = latency.load_table(args.table)
    grid = _parse_grid(args.grid)
    cfg = tune.SweepConfig(
        shapes=shapes,
        grid_start_kb=grid,
        grid_cap_kb=grid,
        threshold_us=args.threshold_ms * 1000.0,
        trials=args.trials,
        sparsity_for_timing=args.sparsity,
        seed=args.seed,
    )
    results = tune.sweep(cfg, table)
    tune.save_params_file(results, args.out)
    for res in results:
        shape = f"{res.layout.n_rows}x{res.layout.row_bytes}"
        if res.chosen is None:
            print(f"{shape}: infeasible at threshold {cfg.threshold_us:.6g} us")
        else:
            print(
                f"{shape}: start {res.chosen.chunk_sz_start_kb} KB, "
                f"cap {res.chosen.jump_cap_kb} KB, end {res.chosen.chunk_sz_end_kb} KB"
            )
        for flag in res.noise_flags:
            print(f"  noise: {flag}")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkio",
        description="Storage-aware row selection: latency-modeled chunk loading from flash.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="microbenchmark a device into a latency table")
    p.add_argument("--file", help="existing file to read (omit with --shim)")
    p.add_argument("--file-bytes", type=int, default=128 << 20)
    p.add_argument("--step-kb", type=int, default=1)
    p.add_argument("--max-kb", type=int, default=1024)
    p.add_argument("--workers", type=int, default=ioengine.DEFAULT_WORKERS)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--direct", action=argparse.BooleanOptionalAction, default=True,
                   help="--no-direct selects buffered reads")
    p.add_argument("--shim", help="OVERHEAD_US,BANDWIDTH_MBPS synthetic device")
    p.add_argument("--randomize-order", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synth-table", help="write a latency table from the affine model")
    p.add_argument("--overhead-us", type=float, required=True)
    p.add_argument("--bandwidth-mbps", type=float, required=True)
    p.add_argument("--step-kb", type=int, default=1)
    p.add_argument("--max-kb", type=int, default=256)
    p.add_argument("--label", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_table)

    p = sub.add_parser("select", help="select rows under a budget and write the mask")
    p.add_argument("--importance", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--sparsity", type=float, help="dropped fraction; budget = round((1-s)*N)")
    p.add_argument("--layout", required=True, help="ROWSxROWBYTES")
    p.add_argument("--table", required=True)
    p.add_argument("--params", help="START,END,STEP,CAP in KB")
    p.add_argument("--params-file")
    p.add_argument("--baseline", choices=["topk", "threshold", "chunk"], default="chunk")
    p.add_argument("--tau", type=float, help="threshold for --baseline threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("estimate", help="estimated latency of a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--table", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("analyze", help="contiguity stats of one or more masks")
    p.add_argument("--mask", action="append", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reorder", help="hot-cold reorder weights from calibration importances")
    p.add_argument("--calibrate", required=True, help="directory of importance files")
    p.add_argument("--active-fraction", type=float, default=0.5)
    p.add_argument("--weights", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--out-weights", required=True)
    p.add_argument("--out-perm", required=True)
    p.set_defaults(func=cmd_reorder)

    p = sub.add_parser("freq-report", help="activation-frequency histogram and hot/cold fractions")
    p.add_argument("--calibrate", required=True)
    p.add_argument("--active-fraction", type=float, default=0.5)
    p.add_argument("--hot-threshold", type=float, default=0.99)
    p.add_argument("--cold-threshold", type=float, default=0.01)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_freq_report)

    p = sub.add_parser("bench", help="measured vs estimated latency over saved masks")
    p.add_argument("--weights", help="weights file (omit with --shim)")
    p.add_argument("--layout", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--masks", required=True, help="directory of mask files")
    p.add_argument("--workers", type=int, default=ioengine.DEFAULT_WORKERS)
    p.add_argument("--direct", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--shim", help="OVERHEAD_US,BANDWIDTH_MBPS synthetic device")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="runtime feasibility sweep over (start, cap) grids")
    p.add_argument("--shapes", required=True, help="JSON list of [n_rows, row_bytes]")
    p.add_argument("--grid", default="4:64:4", help="LO:HI:STEP in KB for both axes")
    p.add_argument("--threshold-ms", type=float, default=2.0)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--sparsity", type=float, default=0.1)
    p.add_argument("--table", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DeviceError, OSError) as exc:
        print(f"device error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # invariant violations and bugs
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
