"""Device microbenchmark that builds the latency table.

For each chunk size, many fixed-stride reads are issued through a worker
pool and the per-chunk steady-state latency is the batch span divided by
the request count. Profiling walks sizes upward and stops a fixed margin
past the point where throughput reaches 99% of the best seen, or at the
configured cap. Raw means are isotonic-smoothed before the table is built,
since the table requires non-decreasing latencies.

The synthetic device shim from chunkio.ioengine plugs in here unchanged,
so the whole pipeline is testable without hardware.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from .ioengine import DEFAULT_WORKERS, DeviceError, RealDevice, SyntheticDevice
from .latency import LatencyTable, saturation_size

MIN_STRIDE_BYTES = 1 << 20  # keep requests far apart so the device cannot coalesce them
SATURATION_FRACTION = 0.99
SIZES_PAST_SATURATION = 32  # headroom for the interpolator


@dataclass
class ProfileConfig:
    target_file_path: str = ""
    file_bytes: int = 128 << 20
    size_step_bytes: int = 1024
    max_size_bytes: int = 1 << 20
    trials_per_size: int = 3
    workers: int = DEFAULT_WORKERS
    use_direct_io: bool = True
    requests_per_trial: int = 128
    min_stride_bytes: int = MIN_STRIDE_BYTES
    rsd_threshold: float = 0.05
    randomize_order: bool = False
    seed: int = 0
    device_label: str = ""

    def __post_init__(self):
        if self.file_bytes < 1 or self.size_step_bytes < 1 or self.max_size_bytes < 1:
            raise ValueError("sizes must be positive")
        if self.max_size_bytes < 2 * self.size_step_bytes:
            raise ValueError("max_size_bytes must cover at least two steps")
        if self.trials_per_size < 1:
            raise ValueError("trials_per_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class ProfileResult:
    table: LatencyTable
    sizes_bytes: np.ndarray
    raw_means_us: np.ndarray
    rsd: np.ndarray
    flagged_sizes: list[int]
    saturation_bytes: int
    access_mode: str
    elapsed_s: float


def _measure_size(device, size: int, cfg: ProfileConfig) -> tuple[float, float]:
    """Mean per-chunk latency and relative std dev over the configured trials."""
    stride = max(2 * size, MIN_STRIDE_BYTES)
    max_n = max(1, (device.file_bytes - size) // stride + 1)
    n = min(cfg.requests_per_trial, max_n)
    extents = [(int(i * stride), size) for i in range(n)]
    per_chunk = []
    for _ in range(cfg.trials_per_size):
        res = device.read_extents(extents)
        per_chunk.append(res.measured_latency_us / n)
    per_chunk = np.array(per_chunk)
    mean = float(per_chunk.mean())
    rsd = float(per_chunk.std() / mean) if mean > 0 and per_chunk.size > 1 else 0.0
    return mean, rsd


def run_profile(cfg: ProfileConfig, device=None) -> ProfileResult:
    """Profile a device into a ProfileResult whose .table is the usable output.

    ``device`` defaults to a RealDevice over cfg.target_file_path; pass a
    SyntheticDevice for hardware-free runs. Per-size variance above
    cfg.rsd_threshold is flagged, not fatal.
    """
    t_start = time.perf_counter()
    owned = device is None
    if owned:
        device = RealDevice(cfg.target_file_path, cfg.workers, cfg.use_direct_io)
    try:
        if device.file_bytes < cfg.file_bytes:
            raise DeviceError(
                f"target file has {device.file_bytes} bytes, need {cfg.file_bytes}"
            )
        all_sizes = list(
            range(cfg.size_step_bytes, cfg.max_size_bytes + 1, cfg.size_step_bytes)
        )
        all_sizes = [s for s in all_sizes if s <= device.file_bytes]
        if len(all_sizes) < 2:
            raise DeviceError("fewer than two measurable sizes; enlarge the file")

        order = list(range(len(all_sizes)))
        if cfg.randomize_order:
            # shuffled order rules out drift artifacts; saturation early-stop
            # needs the ascending walk, so the full range is measured
            rng = np.random.default_rng(cfg.seed)
            rng.shuffle(order)

        means = np.full(len(all_sizes), np.nan)
        rsds = np.full(len(all_sizes), np.nan)
        measured_idx = []
        sat_candidate = None
        for pos, idx in enumerate(order):
            size = all_sizes[idx]
            means[idx], rsds[idx] = _measure_size(device, size, cfg)
            measured_idx.append(idx)
            if not cfg.randomize_order:
                thr = np.array([all_sizes[i] / means[i] for i in measured_idx])
                good = np.flatnonzero(thr >= SATURATION_FRACTION * thr.max())
                sat_candidate = int(good[0]) if good.size else None
                if sat_candidate is not None and pos - sat_candidate >= SIZES_PAST_SATURATION:
                    break

        keep = sorted(measured_idx)
        sizes = np.array([all_sizes[i] for i in keep], dtype=np.int64)
        raw = means[keep]
        rsd = rsds[keep]
        smoothed = isotonic_regression(raw, increasing=True).x
        label = cfg.device_label or getattr(device, "path", None) or device.access_mode
        table = LatencyTable(sizes, smoothed, device_label=str(label))
        flagged = [int(s) for s, r in zip(sizes, rsd) if r > cfg.rsd_threshold]
        return ProfileResult(
            table=table,
            sizes_bytes=sizes,
            raw_means_us=raw,
            rsd=rsd,
            flagged_sizes=flagged,
            saturation_bytes=saturation_size(table, SATURATION_FRACTION),
            access_mode=device.access_mode,
            elapsed_s=time.perf_counter() - t_start,
        )
    finally:
        if owned:
            device.close()


def warmup_and_drop_caches_hint(device_or_mode) -> str:
    """Advisory only: whether measurements bypass OS caching."""
    mode = getattr(device_or_mode, "access_mode", device_or_mode)
    if mode == "direct":
        return "cache-bypassed: direct I/O requests reach the device"
    if mode == "synthetic":
        return "synthetic: virtual-time shim, no OS cache involved"
    return (
        "warning: buffered access may serve reads from the page cache; "
        "latencies can understate device behavior"
    )
