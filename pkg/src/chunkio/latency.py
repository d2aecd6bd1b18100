"""Chunk-size latency table and mask latency estimation.

The table maps read size in bytes to steady-state read latency in
microseconds. A mask's latency is estimated as the sum of its chunks'
table lookups; between profiled sizes the table interpolates linearly,
past the last entry it extrapolates with the final segment's slope.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import WeightLayout, as_mask, run_bounds
from .formats import canonical_json


class TableError(ValueError):
    """Latency table violates its invariants."""


@dataclass(frozen=True)
class LatencyTable:
    """Profiled (or synthetic) read latency per chunk size.

    sizes_bytes is strictly increasing, latencies_us positive and
    non-decreasing; both enforced at construction. scale_factor is a
    multiplicative correction applied to every lookup. It never changes
    the relative order of latencies, so selection is unaffected by it.
    """

    sizes_bytes: np.ndarray
    latencies_us: np.ndarray
    device_label: str = ""
    scale_factor: float = 1.0
    _slope_tail: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        sizes = np.asarray(self.sizes_bytes, dtype=np.int64)
        lats = np.asarray(self.latencies_us, dtype=np.float64)
        object.__setattr__(self, "sizes_bytes", sizes)
        object.__setattr__(self, "latencies_us", lats)
        if sizes.ndim != 1 or lats.shape != sizes.shape:
            raise TableError("sizes and latencies must be 1-D and equal length")
        if sizes.size < 2:
            raise TableError(f"table needs >= 2 entries, got {sizes.size}")
        if sizes[0] < 1:
            raise TableError("sizes must be positive")
        if np.any(np.diff(sizes) <= 0):
            raise TableError("sizes must be strictly increasing")
        if np.any(~np.isfinite(lats)) or np.any(lats <= 0):
            raise TableError("latencies must be positive and finite")
        if np.any(np.diff(lats) < 0):
            raise TableError("latencies must be non-decreasing in size")
        if not (np.isfinite(self.scale_factor) and self.scale_factor > 0):
            raise TableError(f"scale_factor must be positive, got {self.scale_factor}")
        object.__setattr__(
            self,
            "_slope_tail",
            float((lats[-1] - lats[-2]) / (sizes[-1] - sizes[-2])),
        )
        self._check_subadditivity()

    @property
    def max_profiled_bytes(self) -> int:
        return int(self.sizes_bytes[-1])

    def _check_subadditivity(self):
        # A merged read should never cost more than its parts:
        # lookup(a+b) <= lat(a)+lat(b) for all profiled a, b. Real profiles
        # can be noisy, so violations only warn.
        sizes = self.sizes_bytes
        lats = self.latencies_us
        pair_sizes = np.add.outer(sizes, sizes)
        pair_costs = np.add.outer(lats, lats)
        merged = _interp_extrap(pair_sizes.ravel(), sizes, lats, self._slope_tail)
        bad = merged > pair_costs.ravel() * (1.0 + 1e-9)
        if np.any(bad):
            n = int(bad.sum())
            warnings.warn(
                f"latency table '{self.device_label}' violates subadditivity "
                f"for {n} size pairs; merged reads may be mis-costed",
                stacklevel=3,
            )

    def with_scale(self, scale_factor: float) -> "LatencyTable":
        return LatencyTable(
            self.sizes_bytes, self.latencies_us, self.device_label, scale_factor
        )


def _interp_extrap(sizes, xp, fp, slope_tail) -> np.ndarray:
    out = np.interp(sizes, xp, fp)
    over = sizes > xp[-1]
    if np.any(over):
        out = np.where(over, fp[-1] + (sizes - xp[-1]) * slope_tail, out)
    return out


def lookup(table: LatencyTable, size_bytes) -> float | np.ndarray:
    """Latency in us for one contiguous read of ``size_bytes``.

    Exact at profiled sizes, piecewise-linear between them, flat below the
    first entry, linear (last segment's slope) above the last. The result
    is scaled by table.scale_factor. Accepts scalars or arrays.
    """
    sizes = np.asarray(size_bytes)
    if np.any(sizes < 1):
        raise ValueError("size_bytes must be >= 1")
    out = _interp_extrap(
        sizes.astype(np.float64), table.sizes_bytes, table.latencies_us, table._slope_tail
    )
    out = out * table.scale_factor
    return float(out) if np.isscalar(size_bytes) or sizes.ndim == 0 else out


def estimate_mask_latency(mask, layout: WeightLayout, table: LatencyTable) -> float:
    """Estimated latency of loading a mask: sum of per-chunk lookups."""
    mask = as_mask(mask, layout.n_rows)
    _, lengths = run_bounds(mask)
    if lengths.size == 0:
        return 0.0
    return float(np.sum(lookup(table, lengths * layout.row_bytes)))


@dataclass(frozen=True)
class SyntheticDeviceParams:
    """Affine device model: latency(s) = fixed_overhead_us + s / bandwidth.

    Throughput rises with read size and saturates toward the bandwidth
    limit, the shape real devices show.
    """

    fixed_overhead_us: float
    bandwidth_bytes_per_us: float
    step_bytes: int = 1024
    max_bytes: int = 256 * 1024

    def __post_init__(self):
        for name in ("fixed_overhead_us", "bandwidth_bytes_per_us", "step_bytes", "max_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_bytes < 2 * self.step_bytes:
            raise ValueError("max_bytes must cover at least two steps")

    def latency_us(self, size_bytes) -> np.ndarray:
        return self.fixed_overhead_us + np.asarray(size_bytes, dtype=np.float64) / self.bandwidth_bytes_per_us


def synthesize_table(params: SyntheticDeviceParams, device_label: str = "") -> LatencyTable:
    """Build a table from the affine model at sizes step, 2*step, ..., max."""
    sizes = np.arange(params.step_bytes, params.max_bytes + 1, params.step_bytes, dtype=np.int64)
    label = device_label or (
        f"synthetic(overhead={params.fixed_overhead_us:g}us,"
        f"bw={params.bandwidth_bytes_per_us:g}B/us)"
    )
    return LatencyTable(sizes, params.latency_us(sizes), device_label=label)


def throughput(table: LatencyTable) -> np.ndarray:
    """Bytes per us at each profiled size (scale_factor cancels in ratios)."""
    return table.sizes_bytes / table.latencies_us


def saturation_size(table: LatencyTable, fraction: float = 0.99) -> int:
    """Smallest profiled size reaching ``fraction`` of the table's peak throughput."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    thr = throughput(table)
    idx = int(np.argmax(thr >= fraction * thr.max()))
    return int(table.sizes_bytes[idx])


class CalibrationResult(NamedTuple):
    scale: float
    correlation: float


def calibrate_scale(estimates, measurements) -> CalibrationResult:
    """Origin-constrained least-squares slope of measured vs estimated latency.

    The slope captures the estimator's proportional bias; the correlation
    coefficient is reported alongside (nan when fewer than two points).
    """
    e = np.asarray(estimates, dtype=np.float64)
    m = np.asarray(measurements, dtype=np.float64)
    if e.size == 0 or e.shape != m.shape:
        raise ValueError("estimates and measurements must be equal-length and non-empty")
    if np.any(e <= 0) or np.any(m <= 0):
        raise ValueError("latencies must be positive")
    scale = float((e * m).sum() / (e * e).sum())
    if e.size < 2:
        corr = float("nan")
    else:
        with np.errstate(invalid="ignore"):
            corr = float(np.corrcoef(e, m)[0, 1])
    return CalibrationResult(scale, corr)


def save_table(table: LatencyTable, path) -> None:
    doc = {
        "device_label": table.device_label,
        "scale_factor": float(table.scale_factor),
        "entries": [
            [int(s), float(l)]
            for s, l in zip(table.sizes_bytes, table.latencies_us)
        ],
    }
    with open(path, "w") as f:
        f.write(canonical_json(doc))
        f.write("\n")


def load_table(path) -> LatencyTable:
    """Parse a table file; rejects unsorted or non-positive entries."""
    try:
        with open(path) as f:
            doc = json.load(f)
        entries = doc["entries"]
        sizes = np.array([e[0] for e in entries], dtype=np.int64)
        lats = np.array([float(e[1]) for e in entries], dtype=np.float64)
        label = str(doc.get("device_label", ""))
        scale = float(doc.get("scale_factor", 1.0))
    except (KeyError, TypeError, IndexError, json.JSONDecodeError) as exc:
        raise TableError(f"malformed latency table file {path}: {exc}") from exc
    return LatencyTable(sizes, lats, device_label=label, scale_factor=scale)
