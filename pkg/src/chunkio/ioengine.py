"""Chunk read execution and estimator validation.

Two device backends share one interface: ``RealDevice`` issues concurrent
reads against an actual file (direct I/O by default, with outward 4 KiB
alignment whose padding is stripped before returning bytes), and
``SyntheticDevice`` serves bytes from memory while charging virtual time
from an affine latency model, so the full pipeline runs without hardware.

Requests map 1:1 to chunks; measured latency spans first submission to
last completion.
"""

from __future__ import annotations

import mmap
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import Chunk, WeightLayout, as_mask, run_bounds
from .latency import CalibrationResult, LatencyTable, calibrate_scale, estimate_mask_latency

ALIGN = 4096
DEFAULT_WORKERS = 6


class DeviceError(RuntimeError):
    """File or device access failed."""


class ReadResult(NamedTuple):
    buffers: list[bytes]
    measured_latency_us: float


class ValidationReport(NamedTuple):
    estimated_us: np.ndarray
    measured_us: np.ndarray
    correlation: float
    fitted_scale: float


def _chunk_extents(chunks: Sequence[Chunk | tuple], layout: WeightLayout):
    extents = []
    for start, length in chunks:
        if length < 1 or start < 0 or start + length > layout.n_rows:
            raise ValueError(f"chunk ({start},{length}) out of bounds for layout")
        extents.append((start * layout.row_bytes, length * layout.row_bytes))
    return extents


class RealDevice:
    """Reads chunks of a real file with a fixed worker pool.

    use_direct_io bypasses the page cache where the platform allows it;
    buffered mode exists for filesystems without O_DIRECT support and is
    flagged in reports via ``access_mode``.
    """

    access_mode: str

    def __init__(self, path, workers: int = DEFAULT_WORKERS, use_direct_io: bool = True):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.path = str(path)
        self.workers = workers
        if not os.path.isfile(self.path):
            raise FileNotFoundError(f"file not found: {self.path}")
        self.file_bytes = os.path.getsize(self.path)
        flags = os.O_RDONLY
        if use_direct_io:
            direct = getattr(os, "O_DIRECT", 0)
            if not direct:
                raise DeviceError("direct I/O not supported on this platform")
            try:
                self._fd = os.open(self.path, flags | direct)
            except OSError as exc:
                raise DeviceError(
                    f"direct I/O unavailable for {self.path}: {exc}"
                ) from exc
            self.access_mode = "direct"
        else:
            self._fd = os.open(self.path, flags)
            self.access_mode = "buffered"
        self._pool = ThreadPoolExecutor(max_workers=workers)

    def close(self):
        self._pool.shutdown(wait=True)
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _read_direct(self, offset: int, length: int) -> bytes:
        # O_DIRECT wants sector-aligned offset/length/buffer; round the
        # request outward and strip the padding afterwards.
        a_off = (offset // ALIGN) * ALIGN
        end = offset + length
        a_end = min(-(-end // ALIGN) * ALIGN, -(-self.file_bytes // ALIGN) * ALIGN)
        a_len = a_end - a_off
        buf = mmap.mmap(-1, a_len)  # anonymous mmap is page-aligned
        try:
            got = os.preadv(self._fd, [buf], a_off)
            if got < end - a_off:
                raise DeviceError(
                    f"short read at offset {offset} length {length} "
                    f"(got {got} of {a_len} aligned bytes)"
                )
            return buf[offset - a_off : offset - a_off + length]
        finally:
            buf.close()

    def _read_buffered(self, offset: int, length: int) -> bytes:
        data = os.pread(self._fd, length, offset)
        if len(data) != length:
            raise DeviceError(
                f"short read at offset {offset}: got {len(data)} of {length} bytes"
            )
        return data

    def read_extents(self, extents) -> ReadResult:
        for offset, length in extents:
            if offset + length > self.file_bytes:
                raise DeviceError(
                    f"read [{offset}, {offset + length}) beyond file end "
                    f"{self.file_bytes}"
                )
        reader = self._read_direct if self.access_mode == "direct" else self._read_buffered
        t0 = time.perf_counter_ns()
        futures = [self._pool.submit(reader, off, ln) for off, ln in extents]
        buffers = [f.result() for f in futures]
        elapsed_us = (time.perf_counter_ns() - t0) / 1000.0
        return ReadResult(buffers, elapsed_us)


@dataclass
class SyntheticDevice:
    """In-memory device shim with an affine virtual clock.

    Each request of s bytes takes overhead + s/bandwidth microseconds,
    jittered by a deterministic per-(offset, size) factor of at most
    noise_rel. The pool of ``workers`` shares the load perfectly, so a
    batch's makespan is max(sum/workers, longest single request). Content
    comes from ``data``; timing never sleeps.
    """

    data: bytes
    fixed_overhead_us: float
    bandwidth_bytes_per_us: float
    workers: int = DEFAULT_WORKERS
    noise_rel: float = 0.002
    seed: int = 0
    access_mode: str = "synthetic"

    def __post_init__(self):
        if self.fixed_overhead_us <= 0 or self.bandwidth_bytes_per_us <= 0:
            raise ValueError("overhead and bandwidth must be positive")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        self.file_bytes = len(self.data)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        pass

    def _jitter(self, offset: int, size: int) -> float:
        # splitmix-style hash; stable across runs and platforms
        h = (offset * 0x9E3779B97F4A7C15 + size * 0xBF58476D1CE4E5B9 + self.seed) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 31
        return ((h / 2**64) - 0.5) * 2.0 * self.noise_rel

    def request_latency_us(self, offset: int, size: int) -> float:
        base = self.fixed_overhead_us + size / self.bandwidth_bytes_per_us
        return base * (1.0 + self._jitter(offset, size))

    def read_extents(self, extents) -> ReadResult:
        buffers = []
        lat_sum = 0.0
        lat_max = 0.0
        for offset, length in extents:
            if offset + length > self.file_bytes:
                raise DeviceError(
                    f"read [{offset}, {offset + length}) beyond file end "
                    f"{self.file_bytes}"
                )
            buffers.append(self.data[offset : offset + length])
            lat = self.request_latency_us(offset, length)
            lat_sum += lat
            lat_max = max(lat_max, lat)
        if not extents:
            return ReadResult([], 0.0)
        return ReadResult(buffers, max(lat_sum / self.workers, lat_max))


def read_chunks(device, layout: WeightLayout, chunks: Sequence[Chunk | tuple]) -> ReadResult:
    """Read exactly the given chunks; bytes are padding-free and independent
    of the worker count."""
    return device.read_extents(_chunk_extents(chunks, layout))


def read_mask(device, layout: WeightLayout, mask) -> ReadResult:
    starts, lengths = run_bounds(as_mask(mask, layout.n_rows))
    return read_chunks(device, layout, list(zip(starts.tolist(), lengths.tolist())))


def validate_estimator(device, layout: WeightLayout, table: LatencyTable,
                       masks: Sequence) -> ValidationReport:
    """Estimated vs measured latency over a set of masks.

    Reports the correlation coefficient (nan with fewer than two masks)
    and the origin-constrained slope of measured on estimated.
    """
    if len(masks) < 1:
        raise ValueError("need at least one mask")
    estimated, measured = [], []
    for mask in masks:
        estimated.append(estimate_mask_latency(mask, layout, table))
        measured.append(read_mask(device, layout, mask).measured_latency_us)
    e = np.array(estimated)
    m = np.array(measured)
    cal: CalibrationResult = calibrate_scale(e, m)
    return ValidationReport(e, m, cal.correlation, cal.scale)
