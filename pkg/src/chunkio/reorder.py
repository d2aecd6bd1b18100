"""Offline hot-cold row reordering.

Over a calibration set, count how often each row lands in the top fraction
of importance, then permute rows so the most frequently active ones sit
together. The same permutation must be applied to importance vectors at
runtime; a sidecar file stores it next to the reordered weights.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .core import WeightLayout, as_importance
from .formats import canonical_json
from .select import topk_select

_COPY_BLOCK_ROWS = 4096


@dataclass
class FrequencyProfile:
    """Per-row activation counts accumulated over calibration samples."""

    n_rows: int
    active_fraction: float = 0.5
    counts: np.ndarray = field(default=None)
    num_samples: int = 0

    def __post_init__(self):
        if self.n_rows < 1:
            raise ValueError(f"n_rows must be >= 1, got {self.n_rows}")
        if not 0 < self.active_fraction <= 1:
            raise ValueError(
                f"active_fraction must be in (0, 1], got {self.active_fraction}"
            )
        if self.counts is None:
            self.counts = np.zeros(self.n_rows, dtype=np.int64)
        elif self.counts.shape != (self.n_rows,):
            raise ValueError("counts length must equal n_rows")

    def frequencies(self) -> np.ndarray:
        """Fraction of samples each row was designated active in."""
        if self.num_samples == 0:
            return np.zeros(self.n_rows)
        return self.counts / self.num_samples


def accumulate(profile: FrequencyProfile, importance) -> FrequencyProfile:
    """Count the top active_fraction rows of one sample as active (in place)."""
    v = as_importance(importance, profile.n_rows)
    k = int(profile.active_fraction * profile.n_rows)
    active = topk_select(v, k)
    profile.counts[active] += 1
    profile.num_samples += 1
    return profile


@dataclass(frozen=True)
class Permutation:
    """Row order as forward[new_index] = original_index."""

    forward: np.ndarray

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64)
        object.__setattr__(self, "forward", fwd)
        if fwd.ndim != 1 or fwd.size == 0:
            raise ValueError("forward must be a non-empty 1-D index array")
        if not np.array_equal(np.sort(fwd), np.arange(fwd.size)):
            raise ValueError("forward must be a bijection on 0..n_rows-1")

    @property
    def n_rows(self) -> int:
        return self.forward.size


def identity_permutation(n_rows: int) -> Permutation:
    return Permutation(np.arange(n_rows, dtype=np.int64))


def build_permutation(profile: FrequencyProfile) -> Permutation:
    """Sort rows by descending activation frequency, stable on original index."""
    if profile.num_samples < 1:
        raise ValueError("profile has no accumulated samples")
    forward = np.lexsort((np.arange(profile.n_rows), -profile.counts))
    return Permutation(forward.astype(np.int64))


def permute_importance(importance, perm: Permutation) -> np.ndarray:
    v = as_importance(importance, perm.n_rows)
    return v[perm.forward]


def invert(perm: Permutation) -> Permutation:
    # argsort of a bijection is its inverse
    return Permutation(np.argsort(perm.forward).astype(np.int64))


def permute_rows(weights_in, weights_out, layout: WeightLayout, perm: Permutation) -> None:
    """Rewrite a raw row-major weights file with row k = input row forward[k].

    Byte-exact per row; the input file length must be exactly
    n_rows * row_bytes.
    """
    if perm.n_rows != layout.n_rows:
        raise ValueError(
            f"permutation rows {perm.n_rows} != layout rows {layout.n_rows}"
        )
    expected = layout.total_bytes
    actual = os.path.getsize(weights_in)
    if actual != expected:
        raise ValueError(
            f"{weights_in}: size {actual} != n_rows*row_bytes = {expected}"
        )
    src = np.memmap(weights_in, dtype=np.uint8, mode="r",
                    shape=(layout.n_rows, layout.row_bytes))
    with open(weights_out, "wb") as out:
        for base in range(0, layout.n_rows, _COPY_BLOCK_ROWS):
            idx = perm.forward[base : base + _COPY_BLOCK_ROWS]
            out.write(np.ascontiguousarray(src[idx]).tobytes())
    del src


def save_permutation(perm: Permutation, path) -> None:
    doc = {"n_rows": perm.n_rows, "forward": [int(i) for i in perm.forward]}
    with open(path, "w") as f:
        f.write(canonical_json(doc))
        f.write("\n")


def load_permutation(path) -> Permutation:
    try:
        with open(path) as f:
            doc = json.load(f)
        forward = np.asarray(doc["forward"], dtype=np.int64)
        n_rows = int(doc["n_rows"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed permutation file {path}: {exc}") from exc
    if forward.size != n_rows:
        raise ValueError(f"{path}: forward length {forward.size} != n_rows {n_rows}")
    return Permutation(forward)


def hot_cold_fractions(profile: FrequencyProfile, hot_threshold: float = 0.99,
                       cold_threshold: float = 0.01) -> tuple[float, float]:
    """Fractions of rows active more than hot_threshold / less than cold_threshold
    of the time."""
    freq = profile.frequencies()
    return float((freq > hot_threshold).mean()), float((freq < cold_threshold).mean())


def frequency_histogram(profile: FrequencyProfile, bins: int = 20):
    """Histogram of per-row activation frequency over [0, 1]."""
    freq = profile.frequencies()
    counts, edges = np.histogram(freq, bins=bins, range=(0.0, 1.0))
    return counts.astype(np.int64), edges
