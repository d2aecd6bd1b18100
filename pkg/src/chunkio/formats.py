"""On-disk formats shared by the CLI and the library.

All writers are canonical: fixed field order, floats at 6 significant
digits, newline-terminated. Identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .core import Chunk, mask_from_chunks, run_bounds

IMPORTANCE_MAGIC = b"NCIV"
IMPORTANCE_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")  # magic, version, reserved, count


def format_float(x: float) -> float | None:
    """Round to 6 significant digits for canonical output; nan becomes None."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return float(f"{x:.6g}")


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: insertion-ordered dicts, minimal float text."""
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  "{k}": {canonical_json(v, indent + 2)}' for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        flat = all(not isinstance(v, (dict, list, tuple)) for v in obj)
        if flat and len(obj) <= 8:
            return "[" + ", ".join(canonical_json(v) for v in obj) + "]"
        items = ",\n".join(f"{pad}  {canonical_json(v, indent + 2)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if math.isnan(obj):
            return "null"
        return repr(float(f"{obj:.6g}"))
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def write_importance(path, values, binary: bool = True) -> None:
    """Write an importance vector; binary NCIV by default, else one value per line."""
    v = np.asarray(values, dtype=np.float64)
    if binary:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(IMPORTANCE_MAGIC, IMPORTANCE_VERSION, 0, v.size))
            f.write(v.astype("<f4").tobytes())
    else:
        with open(path, "w") as f:
            for x in v:
                f.write(f"{x:.9g}\n")


def read_importance(path) -> np.ndarray:
    """Read an importance vector; NCIV binary detected by magic, else text."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if head[:4] == IMPORTANCE_MAGIC:
            if len(head) < _HEADER.size:
                raise ValueError(f"{path}: truncated importance header")
            magic, version, reserved, count = _HEADER.unpack(head)
            if version != IMPORTANCE_VERSION:
                raise ValueError(f"{path}: unsupported importance version {version}")
            payload = f.read(4 * count)
            if len(payload) != 4 * count:
                raise ValueError(f"{path}: importance payload truncated")
            return np.frombuffer(payload, dtype="<f4").astype(np.float64)
    # plain text fallback: one value per line
    values = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from exc
    if not values:
        raise ValueError(f"{path}: empty importance file")
    return np.array(values, dtype=np.float64)


def write_mask(path, mask) -> None:
    """Mask file: 'n_rows N' header then one 'start:len' line per chunk."""
    mask = np.asarray(mask, dtype=np.bool_)
    starts, lengths = run_bounds(mask)
    with open(path, "w") as f:
        f.write(f"n_rows {mask.size}\n")
        for s, l in zip(starts, lengths):
            f.write(f"{s}:{l}\n")


def read_mask(path) -> np.ndarray:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("n_rows"):
        raise ValueError(f"{path}: missing 'n_rows' header")
    try:
        n_rows = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from exc
    chunks = []
    for lineno, line in enumerate(lines[1:], 2):
        try:
            start_s, len_s = line.split(":")
            chunks.append(Chunk(int(start_s), int(len_s)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad chunk line {line!r}") from exc
    try:
        return mask_from_chunks(chunks, n_rows)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
