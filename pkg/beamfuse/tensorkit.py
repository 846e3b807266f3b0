"""Dense float32 math with pass counting and emulated half precision.

``matmul`` sums over the inner dimension in a fixed serial order, so every
output element is the same sequence of float32 operations no matter how
many workers are used or how many rows share the call.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .models import PrecisionMode

logger = logging.getLogger(__name__)

Matrix = np.ndarray
Vector = np.ndarray

PARALLEL_MIN_ELEMENTS = 1 << 16


@dataclass
class PassCounter:
    """Counts full sweeps over a score vector, per kernel label."""

    reads: Dict[str, int] = field(default_factory=dict)

    def sweep(self, label: str) -> None:
        self.reads[label] = self.reads.get(label, 0) + 1

    def count(self, label: str) -> int:
        return self.reads.get(label, 0)

    def reset(self) -> None:
        self.reads.clear()


def partition(length: int, parts: int) -> List[Tuple[int, int]]:
    """Split ``range(length)`` into contiguous near-equal ranges.

    The remainder goes to the leading ranges.
    """
    if parts < 1 or parts > max(length, 1):
        raise ValueError(f"cannot split {length} items into {parts} parts")
    base, extra = divmod(length, parts)
    ranges = []
    start = 0
    for index in range(parts):
        stop = start + base + (1 if index < extra else 0)
        ranges.append((start, stop))
        start = stop
    return ranges


def as_matrix(value, name: str = "matrix") -> Matrix:
    array = np.asarray(value, dtype=np.float32)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ShapeError(f"{name} contains non-finite entries")
    return array


def as_vector(value, name: str = "vector") -> Vector:
    array = np.asarray(value, dtype=np.float32)
    if array.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ShapeError(f"{name} contains non-finite entries")
    return array


def round_to_half(x: float) -> float:
    """Round to the nearest binary16 value (ties to even), as a float32."""
    with np.errstate(over="ignore"):
        return float(np.float32(np.float16(float(x))))


def to_half_grid(array: np.ndarray) -> np.ndarray:
    """Round every entry onto the binary16 grid, kept in float32 storage."""
    with np.errstate(over="ignore"):
        return array.astype(np.float16).astype(np.float32)


def _accumulate(a: Matrix, b: Matrix, out: Matrix, rows: slice,
                cols: slice) -> None:
    block = out[rows, cols]
    a_block = a[rows]
    b_block = b[:, cols]
    product = np.empty_like(block)
    for k in range(a.shape[1]):
        np.multiply(a_block[:, k, None], b_block[k, None, :], out=product)
        block += product


def matmul(a,
           b,
           mode: PrecisionMode = PrecisionMode.FULL32,
           *,
           threads: int = 1) -> Matrix:
    """Return ``a @ b`` in float32 with a fixed k-loop summation order."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    if PrecisionMode(mode) is PrecisionMode.EMULATED16:
        a = to_half_grid(a)
        b = to_half_grid(b)

    rows, cols = a.shape[0], b.shape[1]
    out = np.zeros((rows, cols), dtype=np.float32)
    if rows == 0 or cols == 0:
        return out

    workers = max(1, threads)
    if workers == 1 or rows * cols < PARALLEL_MIN_ELEMENTS:
        _accumulate(a, b, out, slice(None), slice(None))
        return out

    if rows >= cols:
        blocks = [(slice(start, stop), slice(None))
                  for start, stop in partition(rows, min(workers, rows))]
    else:
        blocks = [(slice(None), slice(start, stop))
                  for start, stop in partition(cols, min(workers, cols))]
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        futures = [
            pool.submit(_accumulate, a, b, out, row_slice, col_slice)
            for row_slice, col_slice in blocks
        ]
        for future in futures:
            future.result()
    return out


def affine(w,
           x,
           b,
           mode: PrecisionMode = PrecisionMode.FULL32,
           *,
           threads: int = 1) -> Vector:
    """Return ``w @ x + b`` for a single vector ``x``."""
    w = as_matrix(w, "weight")
    x = as_vector(x, "input")
    b = as_vector(b, "bias")
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ShapeError(
            f"affine shapes disagree: w {w.shape}, x {x.shape}, b {b.shape}")
    product = matmul(w, x[:, None], mode, threads=threads)[:, 0]
    return product + b


def affine_rows(xs,
                w,
                b: Optional[Sequence[float]] = None,
                mode: PrecisionMode = PrecisionMode.FULL32,
                *,
                threads: int = 1) -> Matrix:
    """Apply ``w @ x + b`` to every row of ``xs``.

    Row ``j`` of the result is bit-identical to ``affine(w, xs[j], b)``.
    """
    xs = as_matrix(xs, "inputs")
    w = as_matrix(w, "weight")
    if xs.shape[1] != w.shape[1]:
        raise ShapeError(
            f"affine shapes disagree: inputs {xs.shape}, weight {w.shape}")
    out = matmul(xs, w.T, mode, threads=threads)
    if b is not None:
        bias = as_vector(b, "bias")
        if bias.shape[0] != w.shape[0]:
            raise ShapeError(
                f"bias length {bias.shape[0]} does not match {w.shape[0]} outputs")
        out += bias
    return out


def frobenius_relative_error(approx: Matrix, exact: Matrix) -> float:
    """Return ||approx - exact||_F / ||exact||_F."""
    if approx.shape != exact.shape:
        raise ShapeError(f"shape mismatch {approx.shape} vs {exact.shape}")
    diff = approx.astype(np.float64) - exact.astype(np.float64)
    norm = float(np.linalg.norm(exact.astype(np.float64)))
    if norm == 0.0:
        return 0.0 if not np.any(diff) else math.inf
    return float(np.linalg.norm(diff)) / norm
