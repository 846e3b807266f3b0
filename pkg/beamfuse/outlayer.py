"""Output-layer kernels: bias, softmax and k-best selection.

Each ``for`` loop over the score vector below is one pass and is reported
to the optional ``PassCounter``. Kernels work on plain Python floats;
numpy rows are converted once on entry.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .models import KBestEntry, KBestList, RunningMaxSum, ShardResult
from .tensorkit import PassCounter, partition

logger = logging.getLogger(__name__)

BASELINE_LABEL = "baseline output layer"
FUSED_LABEL = "fused"
ARGMAX_LABEL = "argmax 1-best"

KERNELS = ("baseline", "fused", "argmax1")


def _scores(values) -> List[float]:
    if isinstance(values, np.ndarray):
        return values.tolist()
    return list(values)


def _require_nonempty(p: Sequence[float]) -> None:
    if len(p) == 0:
        raise ValueError("score vector must not be empty")


def _require_same_length(p: Sequence[float], b: Sequence[float]) -> None:
    if len(p) != len(b):
        raise ValueError(
            f"score vector length {len(p)} does not match bias length {len(b)}")


def _require_k(p: Sequence[float], k: int) -> None:
    if k < 1 or k > len(p):
        raise ValueError(f"k must be in [1, {len(p)}], got {k}")


def add_bias(p,
             b,
             *,
             counter: Optional[PassCounter] = None,
             label: str = "add_bias") -> List[float]:
    """Return ``p + b`` elementwise."""
    p = _scores(p)
    b = _scores(b)
    _require_same_length(p, b)
    out = []
    for p_i, b_i in zip(p, b):
        out.append(p_i + b_i)
    if counter is not None:
        counter.sweep(label)
    return out


def three_pass_normalizer(p,
                          *,
                          counter: Optional[PassCounter] = None,
                          label: str = "softmax") -> RunningMaxSum:
    """Max and denominator of softmax(p) using two sweeps."""
    p = _scores(p)
    _require_nonempty(p)
    best = 0
    top = -math.inf
    for i, p_i in enumerate(p):
        if p_i > top:
            top = p_i
            best = i
    if counter is not None:
        counter.sweep(label)

    exp = math.exp
    total = 0.0
    for p_i in p:
        total += exp(p_i - top)
    if counter is not None:
        counter.sweep(label)
    return RunningMaxSum(max=top, sum=total, best=best)


def softmax_3pass(p,
                  *,
                  counter: Optional[PassCounter] = None,
                  label: str = "softmax") -> List[float]:
    """Numerically stable softmax: max sweep, denominator sweep, divide sweep."""
    p = _scores(p)
    norm = three_pass_normalizer(p, counter=counter, label=label)
    top, total = norm.max, norm.sum
    exp = math.exp
    out = []
    for p_i in p:
        out.append(exp(p_i - top) / total)
    if counter is not None:
        counter.sweep(label)
    return out


def find_best(p,
              *,
              tiebreak: Optional[Sequence[float]] = None,
              counter: Optional[PassCounter] = None,
              label: str = "find_best") -> Tuple[float, int]:
    """Return the maximum and the lowest index attaining it.

    With ``tiebreak``, equal values go to the larger tiebreak entry first.
    """
    p = _scores(p)
    _require_nonempty(p)
    top = -math.inf
    best = 0
    for i, p_i in enumerate(p):
        if p_i > top or (tiebreak is not None and p_i == top
                         and tiebreak[i] > tiebreak[best]):
            top = p_i
            best = i
    if counter is not None:
        counter.sweep(label)
    return top, best


def kbest_scan(p,
               k: int,
               *,
               tiebreak: Optional[Sequence[float]] = None,
               counter: Optional[PassCounter] = None,
               label: str = "kbest") -> KBestList:
    """Select the ``k`` largest entries in one sweep.

    With ``tiebreak``, equal values are ordered by the larger tiebreak
    entry, then by the lower index.
    """
    p = _scores(p)
    _require_k(p, k)
    if tiebreak is None:
        kbest = KBestList(capacity=k)
        floor = -math.inf
        for i, p_i in enumerate(p):
            if p_i > floor:
                kbest.offer(i, p_i)
                floor = kbest.floor
    else:
        held: List[Tuple[float, float, int]] = []
        floor = -math.inf
        for i, p_i in enumerate(p):
            if p_i < floor:
                continue
            candidate = (p_i, tiebreak[i], -i)
            if len(held) == k and candidate <= held[-1]:
                continue
            position = len(held)
            while position > 0 and held[position - 1] < candidate:
                position -= 1
            held.insert(position, candidate)
            del held[k:]
            if len(held) == k:
                floor = held[-1][0]
        kbest = KBestList(capacity=k,
                          entries=[KBestEntry(index=-neg, score=score)
                                   for score, _, neg in held])
    if counter is not None:
        counter.sweep(label)
    return kbest


def baseline_output(p,
                    b,
                    k: int,
                    *,
                    counter: Optional[PassCounter] = None) -> KBestList:
    """Add bias, three-pass softmax, then search: five sweeps of ``p``."""
    p = _scores(p)
    b = _scores(b)
    _require_same_length(p, b)
    _require_k(p, k)
    biased = add_bias(p, b, counter=counter, label=BASELINE_LABEL)
    probs = softmax_3pass(biased, counter=counter, label=BASELINE_LABEL)
    # Scores closer than exp can resolve share a probability; the biased
    # score orders them.
    if k == 1:
        top, best = find_best(probs, tiebreak=biased, counter=counter,
                              label=BASELINE_LABEL)
        return KBestList(capacity=1, entries=[KBestEntry(index=best, score=top)])
    return kbest_scan(probs, k, tiebreak=biased, counter=counter,
                      label=BASELINE_LABEL)


def fused_output(p,
                 b,
                 k: int,
                 *,
                 counter: Optional[PassCounter] = None) -> KBestList:
    """Bias, online softmax normalizer and k-best search in one sweep.

    When a strictly larger value arrives the running sum is rescaled by
    ``exp(old_max - new_max)`` before the new element's ``exp(0) = 1`` is
    added. Candidates keep their biased scores; probabilities are derived
    from the final (max, sum) on extraction.
    """
    p = _scores(p)
    b = _scores(b)
    _require_same_length(p, b)
    _require_k(p, k)

    exp = math.exp
    top = -math.inf
    total = 0.0
    best = 0
    kbest = KBestList(capacity=k)
    floor = -math.inf
    for i, (p_i, b_i) in enumerate(zip(p, b)):
        value = p_i + b_i
        if value > top:
            total = exp(top - value) * total + 1.0
            top = value
            best = i
        else:
            total += exp(value - top)
        if value > floor:
            kbest.offer(i, value)
            floor = kbest.floor
    if counter is not None:
        counter.sweep(FUSED_LABEL)

    kbest.normalizer = RunningMaxSum(max=top, sum=total, best=best)
    return kbest


def argmax_1best(p,
                 b,
                 *,
                 counter: Optional[PassCounter] = None) -> int:
    """Index of the largest ``p_i + b_i``; no exponentials."""
    p = _scores(p)
    b = _scores(b)
    _require_nonempty(p)
    _require_same_length(p, b)
    top = -math.inf
    best = 0
    for i, (p_i, b_i) in enumerate(zip(p, b)):
        value = p_i + b_i
        if value > top:
            top = value
            best = i
    if counter is not None:
        counter.sweep(ARGMAX_LABEL)
    return best


def _shard_best(p: List[float], b: List[float], start: int,
                stop: int) -> ShardResult:
    top = -math.inf
    best = start
    for i in range(start, stop):
        value = p[i] + b[i]
        if value > top:
            top = value
            best = i
    return ShardResult(max=top, best=best)


def argmax_1best_parallel(p,
                          b,
                          shards: int,
                          *,
                          workers: int = 1,
                          counter: Optional[PassCounter] = None) -> int:
    """Sharded 1-best: per-shard maxima, then a serial reduction.

    Shards are scanned in ascending order during the reduction and only a
    strictly larger maximum replaces the current one, so ties resolve to
    the lowest global index for any shard count.
    """
    p = _scores(p)
    b = _scores(b)
    _require_nonempty(p)
    _require_same_length(p, b)
    if shards < 1 or shards > len(p):
        raise ValueError(f"shards must be in [1, {len(p)}], got {shards}")

    ranges = partition(len(p), shards)
    if workers > 1 and shards > 1:
        with ThreadPoolExecutor(max_workers=min(workers, shards)) as pool:
            results = list(
                pool.map(lambda bounds: _shard_best(p, b, *bounds), ranges))
    else:
        results = [_shard_best(p, b, start, stop) for start, stop in ranges]
    if counter is not None:
        counter.sweep(ARGMAX_LABEL)

    top = -math.inf
    best = 0
    for result in results:
        if result.max > top:
            top = result.max
            best = result.best
    return best


def output_layer(kernel: str,
                 p,
                 b,
                 k: int,
                 *,
                 shards: int = 1,
                 workers: int = 1,
                 counter: Optional[PassCounter] = None) -> KBestList:
    """Run the named kernel and return its k-best list."""
    if kernel == "baseline":
        return baseline_output(p, b, k, counter=counter)
    if kernel == "fused":
        return fused_output(p, b, k, counter=counter)
    if kernel == "argmax1":
        if k != 1:
            raise ValueError("the argmax1 kernel only supports k = 1")
        if shards > 1:
            best = argmax_1best_parallel(p,
                                         b,
                                         shards,
                                         workers=workers,
                                         counter=counter)
        else:
            best = argmax_1best(p, b, counter=counter)
        # No probabilities are computed; the single candidate carries log-prob 0.
        return KBestList(capacity=1,
                         entries=[KBestEntry(index=best, score=0.0)],
                         normalizer=RunningMaxSum(max=0.0, sum=1.0, best=best))
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
