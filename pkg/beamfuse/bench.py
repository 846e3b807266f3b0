"""Desk-scale measurement harness for batching, kernels and precision.

Every benchmark first checks that the configurations it compares produce
the same outputs, then times them. Reported times are medians of the
timed repetitions; warmup repetitions are discarded.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

from .charts import emit_svg
from .models import BeamConfig, BenchRun, PrecisionMode, TimingBreakdown
from .outlayer import (
    add_bias,
    baseline_output,
    find_best,
    fused_output,
    kbest_scan,
    softmax_3pass,
)
from .rng import SeededStream
from .scheduler import STRATEGIES, decode_corpus
from .seqmodel import ModelParams
from .tensorkit import PassCounter, frobenius_relative_error, matmul

logger = logging.getLogger(__name__)

NOT_REPRODUCIBLE_NOTE = (
    "# GPU timings and speedups reported for the original system are not "
    "reproducible here; rows are desk-scale CPU measurements")
FUSED_MARGIN = 0.10
FUSED_CHECK_MIN_VOCAB = 30_000
PROBABILITY_TOLERANCE = 1e-5
PRECISION_TOLERANCE = 1e-2

Row = Dict[str, object]


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    x: str
    y: str
    series: Optional[str]
    title: str


CHARTS: Dict[str, ChartSpec] = {
    "steps": ChartSpec("line", "step", "active_slots", "strategy",
                       "Active slots per decoding step"),
    "batch": ChartSpec("line", "batch_size", "sentences_per_sec", "strategy",
                       "Speed vs. batch size"),
    "kernels": ChartSpec("bar", "case", "seconds", "kernel",
                         "Output layer: baseline vs. fused"),
    "precision": ChartSpec("bar", "mode", "seconds", None,
                           "Decode time per matmul precision"),
    "fused": ChartSpec("line", "beam", "seconds", "kernel",
                       "Decode time with fused output layer"),
    "profile": ChartSpec("bar", "phase", "share", None,
                         "Share of translation time per phase"),
}


def measure(fn: Callable[[], object],
            repetitions: int,
            warmup: int,
            config: Optional[Dict[str, object]] = None) -> BenchRun:
    """Time ``fn`` with a monotonic clock after ``warmup`` discarded runs."""
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    run = BenchRun(config=dict(config or {}),
                   repetitions=repetitions,
                   warmup=warmup,
                   times=[])
    for _ in range(warmup):
        fn()
    for _ in range(repetitions):
        started = time.perf_counter()
        fn()
        run.times.append(time.perf_counter() - started)
    return run


def _decode(model: ModelParams, corpus: Sequence[Sequence[int]],
            config: BeamConfig, **kwargs):
    return decode_corpus(model, corpus, config, **kwargs)


def bench_sweep_batch(model: ModelParams,
                      corpus: Sequence[Sequence[int]],
                      batch_sizes: Sequence[int],
                      strategies: Sequence[str] = STRATEGIES,
                      config: Optional[BeamConfig] = None,
                      *,
                      kernel: str = "fused",
                      repetitions: int = 3,
                      warmup: int = 1,
                      threads: int = 1) -> List[Row]:
    """Throughput (sentences/sec) for every batch size and strategy."""
    config = config or BeamConfig()
    if not batch_sizes:
        raise ValueError("at least one batch size is required")
    if max(batch_sizes) > len(corpus):
        raise ValueError(
            f"batch size {max(batch_sizes)} exceeds corpus of {len(corpus)} sentences")

    reference = None
    rows: List[Row] = []
    for strategy in strategies:
        for batch_size in batch_sizes:
            result = _decode(model,
                             corpus,
                             config,
                             strategy=strategy,
                             kernel=kernel,
                             batch_size=batch_size,
                             threads=threads)
            if reference is None:
                reference = result.translations
            elif result.translations != reference:
                raise RuntimeError(
                    f"translations differ for strategy={strategy} batch_size={batch_size}")
            run = measure(
                lambda: _decode(model,
                                corpus,
                                config,
                                strategy=strategy,
                                kernel=kernel,
                                batch_size=batch_size,
                                threads=threads),
                repetitions,
                warmup,
            )
            rows.append({
                "strategy": strategy,
                "batch_size": batch_size,
                "sentences": len(corpus),
                "median_s": run.median,
                "min_s": run.minimum,
                "sentences_per_sec": len(corpus) / run.median if run.median else math.inf,
                "hypothesis_decodes": result.stats.hypothesis_decodes,
            })
            logger.info("batch=%d strategy=%s: %.1f sentences/sec", batch_size,
                        strategy, rows[-1]["sentences_per_sec"])
    return rows


def bench_step_timing(model: ModelParams,
                      corpus: Sequence[Sequence[int]],
                      batch_size: int,
                      strategies: Sequence[str] = ("dynamic", ),
                      config: Optional[BeamConfig] = None,
                      *,
                      kernel: str = "fused",
                      threads: int = 1) -> List[Row]:
    """Active slots and seconds for each step of one batch."""
    config = config or BeamConfig()
    if batch_size < 1 or batch_size > len(corpus):
        raise ValueError(
            f"batch size must be in [1, {len(corpus)}], got {batch_size}")
    sentences = corpus[:batch_size]
    reference = None
    rows: List[Row] = []
    for strategy in strategies:
        result = _decode(model,
                         sentences,
                         config,
                         strategy=strategy,
                         kernel=kernel,
                         threads=threads)
        if reference is None:
            reference = result.translations
        elif result.translations != reference:
            raise RuntimeError(f"translations differ for strategy={strategy}")
        for record in result.stats.steps:
            rows.append({
                "strategy": strategy,
                "step": record.step,
                "active_slots": record.active_slots,
                "seconds": record.seconds,
            })
    return rows


def _random_case(vocab: int, state_dim: int, seed: int):
    stream = SeededStream(seed)
    w = stream.weights(vocab * state_dim, 0.08).reshape(vocab, state_dim)
    x = stream.weights(state_dim, 1.0)
    b = stream.weights(vocab, 0.5)
    return w, x, b


def _assert_kernels_agree(p: List[float], b: List[float], k: int) -> None:
    expected = baseline_output(p, b, k)
    actual = fused_output(p, b, k)
    if expected.indices() != actual.indices():
        raise RuntimeError(
            f"fused kernel selected {actual.indices()}, baseline {expected.indices()}")
    for want, got in zip(expected.probabilities(), actual.probabilities()):
        if abs(want - got) > PROBABILITY_TOLERANCE:
            raise RuntimeError(
                f"fused probability {got} differs from baseline {want}")


def _fused_check(vocab: int, improvement: float) -> str:
    if vocab < FUSED_CHECK_MIN_VOCAB:
        return "n/a"
    if improvement < 0.0:
        logger.error("Fused kernel slower than baseline at vocab %d (%.1f%%)",
                     vocab, improvement * 100)
        return "fail"
    if improvement < FUSED_MARGIN:
        logger.warning(
            "Fused kernel only %.1f%% faster than baseline at vocab %d",
            improvement * 100, vocab)
        return "warn"
    return "ok"


def bench_kernels(vocab_sizes: Sequence[int],
                  ks: Sequence[int],
                  repetitions: int = 3,
                  *,
                  warmup: int = 1,
                  state_dim: int = 256,
                  seed: int = 0) -> List[Row]:
    """Phase timings of the five-pass pipeline against the fused kernel."""
    rows: List[Row] = []
    for vocab in vocab_sizes:
        if max(ks) > vocab:
            raise ValueError(f"k={max(ks)} exceeds vocab {vocab}")
        w, x, b_array = _random_case(vocab, state_dim, seed)
        matmul_run = measure(lambda: matmul(w, x[:, None]), repetitions, warmup)
        p = matmul(w, x[:, None])[:, 0].tolist()
        b = b_array.tolist()

        breakdown = TimingBreakdown()
        biased = add_bias(p, b)
        probs = softmax_3pass(biased)
        breakdown.add("matmul", matmul_run.median)
        breakdown.add("add_bias",
                      measure(lambda: add_bias(p, b), repetitions, warmup).median)
        breakdown.add("softmax",
                      measure(lambda: softmax_3pass(biased), repetitions,
                              warmup).median)

        for k in ks:
            _assert_kernels_agree(p, b, k)
            baseline_counter = PassCounter()
            fused_counter = PassCounter()
            baseline_output(p, b, k, counter=baseline_counter)
            fused_output(p, b, k, counter=fused_counter)

            if k == 1:
                kbest_s = measure(lambda: find_best(probs, tiebreak=biased), repetitions,
                                  warmup).median
            else:
                kbest_s = measure(lambda: kbest_scan(probs, k, tiebreak=biased), repetitions,
                                  warmup).median
            baseline_s = measure(lambda: baseline_output(p, b, k), repetitions,
                                 warmup).median
            fused_s = measure(lambda: fused_output(p, b, k), repetitions,
                              warmup).median
            improvement = (baseline_s - fused_s) / baseline_s if baseline_s else 0.0
            rows.append({
                "vocab": vocab,
                "k": k,
                "repetitions": repetitions,
                "warmup": warmup,
                "matmul_s": breakdown.phases["matmul"],
                "add_bias_s": breakdown.phases["add_bias"],
                "softmax_s": breakdown.phases["softmax"],
                "kbest_s": kbest_s,
                "baseline_s": baseline_s,
                "fused_s": fused_s,
                "baseline_passes": sum(baseline_counter.reads.values()),
                "fused_passes": sum(fused_counter.reads.values()),
                "improvement_pct": improvement * 100.0,
                "check": _fused_check(vocab, improvement),
            })
            logger.info("vocab=%d k=%d baseline=%.4fs fused=%.4fs (%.1f%%)",
                        vocab, k, baseline_s, fused_s, improvement * 100)
    return rows


def kernel_chart_rows(rows: Iterable[Row]) -> List[Row]:
    """Reshape kernel rows into one bar per (case, kernel)."""
    chart_rows: List[Row] = []
    for row in rows:
        case = f"V={row['vocab']} k={row['k']}"
        chart_rows.append({"case": case, "kernel": "baseline", "seconds": row["baseline_s"]})
        chart_rows.append({"case": case, "kernel": "fused", "seconds": row["fused_s"]})
    return chart_rows


def precision_error(model: ModelParams, seed: int = 0, columns: int = 16) -> float:
    """Relative Frobenius error of emulated16 on the model's largest matrix."""
    _, matrix = model.largest_matrix()
    probe = SeededStream(seed).weights(matrix.shape[1] * columns,
                                       1.0).reshape(matrix.shape[1], columns)
    exact = matmul(matrix, probe, PrecisionMode.FULL32)
    approx = matmul(matrix, probe, PrecisionMode.EMULATED16)
    return frobenius_relative_error(approx, exact)


def bench_precision(model: ModelParams,
                    corpus: Sequence[Sequence[int]],
                    modes: Sequence[PrecisionMode] = (PrecisionMode.FULL32,
                                                      PrecisionMode.EMULATED16),
                    config: Optional[BeamConfig] = None,
                    *,
                    kernel: str = "fused",
                    repetitions: int = 3,
                    warmup: int = 1,
                    threads: int = 1) -> List[Row]:
    """Decode time and translation agreement per matmul precision.

    The first mode is the agreement reference. Emulated half precision is
    a fidelity probe; it is not expected to be faster in software.
    """
    config = config or BeamConfig()
    reference = None
    rows: List[Row] = []
    for mode in modes:
        mode = PrecisionMode(mode)
        result = _decode(model,
                         corpus,
                         config,
                         kernel=kernel,
                         precision=mode,
                         threads=threads)
        if reference is None:
            reference = result.translations
        agree = sum(1 for got, want in zip(result.translations, reference)
                    if got == want)
        run = measure(
            lambda: _decode(model,
                            corpus,
                            config,
                            kernel=kernel,
                            precision=mode,
                            threads=threads),
            repetitions,
            warmup,
        )
        error = precision_error(model) if mode is PrecisionMode.EMULATED16 else 0.0
        if error > PRECISION_TOLERANCE:
            logger.warning("emulated16 relative error %.3g exceeds %.0e", error,
                           PRECISION_TOLERANCE)
        rows.append({
            "mode": mode.value,
            "seconds": run.median,
            "agreement": agree / len(corpus) if corpus else 1.0,
            "frobenius_error": error,
        })
    return rows


def bench_fused_decode(model: ModelParams,
                       corpus: Sequence[Sequence[int]],
                       beam_sizes: Sequence[int],
                       *,
                       strategy: str = "dynamic",
                       length_normalize: bool = False,
                       repetitions: int = 3,
                       warmup: int = 1,
                       threads: int = 1) -> List[Row]:
    """End-to-end decode time with the baseline and fused kernels per beam."""
    rows: List[Row] = []
    for beam in beam_sizes:
        config = BeamConfig(beam_size=beam, length_normalize=length_normalize)
        baseline = _decode(model, corpus, config, strategy=strategy,
                           kernel="baseline", threads=threads)
        fused = _decode(model, corpus, config, strategy=strategy,
                        kernel="fused", threads=threads)
        if baseline.translations != fused.translations:
            raise RuntimeError(f"kernels disagree on translations at beam {beam}")
        timings = {}
        for kernel in ("baseline", "fused"):
            timings[kernel] = measure(
                lambda: _decode(model, corpus, config, strategy=strategy,
                                kernel=kernel, threads=threads),
                repetitions,
                warmup,
            ).median
        improvement = ((timings["baseline"] - timings["fused"]) /
                       timings["baseline"] * 100.0 if timings["baseline"] else 0.0)
        for kernel in ("baseline", "fused"):
            rows.append({
                "beam": beam,
                "kernel": kernel,
                "seconds": timings[kernel],
                "sentences_per_sec": len(corpus) / timings[kernel] if timings[kernel] else math.inf,
                "improvement_pct": improvement if kernel == "fused" else 0.0,
            })
    return rows


def bench_time_share(model: ModelParams,
                     corpus: Sequence[Sequence[int]],
                     config: Optional[BeamConfig] = None,
                     *,
                     strategy: str = "dynamic",
                     kernel: str = "fused",
                     threads: int = 1) -> List[Row]:
    """Seconds and share of decode wall time spent in each phase."""
    result = _decode(model, corpus, config or BeamConfig(), strategy=strategy,
                     kernel=kernel, threads=threads)
    timing = result.stats.timing
    phases = dict(timing.phases)
    phases["other"] = max(timing.total - sum(phases.values()), 0.0)
    rows: List[Row] = []
    for phase, seconds in phases.items():
        rows.append({
            "phase": phase,
            "seconds": seconds,
            "share": seconds / timing.total if timing.total else 0.0,
        })
    return rows


def config_lines(config: Dict[str, object]) -> List[str]:
    lines = [NOT_REPRODUCIBLE_NOTE]
    for key in sorted(config):
        lines.append(f"# {key}={config[key]}")
    return lines


def write_csv(path: Path, rows: Sequence[Row], config: Dict[str, object]) -> Path:
    """Write ``rows`` with ``#`` config lines ahead of the header row."""
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for line in config_lines(config):
            handle.write(line + "\n")
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_csv(path: Path) -> List[Row]:
    """Read a CSV written by ``write_csv``, skipping ``#`` lines."""
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_report(out_dir: Path, name: str, rows: Sequence[Row],
                 config: Dict[str, object]) -> List[Path]:
    """Write ``<name>.csv`` and ``<name>.svg`` into ``out_dir``."""
    out_dir = Path(out_dir)
    csv_path = write_csv(out_dir / f"{name}.csv", rows, config)
    spec = CHARTS[name]
    chart_rows = kernel_chart_rows(rows) if name == "kernels" else list(rows)
    svg = emit_svg(chart_rows,
                   spec.kind,
                   x=spec.x,
                   y=spec.y,
                   series=spec.series,
                   title=spec.title)
    svg_path = out_dir / f"{name}.svg"
    svg_path.write_text(svg, encoding="utf-8")
    logger.info("Wrote %s and %s", csv_path, svg_path)
    return [csv_path, svg_path]
