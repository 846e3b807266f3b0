"""beamfuse package initialization."""

from .bench import bench_kernels, bench_precision, bench_step_timing, bench_sweep_batch
from .db import ResultStore
from .errors import BeamfuseError, DataError, ModelFormatError, ShapeError, TokenRangeError
from .models import (
    BeamConfig,
    DecodeResult,
    DecodeStats,
    Hypothesis,
    KBestList,
    ModelDims,
    PrecisionMode,
)
from .outlayer import argmax_1best, argmax_1best_parallel, baseline_output, fused_output
from .scheduler import BeamSearchRunner, compact_states, decode_corpus, expand_beam
from .seqmodel import ModelParams, generate_model, load_model, save_model

__all__ = [
    "BeamConfig",
    "BeamSearchRunner",
    "BeamfuseError",
    "DataError",
    "DecodeResult",
    "DecodeStats",
    "Hypothesis",
    "KBestList",
    "ModelDims",
    "ModelFormatError",
    "ModelParams",
    "PrecisionMode",
    "ResultStore",
    "ShapeError",
    "TokenRangeError",
    "argmax_1best",
    "argmax_1best_parallel",
    "baseline_output",
    "bench_kernels",
    "bench_precision",
    "bench_step_timing",
    "bench_sweep_batch",
    "compact_states",
    "decode_corpus",
    "expand_beam",
    "fused_output",
    "generate_model",
    "load_model",
    "save_model",
]
