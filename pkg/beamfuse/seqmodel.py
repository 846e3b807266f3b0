"""GRU encoder-decoder with additive attention, plus the BFM1 model format.

The model is never trained: weights are seeded-random or loaded from a
BFM1 file. It only has to produce realistic per-step logits for the
scheduler and the output-layer kernels.

GRU convention::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hc
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import BinaryIO, Dict, List, Sequence, Tuple

import numpy as np

from .errors import ModelFormatError, ShapeError, TokenRangeError
from .models import (
    DecoderState,
    EncoderOutput,
    ModelDims,
    PrecisionMode,
)
from .rng import SeededStream
from .tensorkit import affine_rows, as_matrix, matmul

logger = logging.getLogger(__name__)

MAGIC = b"BFM1"
HEADER = struct.Struct("<4sIIIIQ")
NAME_LENGTH = struct.Struct("<H")
ELEMENT_COUNT = struct.Struct("<Q")
INIT_SCALE = 0.08

GATE_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")
RNN_PREFIXES = ("enc_fwd", "enc_bwd", "dec1", "dec2")


def section_shapes(dims: ModelDims) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) of every tensor in a model file."""
    e, s = dims.embed_dim, dims.state_dim
    sections: List[Tuple[str, Tuple[int, ...]]] = [
        ("src_embed", (dims.vocab_src, e)),
        ("tgt_embed", (dims.vocab_tgt, e)),
    ]
    for prefix, input_dim in (("enc_fwd", e), ("enc_bwd", e), ("dec1", e),
                              ("dec2", 2 * s)):
        for gate in ("z", "r", "h"):
            sections.append((f"{prefix}.W_{gate}", (s, input_dim)))
            sections.append((f"{prefix}.U_{gate}", (s, s)))
            sections.append((f"{prefix}.b_{gate}", (s, )))
    sections.extend([
        ("att.W_a", (s, s)),
        ("att.U_a", (s, 2 * s)),
        ("att.v_a", (s, )),
        ("out.w", (dims.vocab_tgt, dims.output_input_dim)),
        ("out.b", (dims.vocab_tgt, )),
    ])
    return sections


def predicted_file_size(dims: ModelDims) -> int:
    """Exact byte size of a BFM1 file for ``dims``."""
    size = HEADER.size
    for name, shape in section_shapes(dims):
        size += NAME_LENGTH.size + len(name.encode("utf-8")) + ELEMENT_COUNT.size
        size += 4 * int(np.prod(shape))
    return size


@dataclass(frozen=True)
class GateParams:
    """Weights of one GRU layer."""

    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    """All weights of the encoder-decoder, keyed by section name."""

    dims: ModelDims
    seed: int
    tensors: Dict[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = section_shapes(self.dims)
        if list(self.tensors) != [name for name, _ in expected]:
            raise ShapeError("model sections do not match the declared layout")
        for name, shape in expected:
            tensor = self.tensors[name]
            if tensor.shape != shape:
                raise ShapeError(
                    f"section {name} has shape {tensor.shape}, expected {shape}")
            if tensor.dtype != np.float32:
                raise ShapeError(f"section {name} must be float32")
            if not np.all(np.isfinite(tensor)):
                raise ShapeError(f"section {name} contains non-finite entries")

    def gate(self, prefix: str) -> GateParams:
        if prefix not in RNN_PREFIXES:
            raise KeyError(prefix)
        return GateParams(**{
            name: self.tensors[f"{prefix}.{name}"]
            for name in GATE_NAMES
        })

    @property
    def out_w(self) -> np.ndarray:
        return self.tensors["out.w"]

    @property
    def out_b(self) -> np.ndarray:
        return self.tensors["out.b"]

    def largest_matrix(self) -> Tuple[str, np.ndarray]:
        name = max((name for name, tensor in self.tensors.items()
                    if tensor.ndim == 2),
                   key=lambda key: self.tensors[key].size)
        return name, self.tensors[name]


def generate_model(dims: ModelDims, seed: int) -> ModelParams:
    """Draw every weight i.i.d. uniform in [-0.08, 0.08) from a seeded stream."""
    stream = SeededStream(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in section_shapes(dims):
        count = int(np.prod(shape))
        tensors[name] = stream.weights(count, INIT_SCALE).reshape(shape)
    logger.debug("Generated model %s with seed %d", dims, seed)
    return ModelParams(dims=dims, seed=seed, tensors=tensors)


def write_model(model: ModelParams, stream: BinaryIO) -> None:
    dims = model.dims
    stream.write(
        HEADER.pack(MAGIC, dims.vocab_src, dims.vocab_tgt, dims.embed_dim,
                    dims.state_dim, model.seed))
    for name, tensor in model.tensors.items():
        encoded = name.encode("utf-8")
        stream.write(NAME_LENGTH.pack(len(encoded)))
        stream.write(encoded)
        stream.write(ELEMENT_COUNT.pack(tensor.size))
        stream.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def save_model(model: ModelParams, path: Path) -> Path:
    """Write ``model`` as a BFM1 file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        write_model(model, handle)
    logger.info("Wrote model %s (%d bytes) to %s", model.dims,
                path.stat().st_size, path)
    return path


def model_bytes(model: ModelParams) -> bytes:
    buffer = io.BytesIO()
    write_model(model, buffer)
    return buffer.getvalue()


def parse_model(data: bytes) -> ModelParams:
    """Parse a BFM1 byte string."""
    if len(data) < HEADER.size:
        raise ModelFormatError("file is shorter than the BFM1 header")
    magic, vocab_src, vocab_tgt, embed_dim, state_dim, seed = HEADER.unpack_from(
        data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    try:
        dims = ModelDims(vocab_src=vocab_src,
                         vocab_tgt=vocab_tgt,
                         embed_dim=embed_dim,
                         state_dim=state_dim)
    except ValueError as exc:
        raise ModelFormatError(f"invalid dimensions in header: {exc}") from exc

    offset = HEADER.size
    tensors: Dict[str, np.ndarray] = {}
    for expected_name, shape in section_shapes(dims):
        if offset + NAME_LENGTH.size > len(data):
            raise ModelFormatError(f"truncated before section {expected_name}")
        (name_length, ) = NAME_LENGTH.unpack_from(data, offset)
        offset += NAME_LENGTH.size
        name = data[offset:offset + name_length].decode("utf-8",
                                                          errors="replace")
        offset += name_length
        if name != expected_name:
            raise ModelFormatError(
                f"found section {name!r} where {expected_name!r} was expected")
        if offset + ELEMENT_COUNT.size > len(data):
            raise ModelFormatError(f"truncated header of section {name}")
        (count, ) = ELEMENT_COUNT.unpack_from(data, offset)
        offset += ELEMENT_COUNT.size
        if count != int(np.prod(shape)):
            raise ModelFormatError(
                f"section {name} holds {count} values, expected {int(np.prod(shape))}"
            )
        end = offset + 4 * count
        if end > len(data):
            raise ModelFormatError(f"truncated data of section {name}")
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = values.astype(np.float32).reshape(shape)
        offset = end
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after last section")
    try:
        return ModelParams(dims=dims, seed=seed, tensors=tensors)
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from exc


def load_model(path: Path) -> ModelParams:
    """Read a BFM1 file."""
    path = Path(path)
    model = parse_model(path.read_bytes())
    logger.info("Loaded model %s (seed %d) from %s", model.dims, model.seed,
                path)
    return model


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.float32(1.0) / (np.float32(1.0) + np.exp(-x))


def gru_cell(h,
             x,
             gate: GateParams,
             mode: PrecisionMode = PrecisionMode.FULL32,
             *,
             threads: int = 1) -> np.ndarray:
    """One GRU update for a single state vector or a (batch, state) matrix."""
    h = np.asarray(h, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    single = h.ndim == 1
    h_rows = as_matrix(h[None, :] if single else h, "state")
    x_rows = as_matrix(x[None, :] if x.ndim == 1 else x, "input")
    if h_rows.shape[0] != x_rows.shape[0]:
        raise ShapeError(
            f"state batch {h_rows.shape[0]} does not match input batch {x_rows.shape[0]}"
        )
    if gate.U_z.shape[1] != h_rows.shape[1] or gate.W_z.shape[1] != x_rows.shape[1]:
        raise ShapeError(
            f"GRU expects state {gate.U_z.shape[1]} / input {gate.W_z.shape[1]}, "
            f"got {h_rows.shape[1]} / {x_rows.shape[1]}")

    z = sigmoid(
        affine_rows(x_rows, gate.W_z, gate.b_z, mode, threads=threads) +
        affine_rows(h_rows, gate.U_z, None, mode, threads=threads))
    r = sigmoid(
        affine_rows(x_rows, gate.W_r, gate.b_r, mode, threads=threads) +
        affine_rows(h_rows, gate.U_r, None, mode, threads=threads))
    candidate = np.tanh(
        affine_rows(x_rows, gate.W_h, gate.b_h, mode, threads=threads) +
        affine_rows(r * h_rows, gate.U_h, None, mode, threads=threads))
    updated = (np.float32(1.0) - z) * h_rows + z * candidate
    return updated[0] if single else updated


def _check_source(model: ModelParams, tokens: Sequence[int]) -> List[int]:
    ids = [int(token) for token in tokens]
    if not ids:
        raise ValueError("source sentence must contain at least one token")
    for token in ids:
        if token < 0 or token >= model.dims.vocab_src:
            raise TokenRangeError(
                f"source token {token} outside vocabulary of {model.dims.vocab_src}"
            )
    return ids


def encode(model: ModelParams,
           tokens: Sequence[int],
           mode: PrecisionMode = PrecisionMode.FULL32,
           *,
           threads: int = 1) -> EncoderOutput:
    """Bidirectional GRU annotations ``concat(forward_t, backward_t)``."""
    ids = _check_source(model, tokens)
    embedded = model.tensors["src_embed"][ids]
    state_dim = model.dims.state_dim
    length = len(ids)

    forward_gate = model.gate("enc_fwd")
    backward_gate = model.gate("enc_bwd")
    forward = np.zeros((length, state_dim), dtype=np.float32)
    backward = np.zeros((length, state_dim), dtype=np.float32)

    h = np.zeros(state_dim, dtype=np.float32)
    for t in range(length):
        h = gru_cell(h, embedded[t], forward_gate, mode, threads=threads)
        forward[t] = h
    h = np.zeros(state_dim, dtype=np.float32)
    for t in reversed(range(length)):
        h = gru_cell(h, embedded[t], backward_gate, mode, threads=threads)
        backward[t] = h

    annotations = np.concatenate([forward, backward], axis=1)
    keys = affine_rows(annotations,
                       model.tensors["att.U_a"],
                       None,
                       mode,
                       threads=threads)
    return EncoderOutput(annotations=annotations, keys=keys)


def initial_state(model: ModelParams) -> DecoderState:
    zeros = np.zeros(model.dims.state_dim, dtype=np.float32)
    return DecoderState(h1=zeros, h2=zeros.copy())


def _attend_query(model: ModelParams, query: np.ndarray, enc: EncoderOutput,
                  mode: PrecisionMode) -> Tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(enc.keys + query)
    energies = matmul(hidden, model.tensors["att.v_a"][:, None], mode)[:, 0]
    shifted = np.exp(energies - energies.max())
    weights = shifted / shifted.sum(dtype=np.float32)
    context = matmul(weights[None, :], enc.annotations, mode)[0]
    return context, weights


def attend(model: ModelParams,
           h1,
           enc: EncoderOutput,
           mode: PrecisionMode = PrecisionMode.FULL32) -> Tuple[np.ndarray, np.ndarray]:
    """Additive attention; returns (context, weights) for one decoder state."""
    h1 = np.asarray(h1, dtype=np.float32)
    query = affine_rows(h1[None, :], model.tensors["att.W_a"], None, mode)[0]
    return _attend_query(model, query, enc, mode)


def decode_step(
    model: ModelParams,
    states: Sequence[DecoderState],
    prev_tokens: Sequence[int],
    encs: Sequence[EncoderOutput],
    mode: PrecisionMode = PrecisionMode.FULL32,
    *,
    threads: int = 1,
) -> Tuple[List[DecoderState], np.ndarray]:
    """Advance every slot one step; returns new states and bias-free logits.

    Each row of the result depends only on its own slot, bit for bit.
    """
    if not (len(states) == len(prev_tokens) == len(encs)):
        raise ShapeError(
            f"misaligned batch: {len(states)} states, {len(prev_tokens)} tokens, "
            f"{len(encs)} encoder outputs")
    if not states:
        raise ShapeError("decode_step needs at least one slot")
    ids = [int(token) for token in prev_tokens]
    for token in ids:
        if token < 0 or token >= model.dims.vocab_tgt:
            raise TokenRangeError(
                f"target token {token} outside vocabulary of {model.dims.vocab_tgt}"
            )

    embedded = model.tensors["tgt_embed"][ids]
    h1 = np.stack([state.h1 for state in states])
    h2 = np.stack([state.h2 for state in states])

    h1 = gru_cell(h1, embedded, model.gate("dec1"), mode, threads=threads)
    queries = affine_rows(h1, model.tensors["att.W_a"], None, mode, threads=threads)
    contexts = np.stack([
        _attend_query(model, queries[j], encs[j], mode)[0]
        for j in range(len(ids))
    ])
    h2 = gru_cell(h2, contexts, model.gate("dec2"), mode, threads=threads)

    features = np.concatenate([h2, contexts, embedded], axis=1)
    logits = affine_rows(features, model.out_w, None, mode, threads=threads)
    new_states = [
        DecoderState(h1=h1[j].copy(), h2=h2[j].copy()) for j in range(len(ids))
    ]
    return new_states, logits


@dataclass
class ModelBackend:
    """Decoder backend driving a real ``ModelParams``."""

    model: ModelParams
    precision: PrecisionMode = PrecisionMode.FULL32
    threads: int = 1

    @property
    def vocab_size(self) -> int:
        return self.model.dims.vocab_tgt

    @cached_property
    def bias(self) -> List[float]:
        return self.model.out_b.tolist()

    def encode(self, tokens: Sequence[int]) -> EncoderOutput:
        return encode(self.model, tokens, self.precision, threads=self.threads)

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        return initial_state(self.model)

    def step(
        self,
        states: Sequence[DecoderState],
        prev_tokens: Sequence[int],
        encs: Sequence[EncoderOutput],
    ) -> Tuple[List[DecoderState], np.ndarray]:
        return decode_step(self.model,
                           states,
                           prev_tokens,
                           encs,
                           self.precision,
                           threads=self.threads)
