"""Core data models for beamfuse."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
RESERVED_IDS = 3


class PrecisionMode(str, enum.Enum):
    """Matrix multiplication precision."""

    FULL32 = "full32"
    EMULATED16 = "emulated16"


@dataclass(frozen=True)
class ModelDims:
    """Declared dimensions of an encoder-decoder model."""

    vocab_src: int
    vocab_tgt: int
    embed_dim: int
    state_dim: int

    def __post_init__(self) -> None:
        for name in ("vocab_src", "vocab_tgt", "embed_dim", "state_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def output_input_dim(self) -> int:
        """Width of [h2; context; embedding] fed to the output layer."""
        return self.state_dim + 2 * self.state_dim + self.embed_dim


@dataclass(frozen=True)
class EncoderOutput:
    """Annotation vectors for one source sentence.

    ``keys`` caches the attention projection of the annotations so every
    decoding step can reuse it.
    """

    annotations: np.ndarray
    keys: np.ndarray

    def __len__(self) -> int:
        return int(self.annotations.shape[0])


@dataclass(frozen=True)
class DecoderState:
    """Hidden states of the two decoder layers."""

    h1: np.ndarray
    h2: np.ndarray


@dataclass(frozen=True)
class RunningMaxSum:
    """Softmax normalizer gathered by a single pass: max, sum and argmax."""

    max: float
    sum: float
    best: int

    def probability(self, score: float) -> float:
        return math.exp(score - self.max) / self.sum

    def log_probability(self, score: float) -> float:
        return (score - self.max) - math.log(self.sum)


@dataclass(frozen=True)
class KBestEntry:
    index: int
    score: float


@dataclass
class KBestList:
    """Bounded selection of the best classes, best first.

    Ties keep the lower class index ahead. ``normalizer`` is set when the
    scores are raw logits; without it the scores are already
    probabilities.
    """

    capacity: int
    entries: List[KBestEntry] = field(default_factory=list)
    normalizer: Optional[RunningMaxSum] = None

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"k-best capacity must be >= 1, got {self.capacity}")

    @property
    def floor(self) -> float:
        """Score a new entry must strictly exceed to be admitted."""
        if len(self.entries) < self.capacity:
            return -math.inf
        return self.entries[-1].score

    def offer(self, index: int, score: float) -> None:
        entries = self.entries
        if len(entries) >= self.capacity and score <= entries[-1].score:
            return
        position = len(entries)
        while position > 0 and entries[position - 1].score < score:
            position -= 1
        entries.insert(position, KBestEntry(index=index, score=score))
        if len(entries) > self.capacity:
            entries.pop()

    def indices(self) -> List[int]:
        return [entry.index for entry in self.entries]

    def probabilities(self) -> List[float]:
        if self.normalizer is None:
            return [entry.score for entry in self.entries]
        return [self.normalizer.probability(entry.score) for entry in self.entries]

    def log_probabilities(self) -> List[float]:
        if self.normalizer is None:
            return [
                math.log(max(entry.score, np.finfo(np.float64).tiny))
                for entry in self.entries
            ]
        return [
            self.normalizer.log_probability(entry.score) for entry in self.entries
        ]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ShardResult:
    """Local maximum of one contiguous shard; ``best`` is a global index."""

    max: float
    best: int


@dataclass(frozen=True)
class Hypothesis:
    """A partial translation inside a sentence's beam."""

    sentence_id: int
    tokens: Tuple[int, ...]
    score: float
    state: DecoderState
    finished: bool = False

    def __post_init__(self) -> None:
        ends_with_eos = bool(self.tokens) and self.tokens[-1] == EOS_ID
        if self.finished != ends_with_eos:
            raise ValueError(
                "finished hypotheses must end with EOS and live ones must not")
        if not math.isfinite(self.score):
            raise ValueError(f"hypothesis score must be finite, got {self.score}")

    @property
    def last_token(self) -> int:
        return self.tokens[-1] if self.tokens else BOS_ID


@dataclass(frozen=True)
class Batch:
    """Dense list of decode slots for one step."""

    slots: Sequence[Hypothesis]

    @property
    def slot_map(self) -> List[int]:
        """Sentence id of every slot, in slot order."""
        return [hyp.sentence_id for hyp in self.slots]

    def __len__(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class BeamConfig:
    """Beam search settings.

    ``max_steps`` of ``None`` means ``2 * source length + 10`` per sentence.
    """

    beam_size: int = 1
    max_steps: Optional[int] = None
    length_normalize: bool = False

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    def step_limit(self, source_length: int) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 2 * source_length + 10


@dataclass(frozen=True)
class StepRecord:
    batch: int
    step: int
    active_slots: int
    seconds: float


@dataclass
class TimingBreakdown:
    """Accumulated seconds per named phase."""

    phases: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    def add(self, phase: str, seconds: float) -> None:
        self.phases[phase] = self.phases.get(phase, 0.0) + seconds

    def merge(self, other: "TimingBreakdown") -> None:
        for phase, seconds in other.phases.items():
            self.add(phase, seconds)
        self.total += other.total

    def shares(self) -> Dict[str, float]:
        if self.total <= 0.0:
            return {phase: 0.0 for phase in self.phases}
        return {phase: seconds / self.total for phase, seconds in self.phases.items()}


@dataclass
class DecodeStats:
    """Per-step record of a decode run."""

    steps: List[StepRecord] = field(default_factory=list)
    hypothesis_decodes: int = 0
    forced_eos: List[int] = field(default_factory=list)
    timing: TimingBreakdown = field(default_factory=TimingBreakdown)

    def record(self, record: StepRecord) -> None:
        self.steps.append(record)
        self.hypothesis_decodes += record.active_slots

    def merge(self, other: "DecodeStats") -> None:
        for record in other.steps:
            self.record(record)
        self.forced_eos.extend(other.forced_eos)
        self.timing.merge(other.timing)


@dataclass
class DecodeResult:
    """Translations (EOS stripped, input order) and their stats."""

    translations: List[List[int]]
    stats: DecodeStats


@dataclass
class BenchRun:
    """Repeated wall-clock measurement of one configuration."""

    config: Dict[str, object]
    repetitions: int
    warmup: int
    times: List[float]

    def __post_init__(self) -> None:
        if self.repetitions < 3:
            raise ValueError(f"repetitions must be >= 3, got {self.repetitions}")

    @property
    def median(self) -> float:
        ordered = sorted(self.times)
        mid = len(ordered) // 2
        if len(ordered) % 2:
            return ordered[mid]
        return (ordered[mid - 1] + ordered[mid]) / 2.0

    @property
    def minimum(self) -> float:
        return min(self.times)
