"""Beam search with naive (constant) or dynamic (shrinking) mini-batching."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .models import (
    EOS_ID,
    Batch,
    BeamConfig,
    DecodeResult,
    DecoderState,
    DecodeStats,
    EncoderOutput,
    Hypothesis,
    KBestList,
    PrecisionMode,
    StepRecord,
)
from .outlayer import KERNELS, output_layer
from .seqmodel import ModelBackend, ModelParams

logger = logging.getLogger(__name__)

STRATEGIES = ("naive", "dynamic")


class DecoderBackend(Protocol):
    """What the scheduler needs from a model."""

    @property
    def vocab_size(self) -> int:
        ...

    @property
    def bias(self) -> Sequence[float]:
        ...

    def encode(self, tokens: Sequence[int]) -> EncoderOutput:
        ...

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        ...

    def step(
        self,
        states: Sequence[DecoderState],
        prev_tokens: Sequence[int],
        encs: Sequence[EncoderOutput],
    ) -> Tuple[List[DecoderState], np.ndarray]:
        ...


@dataclass(frozen=True)
class Expansion:
    """Result of expanding one sentence's beam by one step."""

    live: List[Hypothesis]
    finished: List[Hypothesis]


def final_score(hyp: Hypothesis, config: BeamConfig) -> float:
    """Raw log-probability, or its per-token mean when normalizing."""
    if not hyp.tokens:
        raise ValueError("cannot score a hypothesis without tokens")
    if config.length_normalize:
        return hyp.score / len(hyp.tokens)
    return hyp.score


def expand_beam(
    hyps: Sequence[Hypothesis],
    kbests: Sequence[KBestList],
    config: BeamConfig,
    *,
    states: Optional[Sequence[DecoderState]] = None,
    finished_count: int = 0,
) -> Expansion:
    """Keep the best ``beam_size - finished_count`` continuations.

    Candidates are ranked by accumulated log-probability; ties go to the
    lower parent slot, then the lower class index. Selected EOS
    continuations are returned as finished.
    """
    if len(hyps) != len(kbests):
        raise ValueError(f"{len(hyps)} hypotheses but {len(kbests)} k-best lists")
    if states is not None and len(states) != len(hyps):
        raise ValueError(f"{len(hyps)} hypotheses but {len(states)} states")
    for kbest in kbests:
        if kbest.capacity != config.beam_size:
            raise ValueError(
                f"k-best capacity {kbest.capacity} does not match beam size {config.beam_size}"
            )

    candidates = []
    for slot, (parent, kbest) in enumerate(zip(hyps, kbests)):
        state = states[slot] if states is not None else parent.state
        for index, log_prob in zip(kbest.indices(), kbest.log_probabilities()):
            candidates.append((parent.score + log_prob, slot, index, parent, state))
    candidates.sort(key=lambda candidate: (-candidate[0], candidate[1], candidate[2]))

    width = max(config.beam_size - finished_count, 0)
    live: List[Hypothesis] = []
    finished: List[Hypothesis] = []
    for score, _slot, index, parent, state in candidates[:width]:
        child = Hypothesis(
            sentence_id=parent.sentence_id,
            tokens=parent.tokens + (index, ),
            score=score,
            state=state,
            finished=index == EOS_ID,
        )
        (finished if child.finished else live).append(child)
    return Expansion(live=live, finished=finished)


def compact_states(batch: Batch, finished: Sequence[int]) -> Batch:
    """Drop finished slots and re-pack the survivors in order."""
    removed = set()
    for index in finished:
        if index < 0 or index >= len(batch.slots):
            raise IndexError(f"slot {index} outside batch of {len(batch.slots)}")
        if not batch.slots[index].finished:
            raise ValueError(f"slot {index} holds an unfinished hypothesis")
        removed.add(index)
    if not removed:
        return batch
    survivors = [
        hyp for index, hyp in enumerate(batch.slots) if index not in removed
    ]
    return Batch(slots=survivors)


@dataclass
class _SentenceBeam:
    sentence_id: int
    enc: EncoderOutput
    step_limit: int
    live: List[Hypothesis]
    finished: List[Hypothesis] = field(default_factory=list)
    done: bool = False


@dataclass(frozen=True)
class _Slot:
    beam: int
    position: Optional[int]
    state: DecoderState
    token: int


@dataclass
class BeamSearchRunner:
    """Decodes sentences in mini-batches with the chosen strategy and kernel."""

    backend: DecoderBackend
    config: BeamConfig = field(default_factory=BeamConfig)
    strategy: str = "dynamic"
    kernel: str = "fused"
    shards: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.kernel not in KERNELS:
            raise ValueError(
                f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.kernel == "argmax1" and self.config.beam_size != 1:
            raise ValueError("the argmax1 kernel requires beam size 1")
        if self.shards < 1:
            raise ValueError(f"shards must be >= 1, got {self.shards}")
        if self.backend.vocab_size <= EOS_ID:
            raise ValueError("target vocabulary must contain the EOS id")
        if self.config.beam_size > self.backend.vocab_size:
            raise ValueError(
                f"beam size {self.config.beam_size} exceeds vocabulary of {self.backend.vocab_size}"
            )

    def decode(self,
               sentences: Sequence[Sequence[int]],
               batch_size: Optional[int] = None) -> DecodeResult:
        """Translate ``sentences``; output order follows input order."""
        if not sentences:
            return DecodeResult(translations=[], stats=DecodeStats())
        for sentence_id, sentence in enumerate(sentences):
            if len(sentence) == 0:
                raise ValueError(f"sentence {sentence_id} is empty")
        if batch_size is None:
            batch_size = len(sentences)
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")

        translations: List[List[int]] = [[] for _ in sentences]
        stats = DecodeStats()
        for batch_index, start in enumerate(range(0, len(sentences), batch_size)):
            ids = list(range(start, min(start + batch_size, len(sentences))))
            batch_stats = self._decode_batch(batch_index, ids, sentences,
                                             translations)
            stats.merge(batch_stats)
        return DecodeResult(translations=translations, stats=stats)

    def _decode_batch(self, batch_index: int, ids: List[int],
                      sentences: Sequence[Sequence[int]],
                      translations: List[List[int]]) -> DecodeStats:
        stats = DecodeStats()
        started = time.perf_counter()
        beam_size = self.config.beam_size

        beams: List[_SentenceBeam] = []
        for sentence_id in ids:
            enc = self.backend.encode(sentences[sentence_id])
            root = Hypothesis(sentence_id=sentence_id,
                              tokens=(),
                              score=0.0,
                              state=self.backend.initial_state(enc))
            beams.append(
                _SentenceBeam(
                    sentence_id=sentence_id,
                    enc=enc,
                    step_limit=self.config.step_limit(len(sentences[sentence_id])),
                    live=[root],
                ))
        stats.timing.add("encoder", time.perf_counter() - started)

        idle_states = [beam.live[0].state for beam in beams for _ in range(beam_size)]
        step = 0
        while not all(beam.done for beam in beams):
            step += 1
            step_started = time.perf_counter()
            if self.strategy == "naive":
                slots = self._naive_slots(beams, step, idle_states)
            else:
                slots = self._dynamic_slots(beams, step)

            tick = time.perf_counter()
            new_states, logits = self.backend.step(
                [slot.state for slot in slots],
                [slot.token for slot in slots],
                [beams[slot.beam].enc for slot in slots],
            )
            stats.timing.add("decoder", time.perf_counter() - tick)

            tick = time.perf_counter()
            per_beam: Dict[int, List[Tuple[int, KBestList, DecoderState]]] = {}
            for row, slot in enumerate(slots):
                if slot.position is None:
                    continue
                if self.strategy == "naive":
                    # Naive rows map one-to-one onto the fixed slot table.
                    idle_states[row] = new_states[row]
                kbest = output_layer(self.kernel,
                                     logits[row],
                                     self.backend.bias,
                                     beam_size,
                                     shards=self.shards,
                                     workers=self.workers)
                per_beam.setdefault(slot.beam, []).append(
                    (slot.position, kbest, new_states[row]))
            stats.timing.add("output_layer", time.perf_counter() - tick)

            tick = time.perf_counter()
            self._advance(beams, per_beam, step, stats)
            stats.timing.add("beam_search", time.perf_counter() - tick)

            record = StepRecord(batch=batch_index,
                                step=step,
                                active_slots=len(slots),
                                seconds=time.perf_counter() - step_started)
            stats.record(record)
            logger.debug("Batch %d step %d: %d active slots", batch_index, step,
                         record.active_slots)

        for beam in beams:
            best = max(beam.finished,
                       key=lambda hyp: final_score(hyp, self.config))
            translations[beam.sentence_id] = list(best.tokens[:-1])
        stats.timing.total = time.perf_counter() - started
        logger.info(
            "Decoded batch %d (%s, %s kernel): %d sentences, %d steps, %d hypothesis decodes",
            batch_index, self.strategy, self.kernel, len(ids), step,
            stats.hypothesis_decodes)
        return stats

    def _dynamic_slots(self, beams: List[_SentenceBeam], step: int) -> List[_Slot]:
        slots = []
        for index, beam in enumerate(beams):
            if beam.done:
                continue
            width = self.config.beam_size if step == 1 else len(beam.live)
            for position in range(width):
                if position < len(beam.live):
                    hyp = beam.live[position]
                    slots.append(_Slot(index, position, hyp.state, hyp.last_token))
                else:
                    # Reserved slot: decoded but contributes no candidates.
                    hyp = beam.live[0]
                    slots.append(_Slot(index, None, hyp.state, hyp.last_token))
        return slots

    def _naive_slots(self, beams: List[_SentenceBeam], step: int,
                     idle_states: List[DecoderState]) -> List[_Slot]:
        slots = []
        beam_size = self.config.beam_size
        for index, beam in enumerate(beams):
            for position in range(beam_size):
                table_index = index * beam_size + position
                if not beam.done and position < len(beam.live):
                    hyp = beam.live[position]
                    slots.append(_Slot(index, position, hyp.state, hyp.last_token))
                elif not beam.done and step == 1:
                    hyp = beam.live[0]
                    slots.append(_Slot(index, None, hyp.state, hyp.last_token))
                else:
                    slots.append(
                        _Slot(index, None, idle_states[table_index], EOS_ID))
        return slots

    def _advance(self, beams: List[_SentenceBeam],
                 per_beam: Dict[int, List[Tuple[int, KBestList, DecoderState]]],
                 step: int, stats: DecodeStats) -> None:
        occupied: List[Hypothesis] = []
        for index, beam in enumerate(beams):
            if beam.done:
                continue
            entries = sorted(per_beam.get(index, []), key=lambda entry: entry[0])
            expansion = expand_beam(
                [beam.live[position] for position, _, _ in entries],
                [kbest for _, kbest, _ in entries],
                self.config,
                states=[state for _, _, state in entries],
                finished_count=len(beam.finished),
            )
            beam.finished.extend(expansion.finished)
            live = expansion.live
            newly_finished = list(expansion.finished)

            if live and step >= beam.step_limit:
                forced = [
                    Hypothesis(sentence_id=hyp.sentence_id,
                               tokens=hyp.tokens + (EOS_ID, ),
                               score=hyp.score,
                               state=hyp.state,
                               finished=True) for hyp in live
                ]
                logger.warning(
                    "Sentence %d reached the step limit %d; forcing EOS on %d hypotheses",
                    beam.sentence_id, beam.step_limit, len(forced))
                stats.forced_eos.append(beam.sentence_id)
                beam.finished.extend(forced)
                newly_finished.extend(forced)
                live = []
            elif live and self._should_stop(beam, live):
                live = []

            beam.done = not live
            occupied.extend(live)
            occupied.extend(newly_finished)

        batch = Batch(slots=occupied)
        batch = compact_states(
            batch, [index for index, hyp in enumerate(batch.slots) if hyp.finished])
        survivors: Dict[int, List[Hypothesis]] = {}
        for hyp in batch.slots:
            survivors.setdefault(hyp.sentence_id, []).append(hyp)
        for beam in beams:
            if not beam.done:
                beam.live = survivors.get(beam.sentence_id, [])

    def _should_stop(self, beam: _SentenceBeam, live: List[Hypothesis]) -> bool:
        if len(beam.finished) >= self.config.beam_size:
            return True
        if not beam.finished:
            return False
        best_finished = max(final_score(hyp, self.config) for hyp in beam.finished)
        return all(final_score(hyp, self.config) < best_finished for hyp in live)


def decode_corpus(
    model: Optional[ModelParams],
    sentences: Sequence[Sequence[int]],
    config: Optional[BeamConfig] = None,
    strategy: str = "dynamic",
    kernel: str = "fused",
    *,
    batch_size: Optional[int] = None,
    precision: PrecisionMode = PrecisionMode.FULL32,
    threads: int = 1,
    shards: int = 1,
    backend: Optional[DecoderBackend] = None,
) -> DecodeResult:
    """Decode a corpus with a model (or an explicit backend)."""
    if backend is None:
        if model is None:
            raise ValueError("either a model or a backend is required")
        backend = ModelBackend(model=model, precision=precision, threads=threads)
    runner = BeamSearchRunner(backend=backend,
                              config=config or BeamConfig(),
                              strategy=strategy,
                              kernel=kernel,
                              shards=shards,
                              workers=threads)
    return runner.decode(sentences, batch_size=batch_size)
