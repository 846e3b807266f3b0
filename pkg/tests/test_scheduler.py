from __future__ import annotations

from typing import List, Sequence

import numpy as np
import pytest

from beamfuse.corpus import generate_corpus
from beamfuse.models import (
    EOS_ID,
    Batch,
    BeamConfig,
    DecoderState,
    EncoderOutput,
    Hypothesis,
    KBestEntry,
    KBestList,
    ModelDims,
    RunningMaxSum,
)
from beamfuse.scheduler import (
    BeamSearchRunner,
    compact_states,
    decode_corpus,
    expand_beam,
    final_score,
)
from beamfuse.seqmodel import generate_model

STATE = DecoderState(h1=np.zeros(1, dtype=np.float32), h2=np.zeros(1, dtype=np.float32))


class ScriptedBackend:
    """Emits EOS once a sentence has been decoded for ``len(source)`` steps."""

    vocab_size = 6
    bias = [0.0] * 6

    def __init__(self) -> None:
        self.widths: List[int] = []

    def encode(self, tokens: Sequence[int]) -> EncoderOutput:
        zeros = np.zeros((len(tokens), 1), dtype=np.float32)
        return EncoderOutput(annotations=zeros, keys=zeros)

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        return STATE

    def step(self, states, prev_tokens, encs):
        self.widths.append(len(states))
        new_states = []
        logits = np.zeros((len(states), self.vocab_size), dtype=np.float32)
        for row, (state, enc) in enumerate(zip(states, encs)):
            count = state.h1[0] + 1.0
            new_states.append(DecoderState(h1=np.array([count], dtype=np.float32), h2=state.h2))
            logits[row, EOS_ID] = 10.0 if count >= len(enc) else -10.0
            logits[row, 3] = 1.0
            logits[row, 4] = 0.5
        return new_states, logits


def hyp(sentence_id: int, tokens, score: float = 0.0) -> Hypothesis:
    tokens = tuple(tokens)
    return Hypothesis(sentence_id=sentence_id,
                      tokens=tokens,
                      score=score,
                      state=STATE,
                      finished=bool(tokens) and tokens[-1] == EOS_ID)


def log_prob_list(capacity: int, pairs) -> KBestList:
    """k-best list whose scores are already log-probabilities."""
    return KBestList(capacity=capacity,
                     entries=[KBestEntry(index=index, score=score) for index, score in pairs],
                     normalizer=RunningMaxSum(max=0.0, sum=1.0, best=pairs[0][0]))


def scripted_decode(lengths, beam: int, strategy: str):
    backend = ScriptedBackend()
    sentences = [[3] * length for length in lengths]
    result = decode_corpus(None, sentences, BeamConfig(beam_size=beam), strategy, "fused",
                           backend=backend)
    return result, backend


@pytest.mark.parametrize(
    "lengths, beam, naive_decodes, dynamic_decodes",
    [
        ([2, 4], 1, 8, 6),
        ([1, 3], 2, 12, 8),
    ],
)
def test_dynamic_batching_decodes_fewer_hypotheses(lengths, beam, naive_decodes, dynamic_decodes):
    naive, naive_backend = scripted_decode(lengths, beam, "naive")
    dynamic, dynamic_backend = scripted_decode(lengths, beam, "dynamic")

    assert naive.stats.hypothesis_decodes == naive_decodes
    assert dynamic.stats.hypothesis_decodes == dynamic_decodes
    assert sum(naive_backend.widths) == naive_decodes
    assert sum(dynamic_backend.widths) == dynamic_decodes
    assert sum(record.active_slots for record in dynamic.stats.steps) == dynamic_decodes
    assert naive.translations == dynamic.translations


def test_naive_batch_keeps_constant_width():
    naive, backend = scripted_decode([2, 4], 1, "naive")
    assert backend.widths == [2, 2, 2, 2]
    assert [record.active_slots for record in naive.stats.steps] == [2, 2, 2, 2]


def test_dynamic_batch_shrinks_as_sentences_finish():
    dynamic, backend = scripted_decode([2, 4], 1, "dynamic")
    assert backend.widths == [2, 2, 1, 1]
    assert dynamic.translations == [[3], [3, 3, 3]]


def test_step_limit_forces_eos():
    backend = ScriptedBackend()
    config = BeamConfig(beam_size=1, max_steps=2)

    result = decode_corpus(None, [[3] * 5, [3]], config, backend=backend)

    assert result.translations == [[3, 3], []]
    assert result.stats.forced_eos == [0]


def test_empty_corpus_gives_empty_result():
    result = decode_corpus(None, [], backend=ScriptedBackend())
    assert result.translations == []
    assert result.stats.hypothesis_decodes == 0


def test_runner_rejects_bad_configuration():
    with pytest.raises(ValueError):
        BeamSearchRunner(backend=ScriptedBackend(), config=BeamConfig(beam_size=2), kernel="argmax1")
    with pytest.raises(ValueError):
        BeamSearchRunner(backend=ScriptedBackend(), strategy="greedy")
    with pytest.raises(ValueError):
        BeamSearchRunner(backend=ScriptedBackend(), config=BeamConfig(beam_size=7))
    with pytest.raises(ValueError):
        BeamSearchRunner(backend=ScriptedBackend()).decode([[3], []])


def test_expand_beam_keeps_best_candidates_across_slots():
    parents = [hyp(0, [3]), hyp(0, [4])]
    kbests = [
        log_prob_list(2, [(3, -1.0), (4, -2.5)]),
        log_prob_list(2, [(3, -1.5), (4, -3.0)]),
    ]

    expansion = expand_beam(parents, kbests, BeamConfig(beam_size=2))

    assert [child.score for child in expansion.live] == [-1.0, -1.5]
    assert [child.tokens for child in expansion.live] == [(3, 3), (4, 3)]
    assert expansion.finished == []


def test_expand_beam_single_best_continuation():
    expansion = expand_beam([hyp(0, [])], [log_prob_list(1, [(4, -0.2)])], BeamConfig())
    assert [child.tokens for child in expansion.live] == [(4, )]


def test_expand_beam_finishes_on_best_eos():
    expansion = expand_beam([hyp(0, [3])], [log_prob_list(2, [(EOS_ID, -0.1), (4, -2.0)])],
                            BeamConfig(beam_size=2))

    assert [child.tokens for child in expansion.finished] == [(3, EOS_ID)]
    assert expansion.finished[0].finished is True
    assert [child.tokens for child in expansion.live] == [(3, 4)]


def test_expand_beam_narrows_by_finished_count():
    kbests = [log_prob_list(3, [(3, -1.0), (4, -2.0), (5, -3.0)])]
    expansion = expand_beam([hyp(0, [])], kbests, BeamConfig(beam_size=3), finished_count=2)
    assert len(expansion.live) == 1


def test_compact_states_removes_finished_slots_in_order():
    a, b, c = hyp(0, [3]), hyp(1, [3, EOS_ID]), hyp(2, [4])
    batch = Batch(slots=[a, b, c])

    compacted = compact_states(batch, [1])

    assert len(compacted) == 2
    assert compacted.slots[0] is a and compacted.slots[1] is c
    assert compacted.slot_map == [0, 2]
    assert compact_states(batch, []) is batch


def test_compact_states_can_empty_the_batch():
    batch = Batch(slots=[hyp(0, [EOS_ID]), hyp(1, [3, EOS_ID])])
    assert len(compact_states(batch, [0, 1])) == 0


def test_compact_states_validates_indices():
    batch = Batch(slots=[hyp(0, [3]), hyp(1, [EOS_ID])])
    with pytest.raises(IndexError):
        compact_states(batch, [2])
    with pytest.raises(ValueError):
        compact_states(batch, [0])


def test_final_score_length_normalization():
    long = hyp(0, [3, 4, 5, EOS_ID], score=-4.0)
    short = hyp(0, [3, EOS_ID], score=-3.5)
    normalized = BeamConfig(length_normalize=True)
    raw = BeamConfig()

    assert final_score(long, normalized) == -1.0
    assert final_score(long, raw) == -4.0
    assert max([long, short], key=lambda h: final_score(h, raw)) is short
    assert max([long, short], key=lambda h: final_score(h, normalized)) is long


def desk_setup(count: int = 6):
    model = generate_model(ModelDims(vocab_src=40, vocab_tgt=24, embed_dim=6, state_dim=8), seed=21)
    corpus = generate_corpus(count, 40, seed=22, mean_length=4.0, max_length=7)
    return model, corpus


@pytest.mark.parametrize("beam", [1, 2, 3, 4, 5])
def test_strategies_and_kernels_give_identical_translations(beam):
    model, corpus = desk_setup()
    config = BeamConfig(beam_size=beam)

    reference = decode_corpus(model, corpus, config, "dynamic", "fused")
    naive = decode_corpus(model, corpus, config, "naive", "fused")
    baseline = decode_corpus(model, corpus, config, "dynamic", "baseline")
    small_batches = decode_corpus(model, corpus, config, "naive", "fused", batch_size=2)

    assert naive.translations == reference.translations
    assert baseline.translations == reference.translations
    assert small_batches.translations == reference.translations
    assert reference.stats.hypothesis_decodes <= naive.stats.hypothesis_decodes


def test_argmax_kernel_matches_fused_greedy_search():
    model, corpus = desk_setup()
    fused = decode_corpus(model, corpus, BeamConfig(), "dynamic", "fused")
    argmax = decode_corpus(model, corpus, BeamConfig(), "dynamic", "argmax1", shards=3)
    assert argmax.translations == fused.translations


def test_dynamic_active_slots_never_grow_at_beam_one():
    model, corpus = desk_setup(count=8)
    result = decode_corpus(model, corpus, BeamConfig(), "dynamic", "fused")

    slots = [record.active_slots for record in result.stats.steps]
    assert slots == sorted(slots, reverse=True)
    assert slots[0] == len(corpus)


def test_translations_never_contain_eos_and_respect_step_limit():
    model, corpus = desk_setup()
    config = BeamConfig(beam_size=2)
    result = decode_corpus(model, corpus, config)

    for sentence, tokens in zip(corpus, result.translations):
        assert EOS_ID not in tokens
        assert len(tokens) <= config.step_limit(len(sentence))


def test_decode_stats_timing_phases_fit_in_total():
    model, corpus = desk_setup()
    timing = decode_corpus(model, corpus, BeamConfig()).stats.timing

    assert set(timing.phases) == {"encoder", "decoder", "output_layer", "beam_search"}
    assert sum(timing.phases.values()) <= timing.total + 1e-9
