import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from foleycascade.errors import TokenizationError
from foleycascade.prompts import (
    COMMA,
    SOUND_CLASSES,
    SPECIAL_TOKENS,
    PromptCorpus,
    Quality,
    attach_quality_prefix,
    default_corpus,
    normalize_text,
)
from foleycascade.text_encoder import TextEncoder, TokenBatch
from foleycascade.unet import seeded

CORPUS = default_corpus()
SMALL_STOP = {"the", "a", "of"}
WORDS = [w for w in CORPUS.vocab if w not in SPECIAL_TOKENS]


def test_normalize_examples():
    assert normalize_text("Footsteps, 03 Running!", SMALL_STOP) == "footsteps running"
    assert normalize_text("", SMALL_STOP) == ""
    assert normalize_text("the dog barks", {"the"}) == "dog barks"


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_normalize_is_idempotent(raw):
    once = normalize_text(raw, CORPUS.stop_words)
    assert normalize_text(once, CORPUS.stop_words) == once


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60), st.sampled_from(list(Quality)))
def test_prefix_never_reintroduces_digits_or_stop_words(raw, quality):
    text = attach_quality_prefix(normalize_text(raw, CORPUS.stop_words), quality)
    body = text.split(", ", 1)[1]
    assert not any(c.isdigit() for c in body)
    assert not set(body.split()) & CORPUS.stop_words


def test_prefix_examples():
    assert attach_quality_prefix("puppy bark", "clean") == "clean recording, puppy bark"
    assert attach_quality_prefix("puppy bark", Quality.NOISY) == "noisy recording, puppy bark"
    assert attach_quality_prefix("", "clean") == "clean recording, "


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=8), st.sampled_from([None, *Quality]))
def test_tokenization_round_trips(words, quality):
    s = " ".join(words)
    if quality is not None:
        s = attach_quality_prefix(s, quality)
    assert CORPUS.detokenize(CORPUS.tokenize(s)) == s


def test_record_tokens_decode_to_quality_token_comma_text():
    rec = CORPUS.record("footstep", "Footsteps on the snow, 2 running", "noisy")
    toks = [CORPUS.vocab[i] for i in rec.tokens]
    assert toks[:2] == ["<noisy>", COMMA]
    assert " ".join(toks[2:]) == rec.normalized_text
    assert CORPUS.detokenize(rec.tokens) == rec.text


def test_corpus_invariants():
    assert set(CORPUS.templates) == set(SOUND_CLASSES)
    assert all(len(t) >= 3 for t in CORPUS.templates.values())
    assert sorted(CORPUS.index.values()) == list(range(CORPUS.vocab_size))
    assert len(CORPUS.stop_words) == 25
    with pytest.raises(ValueError):
        PromptCorpus({"rain": ["a", "b"]}, frozenset())


def test_footstep_templates_include_snow():
    assert any("footsteps on snow" in t for t in CORPUS.templates["footstep"])


def test_sample_prompt_deterministic_and_errors():
    a = CORPUS.sample_prompt("rain", np.random.default_rng(4))
    b = CORPUS.sample_prompt("rain", np.random.default_rng(4))
    assert a == b
    with pytest.raises(KeyError):
        CORPUS.sample_prompt("thunder", np.random.default_rng(0))


def test_sample_prompt_uniformity():
    corpus = PromptCorpus({"rain": ["rain one", "rain two", "rain three", "rain four"]}, frozenset())
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(1000):
        t = corpus.sample_prompt("rain", rng).raw_text
        counts[t] = counts.get(t, 0) + 1
    sigma = np.sqrt(1000 * 0.25 * 0.75)
    assert len(counts) == 4
    assert all(abs(c - 250) < 3 * sigma for c in counts.values())


def test_oov_token_is_named():
    with pytest.raises(TokenizationError, match="zebra"):
        CORPUS.tokenize("clean recording, zebra")


def _encoder():
    with seeded(0):
        return TextEncoder(CORPUS.vocab_size).eval()


def test_encoder_output_token_count():
    rec = CORPUS.sample_prompt("keyboard", np.random.default_rng(0))
    out = _encoder()(TokenBatch.from_records([rec], CORPUS))
    assert out.text_tokens.shape == (1, len(rec.tokens), 64)
    assert out.pooled.shape == (1, 64)


def test_encoder_distinguishes_prompts():
    recs = [CORPUS.record("dog_bark", "dog barking", "clean"), CORPUS.record("rain", "heavy rain", "clean")]
    pooled = _encoder()(TokenBatch.from_records(recs, CORPUS)).pooled
    assert torch.cosine_similarity(pooled[0], pooled[1], dim=0) < 1 - 1e-6


def test_encoder_prefix_swap_is_controlled_difference():
    clean = CORPUS.record("dog_bark", "puppy bark", "clean")
    noisy = CORPUS.record("dog_bark", "puppy bark", "noisy")
    diff = [i for i, (a, b) in enumerate(zip(clean.tokens, noisy.tokens)) if a != b]
    assert diff == [0]
    out = _encoder()(TokenBatch.from_records([clean, noisy], CORPUS))
    assert not torch.allclose(out.pooled[0], out.pooled[1])


def test_encoder_rejects_out_of_range_ids():
    batch = TokenBatch.from_lists([[CORPUS.vocab_size + 3]])
    with pytest.raises(TokenizationError):
        _encoder()(batch)
