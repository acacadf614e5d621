import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spintip.spinspace import (DimensionError, PromptSpec, Vocabulary, VocabularyError,
                               dot, dump_vocabulary, load_vocabulary, parse_prompt)

from conftest import CONFIGS, TOY


def doc(tokens, **extra):
    return {"tokens": [{"label": k, "vector": v} for k, v in tokens.items()], **extra}


def test_dot_examples():
    # component-wise by hand: 0.383*0.820 + (-0.321)*0 + 0*0
    assert dot(TOY["A"], TOY["B"]) == pytest.approx(0.31406, abs=1e-15)
    assert dot(TOY["B"], TOY["B"]) == pytest.approx(0.820 ** 2, abs=1e-15)
    assert dot(TOY["D"], [0, 0, 0]) == 0.0


def test_dot_dimension_mismatch():
    with pytest.raises(DimensionError):
        dot([1.0, 2.0], [1.0, 2.0, 3.0])


def test_load_toy_config():
    vocab = load_vocabulary(CONFIGS / "toy.json")
    assert vocab.labels == ("A", "B", "C", "D")
    assert vocab.dimension == 3
    np.testing.assert_array_equal(vocab.spin("D"), TOY["D"])


def test_single_token_rejected():
    with pytest.raises(VocabularyError, match="at least 2"):
        load_vocabulary(doc({"A": [1.0, 0.0]}))


def test_ragged_rejected_with_position():
    with pytest.raises(VocabularyError) as err:
        load_vocabulary(doc({"A": [1.0, 0.0], "B": [1.0, 0.0, 0.0]}))
    assert err.value.label == "B" and err.value.position == 1


def test_duplicate_and_nonfinite_rejected():
    d = {"tokens": [{"label": "A", "vector": [1.0]}, {"label": "A", "vector": [2.0]}]}
    with pytest.raises(VocabularyError, match="duplicate"):
        load_vocabulary(d)
    with pytest.raises(VocabularyError) as err:
        load_vocabulary(json.dumps(doc({"A": [1.0], "B": [float("nan")]})).replace("NaN", "1e999"))
    assert err.value.label == "B"


def test_unknown_field_rejected():
    with pytest.raises(VocabularyError, match="unknown"):
        load_vocabulary(doc({"A": [1.0], "B": [2.0]}, temperature=1))


def test_spins_read_only_and_not_normalized(toy):
    assert np.linalg.norm(toy.spin("C")) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        toy.spins[0, 0] = 1.0


def test_prompt_parsing(toy):
    assert parse_prompt("ACCA", toy).tokens == (0, 2, 2, 0)
    assert parse_prompt("A, C", toy).tokens == (0, 2)
    assert parse_prompt(["D"], toy).tokens == (3,)
    with pytest.raises(KeyError):
        parse_prompt("AZ", toy)
    with pytest.raises(IndexError):
        PromptSpec((7,)).validate(toy)
    with pytest.raises(ValueError):
        PromptSpec(())


def test_dot_symmetric_over_vocab(toy):
    for a in toy.spins:
        for b in toy.spins:
            assert dot(a, b) == dot(b, a)


decimals = st.integers(-999_999, 999_999).map(lambda k: k / 10**6)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6).flatmap(
    lambda d: st.lists(st.lists(decimals, min_size=d, max_size=d), min_size=2, max_size=6)))
def test_round_trip_bit_exact(rows):
    vocab = Vocabulary(tuple(f"t{i}" for i in range(len(rows))), np.array(rows))
    text = dump_vocabulary(vocab)
    again = load_vocabulary(text)
    assert again.labels == vocab.labels
    assert again.spins.tobytes() == vocab.spins.tobytes()
    assert dump_vocabulary(again) == text


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8))
def test_self_dot_nonnegative(v):
    s = dot(v, v)
    assert s >= 0
    assert (s == 0) == (not any(v)) or s < 1e-300
