import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mdlnets.estimators import EvolvedLanguageModel, GradientLanguageModel, as_corpus, check_sequences, infer_alphabet
from mdlnets.golden import load_golden
from mdlnets.grammar import sample_corpus
from mdlnets.network import sequence_surprisal
from mdlnets.tasks import get_task


@pytest.fixture(scope="module")
def data():
    return sample_corpus(get_task("anbn").spec, 60, 4)


def test_check_sequences_forms():
    assert check_sequences(["a b", ("a", "b")]) == [("a", "b"), ("a", "b")]
    with pytest.raises(TypeError):
        check_sequences("a b")
    with pytest.raises(ValueError):
        check_sequences([])
    with pytest.raises(ValueError, match="not in the alphabet"):
        check_sequences(["a c"], ("a", "b"))


def test_as_corpus_weights():
    c = as_corpus(["a b", "a a b b"], sample_weight=[2, 0.5])
    assert float(c.total_weight) == 2.5
    with pytest.raises(ValueError):
        as_corpus(["a b"], sample_weight=[1, 2])
    assert infer_alphabet([("b",), ("a", "b")]) == ("b", "a")


def test_unfitted():
    with pytest.raises(NotFittedError):
        EvolvedLanguageModel().score(["a b"])


def test_params_round_trip():
    m = EvolvedLanguageModel(generations=3, regularizer="l2", lam=0.5)
    p = clone(m).get_params()
    assert p["generations"] == 3 and p["regularizer"] == "l2" and p["lam"] == 0.5
    m.set_params(islands=1)
    assert m.islands == 1


def test_evolved_model_golden_seed(data):
    task = get_task("anbn")
    m = EvolvedLanguageModel(generations=3, population=8, islands=2, init_network=load_golden("anbn"),
                             activations=task.activations).fit(data)
    assert m.classes_ == ["a", "b", "</s>"]
    assert m.h_bits_ <= 247
    proba = m.predict_proba(["", "a", "a a b"])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert m.predict(["a a b"]) == ["b"]
    samples = m.score_samples(["a b", "a a b b"])
    assert samples[0] == pytest.approx(sequence_surprisal(m.network_, ("a", "b")))
    assert m.score(data) < 0


def test_evolved_model_from_scratch_infers_alphabet():
    m = EvolvedLanguageModel(generations=2, population=6, islands=1).fit(["x y", "x x y y"])
    assert m.network_.alphabet == ("x", "y")


def test_gradient_model(data):
    with pytest.raises(ValueError, match="init_network"):
        GradientLanguageModel().fit(data)
    g = load_golden("anbn_diff")
    m = GradientLanguageModel(g, regularizer="l1", epochs=5).fit(data)
    assert len(m.trace_) == 6
    assert m.approx_h_bits_ > 0
    base = GradientLanguageModel(g, epochs=0).fit(data)
    assert base.network_ is g
