import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from mdlnets.grammar import (
    EOS,
    Corpus,
    GrammarError,
    LanguageSpec,
    ParametricLanguage,
    Pcfg,
    PrefixState,
    SamplingError,
    TestSetTooLarge,
    enumerate_test_set,
    entropy_parametric,
    inside_probability,
    next_symbol_distribution,
    optimal_score,
    sample_corpus,
    sample_string,
    string_probability,
)
from mdlnets.tasks import get_task

F = Fraction


def dyck1_spec(max_len=None):
    g = Pcfg.from_text("S -> [ S ] S : 1/3\nS -> ε : 2/3\n")
    return LanguageSpec("dyck1", g, max_len)


def test_pcfg_text_round_trip():
    g = get_task("toy_english").spec.grammar
    assert Pcfg.from_text(g.to_text()).to_text() == g.to_text()


def test_pcfg_rejects_bad_probabilities():
    with pytest.raises(GrammarError):
        Pcfg.from_text("S -> a : 1/2\nS -> b : 1/3\n")


def test_pcfg_rejects_unproductive_nonterminal():
    with pytest.raises(GrammarError):
        Pcfg.from_text("S -> a : 1/2\nS -> T : 1/2\nT -> T a : 1\n")


def test_eos_may_not_be_a_terminal():
    with pytest.raises(GrammarError):
        Pcfg.from_text(f"S -> {EOS} : 1\n")


def test_parametric_language_basics():
    g = ParametricLanguage("anbncn", F(3, 10))
    assert g.string_for(3) == tuple("aaabbbccc")
    assert g.prob_of_n(1) == F(3, 10)
    assert g.prob_of_n(2) == F(3, 10) * F(7, 10)
    assert g.parse_n(tuple("aabbcc")) == 2
    assert g.parse_n(tuple("aabbc")) is None
    with pytest.raises(ValueError):
        ParametricLanguage("anbn", F(1))


def test_string_probability_parametric():
    spec = get_task("anbn").spec
    assert string_probability(spec, tuple("ab")) == F(3, 10)
    assert string_probability(spec, tuple("aab")) == 0
    assert string_probability(spec, ()) == 0


def test_string_probability_dyck1_hand_values():
    spec = dyck1_spec()
    assert string_probability(spec, ()) == F(2, 3)
    # S -> [S]S with both inner S empty
    assert string_probability(spec, ("[", "]")) == F(1, 3) * F(2, 3) ** 2
    assert string_probability(spec, ("]",)) == 0


def test_inside_agrees_with_enumeration_for_ambiguous_grammar():
    g = Pcfg.from_text("S -> a : 2/3\nS -> a A : 1/3\nA -> a : 1/2\nA -> S : 1/2\n")
    # "a a" arises from S->aA, A->a and S->aA, A->S, S->a
    assert inside_probability(g, ("a", "a")) == F(1, 3) * F(1, 2) + F(1, 3) * F(1, 2) * F(2, 3)


def test_exhaustive_test_set_dyck1_sums_to_probability_of_short_strings():
    spec = get_task("dyck1").spec
    test = enumerate_test_set(spec, 10)
    # every string in the set is balanced and every balanced string of length <= 10 is present
    balanced = 0
    for n in range(0, 11, 2):
        for s in itertools.product("[]", repeat=n):
            depth, ok = 0, True
            for t in s:
                depth += 1 if t == "[" else -1
                ok &= depth >= 0
            if ok and depth == 0:
                balanced += 1
    assert len(test) == balanced == 65
    for e in test:
        assert e.weight == e.true_prob == string_probability(spec, e.tokens)
    assert test.total_weight < 1


def test_enumeration_cap_raises():
    with pytest.raises(TestSetTooLarge):
        enumerate_test_set(get_task("dyck2").spec, 12, cap=100)


def test_sample_string_respects_length_cap():
    spec = dyck1_spec(max_len=6)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = sample_string(spec, rng)
        assert len(s) <= 6
        assert string_probability(spec, s) > 0


def test_sampling_stalls_on_impossible_cap():
    g = Pcfg.from_text("S -> a a S : 1/2\nS -> a a : 1/2\n")
    spec = LanguageSpec("even", g, max_sample_len=1)
    with pytest.raises(SamplingError, match="sampling stalled"):
        sample_string(spec, np.random.default_rng(0))


def test_sample_corpus_reproducible_and_weighted():
    spec = get_task("anbn").spec
    a = sample_corpus(spec, 500, 100)
    b = sample_corpus(spec, 500, 100)
    assert a.to_text() == b.to_text()
    assert a.total_weight == 500
    assert all(e.true_prob == string_probability(spec, e.tokens) for e in a)


def test_dyck2_training_strings_are_capped():
    corpus = sample_corpus(get_task("dyck2").spec, 500, 100)
    assert max(len(s) for s in corpus.sequences) <= 200


def test_corpus_text_round_trip_and_merge():
    c = sample_corpus(get_task("dyck1").spec, 50, 3)
    back = Corpus.from_text(c.to_text())
    assert back.sequences == c.sequences and back.role == "train"
    merged = c.merged()
    assert merged.total_weight == 50
    assert len(set(merged.sequences)) == len(merged)


def test_next_symbol_distribution_dyck1():
    spec = get_task("dyck1").spec
    assert next_symbol_distribution(spec, ()) == {"[": F(1, 3), EOS: F(2, 3)}
    assert next_symbol_distribution(spec, ("[",)) == {"[": F(1, 3), "]": F(2, 3)}


def test_prefix_state_chain_rule():
    # product of next-symbol probabilities equals the string probability
    spec = get_task("arithmetic").spec
    s = tuple("(1+(1+1))")
    state, p = PrefixState(spec), F(1)
    for t in s:
        p *= state.next_distribution()[t]
        state = state.advance(t)
    p *= state.next_distribution()[EOS]
    assert p == string_probability(spec, s)


def test_optimal_score_closed_form_for_geometric():
    spec = get_task("anbn").spec
    test = enumerate_test_set(spec, 1100)
    h = entropy_parametric(spec.grammar)
    p = 0.3
    assert math.isclose(h, (-p * math.log2(p) - (1 - p) * math.log2(1 - p)) / p)
    assert optimal_score(test) == pytest.approx(h, abs=1e-9)


def test_anbn_test_mass_is_exact():
    spec = get_task("anbn").spec
    for n in (1, 5, 40):
        assert enumerate_test_set(spec, n).total_weight == 1 - F(7, 10) ** n


def test_toy_english_dogs_sleep_weight():
    spec = get_task("toy_english").spec
    test = enumerate_test_set(spec, 6)
    weights = {e.tokens: e.weight for e in test}
    assert weights[("dogs", "sleep")] == F(3, 4) * F(33, 100)


def test_samples_within_limit_appear_in_test_set():
    spec = get_task("dyck2").spec
    test = {e.tokens: e.true_prob for e in enumerate_test_set(spec, 8)}
    corpus = sample_corpus(spec, 1000, 11)
    for e in corpus:
        if len(e.tokens) <= 8:
            assert test[e.tokens] == e.true_prob


def test_optimal_score_grows_toward_entropy_with_limit():
    spec = get_task("dyck1").spec
    scores = [optimal_score(enumerate_test_set(spec, n)) for n in (2, 4, 6, 8, 10)]
    assert all(a < b for a, b in zip(scores, scores[1:]))
