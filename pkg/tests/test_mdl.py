import random
from fractions import Fraction

import pytest

from mdlnets.golden import load_golden
from mdlnets.mdl import (
    RegularizerSpec,
    activation_bits,
    decode_ints,
    encode_fraction,
    encode_int,
    encode_network,
    int_codeword,
    l1_term,
    l2_term,
    network_bitstring,
    network_layout,
)
from mdlnets.tasks import get_task

F = Fraction


@pytest.mark.parametrize("n,bits", [(0, 1), (1, 3), (2, 5), (3, 5), (4, 7), (5, 7), (255, 17), (256, 19)])
def test_encode_int_lengths(n, bits):
    assert encode_int(n) == bits == len(int_codeword(n))


def test_codewords():
    assert int_codeword(0) == "0"
    assert int_codeword(5) == "111" + "0" + "101"


def test_encode_int_rejects_negative():
    with pytest.raises(ValueError):
        encode_int(-1)


def test_fraction_code_lengths():
    # sign + "1" + "10" + code(10)
    assert encode_fraction(F(1, 10)) == 1 + 3 + 9 == 13
    assert encode_fraction(F(-1, 10)) == 13
    assert encode_fraction(F(1117, 50000)) == 1 + 23 + 33
    assert encode_fraction(F(1, 10)) < encode_fraction(F(1117, 50000))
    # 2/4 is stored in lowest terms
    assert encode_fraction(F(2, 4)) == encode_fraction(F(1, 2))


def test_decode_concatenation():
    rng = random.Random(0)
    xs = [rng.choice([0, rng.randrange(1, 10**6)]) for _ in range(500)]
    assert decode_ints("".join(int_codeword(x) for x in xs)) == xs


def test_decode_truncated():
    with pytest.raises(ValueError):
        decode_ints(int_codeword(37)[:-1])


def test_activation_bits():
    assert activation_bits(1) == 0
    assert activation_bits(3) == 2
    assert activation_bits(4) == 2
    assert activation_bits(5) == 3


def test_layout_sums_and_matches_bitstring():
    for name in ("anbn", "dyck2", "toy_english"):
        g = load_golden(name)
        pal = get_task(name).activations
        assert encode_network(g, pal) == sum(b for _, b in network_layout(g, pal))
        assert len(network_bitstring(g, pal)) == encode_network(g, pal)


def test_encode_network_hand_computed():
    # anbn golden with a 5-activation palette: checked field by field
    g = load_golden("anbn")
    layout = dict(network_layout(g, get_task("anbn").activations))
    assert layout["units"] == encode_int(g.n_units)
    assert layout["out:b.activation"] == 3
    assert layout["in:a->out:a/forward.weight"] == encode_fraction(F(7, 3))


def test_palette_must_cover_activations():
    with pytest.raises(ValueError):
        encode_network(load_golden("dyck2"), ("linear",))


def test_penalty_terms():
    g = load_golden("dyck1")
    params = g.parameters()
    assert l1_term(g) == pytest.approx(float(sum(abs(p) for p in params)))
    assert l2_term(g, 2.0) == pytest.approx(2.0 * float(sum(p * p for p in params)))


def test_regularizer_spec():
    assert RegularizerSpec.parse("l2", lam=0.5).lam == 0.5
    with pytest.raises(ValueError):
        RegularizerSpec("l1")
    with pytest.raises(ValueError):
        RegularizerSpec("mdl", lam=1.0)
    with pytest.raises(ValueError):
        RegularizerSpec.parse("none_with_h_limit")
    r = RegularizerSpec("none_with_h_limit", h_limit=100)
    assert r.feasible(100) and not r.feasible(101)
    assert r.penalty(load_golden("anbn"), h_bits=5) == 0.0
    assert RegularizerSpec("mdl").penalty(load_golden("anbn"), h_bits=7) == 7.0


def test_adding_structure_increases_h():
    from mdlnets.network import Connection, Unit

    g = load_golden("anbn")
    pal = get_task("anbn").activations
    base = encode_network(g, pal)
    more_unit = g.with_changes(units=list(g.units) + [Unit("h9", "hidden", "summation", "linear", F(0))])
    assert encode_network(more_unit, pal) > base
    more_conn = g.with_changes(connections=list(g.connections) + [Connection("in:a", "out:b", F(1, 2), "forward")])
    assert encode_network(more_conn, pal) > base


def test_objective_is_penalty_plus_fit():
    from mdlnets.evaluation import dh_score
    from mdlnets.grammar import sample_corpus
    from mdlnets.mdl import feasible, objective

    g = load_golden("dyck1")
    pal = get_task("dyck1").activations
    train = sample_corpus(get_task("dyck1").spec, 50, 0)
    h = encode_network(g, pal)
    assert objective(g, train, RegularizerSpec("mdl"), pal) == h + dh_score(g, train)[0]
    lim = RegularizerSpec("none_with_h_limit", h_limit=h - 1)
    assert objective(g, train, lim, pal) == dh_score(g, train)[0]
    assert not feasible(g, lim, pal)
