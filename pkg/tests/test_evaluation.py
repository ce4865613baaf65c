import json
from fractions import Fraction

import pytest

from mdlnets.evaluation import ScoreReport, delta_pct, dh_score, full_report, reports_to_csv
from mdlnets.golden import GOLDEN_NAMES, load_golden
from mdlnets.grammar import Corpus, enumerate_test_set, optimal_score, sample_corpus
from mdlnets.gdtrain import with_parameters
from mdlnets.tasks import get_task


def test_delta_pct():
    assert delta_pct(3.27, 2.94) == pytest.approx(11.224, abs=1e-3)
    assert delta_pct(2.94 + 0.1, 2.94) == pytest.approx(-delta_pct(2.94 - 0.1, 2.94))
    with pytest.raises(ValueError):
        delta_pct(1.0, 0.0)


def test_dh_score_rejects_empty():
    with pytest.raises(ValueError):
        dh_score(load_golden("anbn"), Corpus([]))


@pytest.mark.parametrize("name", GOLDEN_NAMES)
def test_golden_matches_optimum(name):
    task = get_task(name)
    train = sample_corpus(task.spec, 100, 7)
    test = task.test_set(train)
    dh, smoothed = dh_score(load_golden(name), test)
    assert not smoothed
    assert dh == pytest.approx(optimal_score(test), rel=1e-9)


def test_zero_network_is_much_worse():
    g = load_golden("dyck1")
    zero = with_parameters(g, [Fraction(0)] * len(g.parameters()))
    task = get_task("dyck1")
    train = sample_corpus(task.spec, 100, 1)
    rep = full_report(zero, train, task.test_set(train), task.activations)
    assert rep.delta_train_pct > 10 and rep.delta_test_pct > 10
    assert rep.l1 == rep.l2 == 0


def test_gibbs_inequality_on_anbn():
    spec = get_task("anbn").spec
    test = enumerate_test_set(spec, 120)
    g = load_golden("anbn")
    # perturb the a-continuation weight: any other distribution scores worse
    for w in (Fraction(2), Fraction(5, 2), Fraction(1, 3)):
        conns = [c if not (c.src == "in:a" and c.dst == "out:a") else type(c)(c.src, c.dst, w, c.kind) for c in g.connections]
        other = g.with_changes(connections=conns)
        assert dh_score(other, test)[0] >= optimal_score(test) - 1e-9


def test_report_round_trip():
    task = get_task("anbn")
    train = sample_corpus(task.spec, 50, 2)
    rep = full_report(load_golden("anbn"), train, task.test_set(train), task.activations)
    assert ScoreReport.from_row(rep.as_row()) == rep
    assert json.loads(rep.to_json())["h_bits"] == rep.h_bits
    text = reports_to_csv([rep.as_row()], list(ScoreReport.COLUMNS))
    assert text.splitlines()[0].split(",") == list(ScoreReport.COLUMNS)
