"""Data-fit scoring and deviation-from-optimal reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

from .grammar import Corpus, optimal_score
from .mdl import encode_network, l1_term, l2_term
from .network import Network, corpus_surprisal


def dh_score(net: Network, corpus: Corpus) -> tuple[float, bool]:
    """Weighted teacher-forced surprisal of ``corpus`` in bits, and whether smoothing fired."""
    if len(corpus) == 0:
        raise ValueError("cannot score an empty corpus")
    bits, hits = corpus_surprisal(net, corpus)
    return bits, hits > 0


def delta_pct(score: float, optimal: float) -> float:
    if optimal <= 0:
        raise ValueError("optimal score must be positive")
    return (score - optimal) / optimal * 100.0


@dataclass(frozen=True)
class ScoreReport:
    h_bits: int
    l1: float
    l2: float
    dh_train: float
    dh_test: float
    opt_train: float
    opt_test: float
    delta_train_pct: float
    delta_test_pct: float
    smoothed_train: bool
    smoothed_test: bool

    COLUMNS = (
        "h_bits", "l1", "l2", "dh_train", "dh_test", "opt_train", "opt_test",
        "delta_train_pct", "delta_test_pct", "smoothed_train", "smoothed_test",
    )

    def as_row(self) -> dict[str, str]:
        """Stringified values; floats use ``repr`` so rows round-trip exactly."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = str(int(v)) if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "ScoreReport":
        kw = {}
        for f in fields(cls):
            raw = row[f.name]
            if f.type in ("bool",):
                kw[f.name] = raw in ("1", "True", "true")
            elif f.type in ("int",):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def full_report(net: Network, train: Corpus, test: Corpus, palette=None) -> ScoreReport:
    """|H|, both penalty terms (lambda 1) and train/test fit for one network."""
    dh_tr, sm_tr = dh_score(net, train)
    dh_te, sm_te = dh_score(net, test)
    opt_tr = optimal_score(train)
    opt_te = optimal_score(test)
    return ScoreReport(
        h_bits=encode_network(net, palette),
        l1=l1_term(net, 1.0),
        l2=l2_term(net, 1.0),
        dh_train=dh_tr,
        dh_test=dh_te,
        opt_train=opt_tr,
        opt_test=opt_te,
        delta_train_pct=delta_pct(dh_tr, opt_tr),
        delta_test_pct=delta_pct(dh_te, opt_te),
        smoothed_train=sm_tr,
        smoothed_test=sm_te,
    )


def reports_to_csv(rows: list[dict[str, str]], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
