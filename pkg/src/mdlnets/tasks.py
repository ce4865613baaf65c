"""The six benchmark tasks: languages, activation palettes and evaluation limits."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources

from .grammar import Corpus, LanguageSpec, ParametricLanguage, Pcfg, default_test_limit, enumerate_test_set

BASE_ACTIVATIONS = ("linear", "relu", "tanh")
GEOMETRIC_P = Fraction(3, 10)
PARAMETRIC_TEST_MARGIN = 1000


@dataclass(frozen=True)
class Task:
    name: str
    spec: LanguageSpec
    activations: tuple[str, ...]
    unit_kinds: tuple[str, ...]
    test_max_len: int | None  # None: n-range derived from the training corpus
    verify_len: int

    @property
    def alphabet(self) -> tuple[str, ...]:
        return self.spec.alphabet

    def test_set(self, train: Corpus | None = None) -> Corpus:
        limit = default_test_limit(self.spec, train, self.test_max_len)
        return enumerate_test_set(self.spec, limit)


def _pcfg(name: str) -> Pcfg:
    text = resources.files("mdlnets").joinpath(f"data/grammars/{name}.pcfg").read_text(encoding="utf-8")
    return Pcfg.from_text(text)


@lru_cache(maxsize=None)
def get_task(name: str) -> Task:
    sum_only = ("summation",)
    with_mult = ("summation", "multiplication")
    if name in ("anbn", "anbncn"):
        spec = LanguageSpec(name, ParametricLanguage(name, GEOMETRIC_P))
        return Task(name, spec, BASE_ACTIVATIONS + ("sigmoid", "unsigned_step"), sum_only, None, 24)
    if name == "dyck1":
        spec = LanguageSpec(name, _pcfg(name), max_sample_len=200)
        return Task(name, spec, BASE_ACTIVATIONS + ("sigmoid",), sum_only, 10, 14)
    if name == "dyck2":
        spec = LanguageSpec(name, _pcfg(name), max_sample_len=200)
        return Task(name, spec, BASE_ACTIVATIONS + ("floor", "mod3", "unsigned_step"), with_mult, 10, 12)
    if name == "arithmetic":
        spec = LanguageSpec(name, _pcfg(name))
        return Task(
            name, spec, BASE_ACTIVATIONS + ("floor", "mod4", "abs", "unsigned_step"), with_mult, 40, 26
        )
    if name == "toy_english":
        spec = LanguageSpec(name, _pcfg(name), max_sample_len=200)
        return Task(name, spec, BASE_ACTIVATIONS + ("unsigned_step",), with_mult, 20, 14)
    raise KeyError(f"unknown task {name!r}; expected one of {', '.join(TASK_NAMES)}")


TASK_NAMES = ("anbn", "anbncn", "dyck1", "dyck2", "arithmetic", "toy_english")
