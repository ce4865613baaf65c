"""Probabilistic languages: PCFGs, the two parametric families, corpora and test sets.

All probabilities are exact :class:`fractions.Fraction` values. Description
lengths are reported in bits.
"""
from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

EOS = "</s>"
START = "<s>"

MAX_RESAMPLES = 10**6
DEFAULT_TEST_CAP = 10**7


class GrammarError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class TestSetTooLarge(RuntimeError):
    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs: tuple[str, ...]
    prob: Fraction

    def __str__(self) -> str:
        rhs = " ".join(self.rhs) if self.rhs else "ε"
        return f"{self.lhs} -> {rhs} : {self.prob.numerator}/{self.prob.denominator}"


class Pcfg:
    """A probabilistic context-free grammar with exact rule probabilities.

    Nonterminals are the symbols appearing on a left-hand side; every other
    right-hand-side symbol is a terminal. Terminal order follows first
    appearance in the rule list, which fixes the alphabet order used by
    networks. Left recursion (also through nullable prefixes) is rejected
    because prefix-state tracking expands the leftmost symbol eagerly.
    """

    def __init__(self, rules: Iterable[Rule], start: str | None = None):
        self.rules = tuple(rules)
        if not self.rules:
            raise GrammarError("grammar has no rules")
        self.start = start if start is not None else self.rules[0].lhs
        lhs_order: list[str] = []
        for r in self.rules:
            if r.lhs not in lhs_order:
                lhs_order.append(r.lhs)
        self.nonterminals = tuple(lhs_order)
        nts = set(lhs_order)
        terms: list[str] = []
        for r in self.rules:
            for s in r.rhs:
                if s not in nts and s not in terms:
                    terms.append(s)
        self.terminals = tuple(terms)
        self._by_lhs: dict[str, tuple[Rule, ...]] = {
            a: tuple(r for r in self.rules if r.lhs == a) for a in lhs_order
        }
        self._validate()
        self._left_order = self._left_corner_order()

    # -- validation -------------------------------------------------------
    def _validate(self) -> None:
        if self.start not in self._by_lhs:
            raise GrammarError(f"start symbol {self.start!r} has no rules")
        if EOS in self.terminals or START in self.terminals:
            raise GrammarError("reserved symbol used as terminal")
        for a, rules in self._by_lhs.items():
            for r in rules:
                if not (0 < r.prob <= 1):
                    raise GrammarError(f"probability out of range in {r}")
            total = sum((r.prob for r in rules), Fraction(0))
            if total != 1:
                raise GrammarError(f"probabilities for {a} sum to {total}, not 1")
        for a, n in self.min_lengths.items():
            if n == math.inf:
                raise GrammarError(f"nonterminal {a} is not productive")

    @cached_property
    def min_lengths(self) -> dict[str, float]:
        """Shortest terminal yield of every nonterminal."""
        best: dict[str, float] = {a: math.inf for a in self.nonterminals}
        changed = True
        while changed:
            changed = False
            for r in self.rules:
                n = sum(1 if s in self.terminal_set else best[s] for s in r.rhs)
                if n < best[r.lhs]:
                    best[r.lhs] = n
                    changed = True
        return best

    @cached_property
    def terminal_set(self) -> frozenset[str]:
        return frozenset(self.terminals)

    @cached_property
    def nullable(self) -> frozenset[str]:
        return frozenset(a for a, n in self.min_lengths.items() if n == 0)

    def _left_corner_order(self) -> tuple[str, ...]:
        # A depends on B when B can start A's yield at zero offset.
        deps: dict[str, set[str]] = {a: set() for a in self.nonterminals}
        for r in self.rules:
            for s in r.rhs:
                if s in self.terminal_set:
                    break
                deps[r.lhs].add(s)
                if s not in self.nullable:
                    break
        order: list[str] = []
        state: dict[str, int] = {}

        def visit(a: str) -> None:
            if state.get(a) == 2:
                return
            if state.get(a) == 1:
                raise GrammarError(f"left-recursive nonterminal {a!r}")
            state[a] = 1
            for b in sorted(deps[a], key=self.nonterminals.index):
                visit(b)
            state[a] = 2
            order.append(a)

        for a in self.nonterminals:
            visit(a)
        return tuple(order)

    @cached_property
    def cumulative_table(self) -> dict[str, tuple[tuple[Rule, ...], list[float]]]:
        """Per-nonterminal rules with cumulative float probabilities, for sampling."""
        table = {}
        for a in self.nonterminals:
            rules = self.rules_for(a)
            acc, bounds = Fraction(0), []
            for r in rules:
                acc += r.prob
                bounds.append(float(acc))
            table[a] = (rules, bounds)
        return table

    def rules_for(self, lhs: str) -> tuple[Rule, ...]:
        return self._by_lhs[lhs]

    # -- text format ------------------------------------------------------
    @classmethod
    def from_text(cls, text: str) -> "Pcfg":
        """Parse ``LHS -> RHS... : p/q`` lines; ``#`` starts a comment.

        An empty right-hand side (or a lone ``ε``) is the empty production.
        The first rule's left-hand side is the start symbol.
        """
        rules = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                head, prob = line.rsplit(":", 1)
                lhs, rhs = head.split("->", 1)
            except ValueError:
                raise GrammarError(f"line {lineno}: expected 'LHS -> RHS : p/q'") from None
            symbols = tuple(s for s in rhs.split() if s != "ε")
            rules.append(Rule(lhs.strip(), symbols, Fraction(prob.strip())))
        return cls(rules)

    def to_text(self) -> str:
        return "".join(f"{r}\n" for r in self.rules)

    def __repr__(self) -> str:
        return f"Pcfg(start={self.start!r}, rules={len(self.rules)})"


@dataclass(frozen=True)
class ParametricLanguage:
    """``a^n b^n`` or ``a^n b^n c^n`` with ``n ~ Geometric(p)`` on ``n >= 1``."""

    kind: str
    p: Fraction

    def __post_init__(self):
        if self.kind not in ("anbn", "anbncn"):
            raise GrammarError(f"unknown parametric family {self.kind!r}")
        object.__setattr__(self, "p", Fraction(self.p))
        if not (0 < self.p < 1):
            raise GrammarError("geometric parameter must lie in (0, 1)")

    @property
    def terminals(self) -> tuple[str, ...]:
        return ("a", "b") if self.kind == "anbn" else ("a", "b", "c")

    def string_for(self, n: int) -> tuple[str, ...]:
        return tuple(s for s in self.terminals for _ in range(n))

    def prob_of_n(self, n: int) -> Fraction:
        return self.p * (1 - self.p) ** (n - 1)

    def parse_n(self, tokens: Sequence[str]) -> int | None:
        """Return n if ``tokens`` is a member, otherwise None."""
        k = len(self.terminals)
        if not tokens or len(tokens) % k:
            return None
        n = len(tokens) // k
        return n if tuple(tokens) == self.string_for(n) else None


Grammar = Union[Pcfg, ParametricLanguage]


@dataclass(frozen=True)
class LanguageSpec:
    name: str
    grammar: Grammar
    max_sample_len: int | None = None
    eos: str = EOS

    def __post_init__(self):
        if self.eos in self.grammar.terminals:
            raise GrammarError("end-of-sequence symbol collides with a terminal")
        if self.max_sample_len is not None and self.max_sample_len < 1:
            raise GrammarError("max_sample_len must be positive")

    @property
    def alphabet(self) -> tuple[str, ...]:
        return self.grammar.terminals

    @property
    def is_parametric(self) -> bool:
        return isinstance(self.grammar, ParametricLanguage)


# ---------------------------------------------------------------------------
# Corpora


@dataclass(frozen=True)
class CorpusEntry:
    tokens: tuple[str, ...]
    weight: Fraction
    true_prob: Fraction


class Corpus:
    """A weighted multiset of token sequences.

    Training corpora carry weight 1 per sample; exhaustive test corpora carry
    weight equal to each string's true probability.
    """

    def __init__(self, entries: Iterable[CorpusEntry], role: str = "train", language: str = ""):
        if role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {role!r}")
        self.entries = tuple(entries)
        self.role = role
        self.language = language
        for e in self.entries:
            if e.weight < 0:
                raise ValueError("corpus weights must be nonnegative")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[CorpusEntry]:
        return iter(self.entries)

    @property
    def sequences(self) -> list[tuple[str, ...]]:
        return [e.tokens for e in self.entries]

    @property
    def total_weight(self) -> Fraction:
        return sum((e.weight for e in self.entries), Fraction(0))

    def merged(self) -> "Corpus":
        """Merge duplicate sequences, summing their weights (first-seen order)."""
        acc: dict[tuple[str, ...], list] = {}
        for e in self.entries:
            if e.tokens in acc:
                acc[e.tokens][0] += e.weight
            else:
                acc[e.tokens] = [e.weight, e.true_prob]
        return Corpus(
            (CorpusEntry(t, w, p) for t, (w, p) in acc.items()), self.role, self.language
        )

    def max_n(self) -> int:
        """Largest ``n`` among ``a^n ...`` strings (count of leading ``a``)."""
        best = 0
        for e in self.entries:
            k = 0
            while k < len(e.tokens) and e.tokens[k] == "a":
                k += 1
            best = max(best, k)
        return best

    # -- text format --------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# role: {self.role}", f"# language: {self.language}"]
        for e in self.entries:
            lines.append(f"{' '.join(e.tokens)}\t{_frac(e.weight)}\t{_frac(e.true_prob)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Corpus":
        role, language, entries = "train", "", []
        for raw in text.splitlines():
            if raw.startswith("#"):
                key, _, value = raw[1:].partition(":")
                if key.strip() == "role":
                    role = value.strip()
                elif key.strip() == "language":
                    language = value.strip()
                continue
            if not raw.strip():
                continue
            toks, weight, prob = raw.split("\t")
            entries.append(CorpusEntry(tuple(toks.split()), Fraction(weight), Fraction(prob)))
        return cls(entries, role, language)

    def __repr__(self) -> str:
        return f"Corpus(role={self.role!r}, language={self.language!r}, n={len(self)})"


def _frac(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def render(tokens: Sequence[str]) -> str:
    """Human-readable string; single-character alphabets are concatenated."""
    if all(len(t) == 1 for t in tokens):
        return "".join(tokens)
    return " ".join(tokens)


# ---------------------------------------------------------------------------
# Sampling


def sample_string(spec: LanguageSpec, rng: np.random.Generator) -> tuple[str, ...]:
    """Draw one member of the language, rejecting strings over ``max_sample_len``."""
    g = spec.grammar
    for _ in range(MAX_RESAMPLES):
        if isinstance(g, ParametricLanguage):
            n = int(rng.geometric(float(g.p)))
            s = g.string_for(n)
            if spec.max_sample_len is None or len(s) <= spec.max_sample_len:
                return s
            continue
        s = _derive(g, rng, spec.max_sample_len)
        if s is not None:
            return s
    raise SamplingError("sampling stalled")


def _derive(g: Pcfg, rng: np.random.Generator, max_len: int | None) -> tuple[str, ...] | None:
    max_steps = 10 * max_len if max_len else 1_000_000
    cum = g.cumulative_table
    stack = [g.start]
    out: list[str] = []
    steps = 0
    terminals = g.terminal_set
    while stack:
        sym = stack.pop()
        if sym in terminals:
            out.append(sym)
            if max_len is not None and len(out) > max_len:
                return None
            continue
        steps += 1
        if steps > max_steps:
            return None
        rules, bounds = cum[sym]
        u = rng.random()
        k = 0
        while k < len(bounds) - 1 and u >= bounds[k]:
            k += 1
        stack.extend(reversed(rules[k].rhs))
    return tuple(out)


def sample_corpus(spec: LanguageSpec, count: int, seed: int) -> Corpus:
    """Sample ``count`` strings with replacement; duplicates are kept as separate entries."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    strings = [sample_string(spec, rng) for _ in range(count)]
    probs: dict[tuple[str, ...], Fraction] = {}
    entries = []
    for s in strings:
        if s not in probs:
            probs[s] = string_probability(spec, s)
        entries.append(CorpusEntry(s, Fraction(1), probs[s]))
    return Corpus(entries, "train", spec.name)


# ---------------------------------------------------------------------------
# Exact probabilities


def string_probability(spec: LanguageSpec, tokens: Sequence[str]) -> Fraction:
    """Exact probability that the language generates ``tokens`` (0 for non-members)."""
    g = spec.grammar
    tokens = tuple(tokens)
    if isinstance(g, ParametricLanguage):
        n = g.parse_n(tokens)
        return Fraction(0) if n is None else g.prob_of_n(n)
    if any(t not in g.terminal_set for t in tokens):
        return Fraction(0)
    return inside_probability(g, tokens)


def inside_probability(g: Pcfg, s: Sequence[str]) -> Fraction:
    """Total probability of all derivations of ``s`` from the start symbol.

    Sparse inside pass over start positions, right to left. ``table[i][A]``
    maps end positions j to the inside probability of A over ``s[i:j]``.
    Nonterminals sharing a start position are processed in left-corner
    order, which is well defined because left recursion is excluded.
    """
    n = len(s)
    terminals = g.terminal_set
    table: list[dict[str, dict[int, Fraction]]] = [dict() for _ in range(n + 1)]
    for i in range(n, -1, -1):
        row = table[i]
        for a in g._left_order:
            ends: dict[int, Fraction] = defaultdict(Fraction)
            for r in g.rules_for(a):
                frontier: dict[int, Fraction] = {i: Fraction(1)}
                for sym in r.rhs:
                    nxt: dict[int, Fraction] = defaultdict(Fraction)
                    if sym in terminals:
                        for pos, p in frontier.items():
                            if pos < n and s[pos] == sym:
                                nxt[pos + 1] += p
                    else:
                        for pos, p in frontier.items():
                            for end, q in table[pos].get(sym, {}).items():
                                nxt[end] += p * q
                    frontier = nxt
                    if not frontier:
                        break
                for end, p in frontier.items():
                    ends[end] += r.prob * p
            row[a] = dict(ends)
    return table[0].get(g.start, {}).get(n, Fraction(0))


class PrefixState:
    """Exact next-symbol distribution after a prefix.

    For PCFGs the state is a distribution over remaining leftmost sentential
    forms; for the parametric families it is the symbol counts so far.
    """

    def __init__(self, spec: LanguageSpec, _payload=None, _mass: Fraction | None = None):
        self.spec = spec
        g = spec.grammar
        if _payload is None:
            _payload = (0, 0, 0) if isinstance(g, ParametricLanguage) else {(g.start,): Fraction(1)}
        self._payload = _payload
        self.mass = Fraction(1) if _mass is None else _mass

    def next_distribution(self) -> dict[str, Fraction]:
        """Conditional probabilities of the next symbol (``eos`` included); empty if impossible."""
        return {sym: p for sym, (p, _) in self._successors().items()}

    def advance(self, sym: str) -> "PrefixState":
        succ = self._successors()
        if sym not in succ:
            return PrefixState(self.spec, {} if not self.spec.is_parametric else None, Fraction(0))
        p, payload = succ[sym]
        return PrefixState(self.spec, payload, self.mass * p)

    @cached_property
    def _succ(self):
        return self._compute_successors()

    def _successors(self) -> dict[str, tuple[Fraction, object]]:
        return self._succ

    def _compute_successors(self):
        g = self.spec.grammar
        eos = self.spec.eos
        if self.mass == 0 or self._payload is None:
            return {}
        if isinstance(g, ParametricLanguage):
            return _parametric_successors(g, self._payload, eos)
        buckets: dict[str, dict[tuple[str, ...], Fraction]] = defaultdict(lambda: defaultdict(Fraction))
        work = list(self._payload.items())
        terminals = g.terminal_set
        guard = 0
        while work:
            stack, p = work.pop()
            if not stack:
                buckets[eos][()] += p
                continue
            front = stack[0]
            if front in terminals:
                buckets[front][stack[1:]] += p
                continue
            guard += 1
            if guard > 10**6:
                raise GrammarError("leftmost expansion did not terminate")
            rest = stack[1:]
            for r in g.rules_for(front):
                work.append((r.rhs + rest, p * r.prob))
        total = sum((sum(b.values(), Fraction(0)) for b in buckets.values()), Fraction(0))
        out = {}
        for sym, configs in buckets.items():
            mass = sum(configs.values(), Fraction(0))
            out[sym] = (mass / total, {k: v / mass for k, v in configs.items()})
        return out


def _parametric_successors(g: ParametricLanguage, counts, eos):
    na, nb, nc = counts
    q = g.p
    if na == 0:
        return {"a": (Fraction(1), (1, 0, 0))}
    if nb == 0:
        return {"a": (1 - q, (na + 1, 0, 0)), "b": (q, (na, 1, 0))}
    if nb < na:
        return {"b": (Fraction(1), (na, nb + 1, 0))}
    if g.kind == "anbn":
        return {eos: (Fraction(1), None)}
    if nc < na:
        return {"c": (Fraction(1), (na, nb, nc + 1))}
    return {eos: (Fraction(1), None)}


def next_symbol_distribution(spec: LanguageSpec, prefix: Sequence[str]) -> dict[str, Fraction]:
    state = PrefixState(spec)
    for sym in prefix:
        state = state.advance(sym)
    return state.next_distribution()


# ---------------------------------------------------------------------------
# Exhaustive test sets


def enumerate_test_set(
    spec: LanguageSpec,
    limit: int,
    *,
    cap: int = DEFAULT_TEST_CAP,
    include_empty: bool = True,
) -> Corpus:
    """Every member within ``limit``, weighted by its true probability.

    ``limit`` is the largest n for the parametric families and the maximum
    string length for PCFGs.
    """
    g = spec.grammar
    if isinstance(g, ParametricLanguage):
        if limit > cap:
            raise TestSetTooLarge("test set too large")
        entries = [
            CorpusEntry(g.string_for(n), g.prob_of_n(n), g.prob_of_n(n)) for n in range(1, limit + 1)
        ]
        return Corpus(entries, "test", spec.name)
    probs = _enumerate_pcfg(g, limit, cap)
    keys = sorted(probs, key=lambda s: (len(s), [g.terminals.index(t) for t in s]))
    entries = [
        CorpusEntry(s, probs[s], probs[s]) for s in keys if include_empty or s
    ]
    return Corpus(entries, "test", spec.name)


def _enumerate_pcfg(g: Pcfg, max_len: int, cap: int) -> dict[tuple[str, ...], Fraction]:
    terminals = g.terminal_set
    minlen = g.min_lengths

    def bound(emitted: tuple, form: tuple) -> int:
        return len(emitted) + sum(1 if s in terminals else minlen[s] for s in form)

    out: dict[tuple[str, ...], Fraction] = defaultdict(Fraction)
    counter = 0
    heap = [(bound((), (g.start,)), counter, (), (g.start,), Fraction(1))]
    while heap:
        _, _, emitted, form, p = heapq.heappop(heap)
        k = 0
        while k < len(form) and form[k] in terminals:
            k += 1
        emitted, form = emitted + form[:k], form[k:]
        if not form:
            out[emitted] += p
            if len(out) > cap:
                raise TestSetTooLarge("test set too large")
            continue
        head, rest = form[0], form[1:]
        for r in g.rules_for(head):
            new_form = r.rhs + rest
            b = bound(emitted, new_form)
            if b > max_len:
                continue
            counter += 1
            heapq.heappush(heap, (b, counter, emitted, new_form, p * r.prob))
    return dict(out)


def default_test_limit(spec: LanguageSpec, train: Corpus | None = None, pcfg_limit: int | None = None) -> int:
    """n_max(train) + 1000 for the parametric families; the task length bound otherwise."""
    if spec.is_parametric:
        if train is None:
            raise ValueError("parametric test limits depend on the training corpus")
        return train.max_n() + 1000
    if pcfg_limit is None:
        raise ValueError("PCFG test sets need an explicit length limit")
    return pcfg_limit


# ---------------------------------------------------------------------------
# Optimal description length


def log2_fraction(q: Fraction) -> float:
    return math.log2(q.numerator) - math.log2(q.denominator)


def optimal_score(corpus: Corpus) -> float:
    """Σ weight · (−log2 true_prob), in bits."""
    total = 0.0
    for e in corpus.entries:
        if e.true_prob <= 0:
            raise ValueError(f"sequence {render(e.tokens)!r} has zero true probability")
        total += float(e.weight) * -log2_fraction(e.true_prob)
    return total


def entropy_parametric(g: ParametricLanguage) -> float:
    """Per-string entropy of the geometric length distribution, in bits."""
    p = float(g.p)
    return (-p * math.log2(p) - (1 - p) * math.log2(1 - p)) / p


def probability_table(corpus: Corpus) -> Mapping[tuple[str, ...], Fraction]:
    return {e.tokens: e.true_prob for e in corpus.entries}
