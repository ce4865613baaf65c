"""Estimator-style wrappers around the search and gradient trainers.

``X`` is always a collection of token sequences: a :class:`Corpus`, a list
of token tuples, or a list of whitespace-separated strings.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gdtrain
from .grammar import EOS, Corpus, CorpusEntry
from .mdl import RegularizerSpec, encode_network
from .network import Network, PrefixTrie, corpus_surprisal, next_distribution, score_trie, sequence_surprisal
from .search import GaConfig, evolve_archipelago


def check_sequences(X, alphabet: Sequence[str] | None = None) -> list[tuple[str, ...]]:
    """Normalise ``X`` to a list of token tuples, rejecting unknown symbols."""
    if isinstance(X, Corpus):
        seqs = X.sequences
    elif isinstance(X, (str, bytes)):
        raise TypeError("expected a collection of sequences, got a single string")
    else:
        seqs = [tuple(x.split()) if isinstance(x, str) else tuple(x) for x in X]
    if not seqs:
        raise ValueError("no sequences given")
    if alphabet is not None:
        allowed = set(alphabet)
        for s in seqs:
            bad = [t for t in s if t not in allowed]
            if bad:
                raise ValueError(f"symbol {bad[0]!r} is not in the alphabet {tuple(alphabet)}")
    return seqs


def as_corpus(X, alphabet: Sequence[str] | None = None, sample_weight=None) -> Corpus:
    if isinstance(X, Corpus) and sample_weight is None:
        check_sequences(X, alphabet)
        return X
    seqs = check_sequences(X, alphabet)
    if sample_weight is None:
        weights = [Fraction(1)] * len(seqs)
    else:
        sample_weight = np.asarray(sample_weight, dtype=float)
        if sample_weight.shape != (len(seqs),):
            raise ValueError("sample_weight must have one entry per sequence")
        if np.any(sample_weight < 0):
            raise ValueError("sample weights must be nonnegative")
        weights = [Fraction(float(w)) for w in sample_weight]
    # true probabilities are unknown for user data; 1 is a placeholder
    return Corpus((CorpusEntry(s, w, Fraction(1)) for s, w in zip(seqs, weights)), "train")


def infer_alphabet(seqs: Sequence[Sequence[str]]) -> tuple[str, ...]:
    """Symbols in order of first appearance."""
    seen: dict[str, None] = {}
    for s in seqs:
        for t in s:
            seen.setdefault(t, None)
    if not seen:
        raise ValueError("cannot infer an alphabet from empty sequences")
    return tuple(seen)


class _LanguageModelMixin:
    """Scoring shared by fitted network estimators (expects ``network_``)."""

    def score_samples(self, X) -> np.ndarray:
        """Surprisal of each sequence (including end-of-sequence) in bits."""
        check_is_fitted(self, "network_")
        seqs = check_sequences(X, self.network_.alphabet)
        return np.array([sequence_surprisal(self.network_, s) for s in seqs])

    def score(self, X, y=None) -> float:
        """Mean log2-likelihood per sequence (higher is better)."""
        check_is_fitted(self, "network_")
        corpus = as_corpus(X, self.network_.alphabet)
        bits, _ = corpus_surprisal(self.network_, corpus)
        return -bits / float(corpus.total_weight)

    def predict_proba(self, X) -> np.ndarray:
        """Next-symbol distribution after each prefix in ``X``; columns follow ``classes_``."""
        check_is_fitted(self, "network_")
        prefixes = check_sequences(X, self.network_.alphabet)
        trie = PrefixTrie.from_sequences(self.network_.alphabet, [(p, 1.0) for p in prefixes])
        _, _, dists = score_trie(self.network_, trie, keep_dist=True)
        out = np.empty((len(prefixes), len(self.classes_)))
        for i, p in enumerate(prefixes):
            node = trie.find(p)
            out[i] = dists[node] if node is not None else [next_distribution(self.network_, p)[c] for c in self.classes_]
        return out

    def predict(self, X) -> list[str]:
        """Most probable next symbol after each prefix."""
        proba = self.predict_proba(X)
        return [self.classes_[i] for i in proba.argmax(axis=1)]


class EvolvedLanguageModel(_LanguageModelMixin, BaseEstimator):
    """Genetic architecture search for a next-symbol predictor.

    Parameters mirror :class:`mdlnets.search.GaConfig`; ``init_network`` (for
    example a golden network) seeds every island.
    """

    def __init__(
        self,
        regularizer: str = "mdl",
        lam: float = 1.0,
        h_limit: float | None = None,
        islands: int = 4,
        population: int = 50,
        generations: int = 200,
        migration_interval: int = 50,
        activations: tuple[str, ...] = ("linear", "relu", "tanh"),
        unit_kinds: tuple[str, ...] = ("summation",),
        mode: str = "architecture",
        init_network: Network | None = None,
        alphabet: tuple[str, ...] | None = None,
        random_state: int = 100,
        n_jobs: int = 1,
    ):
        self.regularizer = regularizer
        self.lam = lam
        self.h_limit = h_limit
        self.islands = islands
        self.population = population
        self.generations = generations
        self.migration_interval = migration_interval
        self.activations = activations
        self.unit_kinds = unit_kinds
        self.mode = mode
        self.init_network = init_network
        self.alphabet = alphabet
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _alphabet(self, seqs) -> tuple[str, ...]:
        if self.init_network is not None:
            return self.init_network.alphabet
        if self.alphabet is not None:
            return tuple(self.alphabet)
        return infer_alphabet(seqs)

    def _ga_config(self) -> GaConfig:
        return GaConfig(
            islands=self.islands,
            population=self.population,
            generations=self.generations,
            migration_interval=self.migration_interval,
            activations=tuple(self.activations),
            unit_kinds=tuple(self.unit_kinds),
            mode=self.mode,
            reg=RegularizerSpec.parse(self.regularizer, lam=self.lam, h_limit=self.h_limit),
            seed=self.random_state,
        )

    def fit(self, X, y=None, sample_weight=None):
        seqs = check_sequences(X)
        alphabet = self._alphabet(seqs)
        corpus = as_corpus(X, alphabet, sample_weight)
        seeds = [self.init_network] if self.init_network is not None else []
        result = evolve_archipelago(self._ga_config(), corpus, alphabet, seeds, workers=self.n_jobs)
        self.network_ = result.best
        self.search_result_ = result
        self.h_bits_ = encode_network(result.best, tuple(self.activations))
        self.classes_ = list(self.network_.alphabet) + [EOS]
        return self


class GradientLanguageModel(_LanguageModelMixin, BaseEstimator):
    """Adam training of a fixed differentiable architecture from its current weights."""

    def __init__(
        self,
        init_network: Network | None = None,
        regularizer: str = "none",
        lam: float = 1.0,
        learning_rate: float = 1e-4,
        epochs: int = 1000,
    ):
        self.init_network = init_network
        self.regularizer = regularizer
        self.lam = lam
        self.learning_rate = learning_rate
        self.epochs = epochs

    def fit(self, X, y=None, sample_weight=None):
        if self.init_network is None:
            raise ValueError("init_network is required: gradient training does not search architectures")
        corpus = as_corpus(X, self.init_network.alphabet, sample_weight)
        cfg = gdtrain.GdConfig(self.learning_rate, self.epochs, RegularizerSpec.parse(self.regularizer, lam=self.lam))
        result = gdtrain.train(self.init_network, corpus, cfg)
        self.network_ = result.network
        self.theta_ = result.theta
        self.trace_ = result.trace
        self.approx_h_bits_ = gdtrain.approx_h_bits(result.network)
        self.classes_ = list(self.network_.alphabet) + [EOS]
        return self
