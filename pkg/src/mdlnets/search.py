"""Island-model steady-state genetic search over networks."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grammar import Corpus
from .mdl import RegularizerSpec, encode_network
from .network import ACTIVATIONS, CONN_KINDS, UNIT_KINDS, Connection, Network, Unit, input_id, make_io_units, output_id, trie_for, score_trie

MUTATIONS = (
    "add_unit",
    "remove_unit",
    "add_connection",
    "remove_connection",
    "perturb_weight",
    "perturb_bias",
    "change_activation",
)
WEIGHT_MUTATIONS = ("perturb_weight", "perturb_bias")
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class GaConfig:
    islands: int = 4
    population: int = 50
    generations: int = 2000
    tournament_size: int = 2
    elite_ratio: float = 0.001
    mutation_prob: float = 1.0
    crossover_prob: float = 0.0
    migration_ratio: float = 0.01
    migration_interval: int = 500
    max_units: int = 1024
    activations: tuple[str, ...] = ("linear", "relu", "tanh")
    unit_kinds: tuple[str, ...] = ("summation",)
    mode: str = "architecture"
    reg: RegularizerSpec = field(default_factory=lambda: RegularizerSpec("mdl"))
    seed: int = 100
    golden_copies: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.islands < 1:
            raise ValueError("islands must be at least 1")
        if self.tournament_size < 2 or self.population < self.tournament_size:
            raise ValueError("need population >= tournament_size >= 2")
        for name in ("elite_ratio", "mutation_prob", "crossover_prob", "migration_ratio"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.crossover_prob != 0:
            raise ValueError("crossover is not supported")
        if self.mode not in ("architecture", "weights_only"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.reg.tag == "none":
            raise ValueError("unregularised search needs an |H| limit (none_with_h_limit)")
        if self.generations < 0 or self.migration_interval < 1:
            raise ValueError("generations must be >= 0 and migration_interval >= 1")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for k in self.unit_kinds:
            if k not in UNIT_KINDS:
                raise ValueError(f"unknown unit kind {k!r}")

    @property
    def n_elites(self) -> int:
        return math.ceil(self.elite_ratio * self.population)

    @property
    def n_migrants(self) -> int:
        return math.ceil(self.migration_ratio * self.population)

    @property
    def allowed_mutations(self) -> tuple[str, ...]:
        return WEIGHT_MUTATIONS if self.mode == "weights_only" else MUTATIONS


# ---------------------------------------------------------------------------
# Random rationals and mutation operators


def fresh_rational(rng: np.random.Generator) -> Fraction:
    num = int(rng.integers(1, 11))
    den = int(rng.integers(1, 11))
    sign = -1 if rng.random() < 0.5 else 1
    return Fraction(sign * num, den)


def perturb_rational(q: Fraction, rng: np.random.Generator) -> Fraction:
    """Shift the numerator or denominator by 1-3, or draw a fresh value."""
    for _ in range(MAX_ATTEMPTS):
        choice = int(rng.integers(0, 3))
        if choice == 2:
            return fresh_rational(rng)
        k = int(rng.integers(1, 4)) * (1 if rng.random() < 0.5 else -1)
        if choice == 0:
            return Fraction(q.numerator + k, q.denominator)
        den = q.denominator + k
        if den > 0:
            return Fraction(q.numerator, den)
    return q


def _new_hidden_id(net: Network) -> str:
    used = set(net.hidden_ids)
    k = 0
    while f"h{k}" in used:
        k += 1
    return f"h{k}"


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(0, len(items)))]


def _apply(tag: str, net: Network, config: GaConfig, rng: np.random.Generator) -> Network | None:
    units = list(net.units)
    conns = list(net.connections)
    non_input = [u for u in units if u.role != "input"]

    if tag == "perturb_weight":
        if not conns:
            return None
        i = int(rng.integers(0, len(conns)))
        c = conns[i]
        w = perturb_rational(c.weight, rng)
        if w == c.weight:
            return None
        conns[i] = replace(c, weight=w)
        return net.with_changes(connections=conns)

    if tag == "perturb_bias":
        u = _pick(rng, non_input)
        b = perturb_rational(u.bias, rng)
        if b == u.bias:
            return None
        units[units.index(u)] = replace(u, bias=b)
        return net.with_changes(units=units)

    if tag == "change_activation":
        u = _pick(rng, non_input)
        choices = [a for a in config.activations if a != u.activation]
        if not choices:
            return None
        units[units.index(u)] = replace(u, activation=_pick(rng, choices))
        return net.with_changes(units=units)

    if tag == "remove_connection":
        if not conns:
            return None
        conns.pop(int(rng.integers(0, len(conns))))
        return net.with_changes(connections=conns)

    if tag == "add_connection":
        src = _pick(rng, units).id
        dst = _pick(rng, non_input).id
        kind = _pick(rng, CONN_KINDS)
        if net.has_connection(src, dst, kind):
            return None
        if kind == "forward" and net.creates_cycle(src, dst):
            return None
        conns.append(Connection(src, dst, fresh_rational(rng), kind))
        return net.with_changes(connections=conns)

    if tag == "remove_unit":
        hidden = net.hidden_ids
        if not hidden:
            return None
        victim = _pick(rng, hidden)
        units = [u for u in units if u.id != victim]
        conns = [c for c in conns if victim not in (c.src, c.dst)]
        return net.with_changes(units=units, connections=conns)

    if tag == "add_unit":
        if net.n_units >= config.max_units:
            return None
        uid = _new_hidden_id(net)
        kind = _pick(rng, config.unit_kinds)
        act = _pick(rng, config.activations)
        # a multiplication unit with bias 1 passes a single input through unchanged
        units.append(Unit(uid, "hidden", kind, act, Fraction(1 if kind == "multiplication" else 0)))
        forward = [i for i, c in enumerate(conns) if c.kind == "forward"]
        if forward:
            i = _pick(rng, forward)
            old = conns.pop(i)
            conns.append(Connection(old.src, uid, Fraction(1), "forward"))
            conns.append(Connection(uid, old.dst, old.weight, "forward"))
        return net.with_changes(units=units, connections=conns)

    raise ValueError(f"unknown mutation {tag!r}")


def mutate(net: Network, config: GaConfig, rng: np.random.Generator) -> Network:
    """One uniformly chosen mutation (with probability ``mutation_prob``), else a copy.

    Mutations that are impossible on this network are retried; after
    ``MAX_ATTEMPTS`` failures the network is returned unchanged.
    """
    if config.mutation_prob < 1 and rng.random() >= config.mutation_prob:
        return net
    allowed = config.allowed_mutations
    tag = _pick(rng, allowed)
    for _ in range(MAX_ATTEMPTS):
        out = _apply(tag, net, config, rng)
        if out is not None:
            return out
    return net


def random_network(alphabet: Sequence[str], config: GaConfig, rng: np.random.Generator, transform="normalize") -> Network:
    """0-3 hidden units; every input feeds a random output with a fresh weight."""
    units = make_io_units(alphabet)
    outputs = [u.id for u in units if u.role == "output"]
    inputs = [u.id for u in units if u.role == "input"]
    conns = [Connection(i, _pick(rng, outputs), fresh_rational(rng)) for i in inputs]
    for k in range(int(rng.integers(0, 4))):
        kind = _pick(rng, config.unit_kinds)
        act = _pick(rng, config.activations)
        uid = f"h{k}"
        units.append(Unit(uid, "hidden", kind, act, Fraction(1 if kind == "multiplication" else 0)))
        conns.append(Connection(_pick(rng, inputs), uid, fresh_rational(rng)))
        conns.append(Connection(uid, _pick(rng, outputs), fresh_rational(rng)))
    return Network(tuple(alphabet), tuple(units), tuple(conns), transform)


def validate_member(net: Network, config: GaConfig, alphabet: Sequence[str]) -> None:
    if net.alphabet != tuple(alphabet):
        raise ValueError("invalid initial population: alphabet mismatch")
    if net.n_units > config.max_units:
        raise ValueError("invalid initial population: too many units")
    for u in net.units:
        if u.activation not in config.activations:
            raise ValueError(f"invalid initial population: activation {u.activation!r} not allowed")
        if u.kind not in config.unit_kinds:
            raise ValueError(f"invalid initial population: unit kind {u.kind!r} not allowed")


# ---------------------------------------------------------------------------
# Scoring


@dataclass(frozen=True)
class Member:
    net: Network
    objective: float
    h_bits: int
    dh_train: float
    uid: int

    @property
    def key(self):
        return (self.objective, self.h_bits, self.uid)


class Scorer:
    """Objective evaluation for one training corpus and regulariser."""

    def __init__(self, train: Corpus, config: GaConfig, alphabet: Sequence[str], on_evaluate=None):
        self.trie = trie_for(train, alphabet)
        self.reg = config.reg
        self.palette = config.activations
        self.on_evaluate = on_evaluate
        self.evaluations = 0

    def __call__(self, net: Network, uid: int) -> Member:
        h = encode_network(net, self.palette)
        dh, _, _ = score_trie(net, self.trie)
        dh = float(dh)
        self.evaluations += 1
        if self.on_evaluate is not None:
            self.on_evaluate(net)
        return Member(net, self.reg.penalty(net, h_bits=h) + dh, h, dh, uid)


def tournament_select(pop: Sequence[Member], rng: np.random.Generator, size: int = 2) -> tuple[int, int]:
    """Indices of the (winner, loser) of a tournament among ``size`` distinct members."""
    picks = rng.choice(len(pop), size=size, replace=False)
    ranked = sorted((int(i) for i in picks), key=lambda i: pop[i].key)
    return ranked[0], ranked[-1]


# ---------------------------------------------------------------------------
# Islands


@dataclass
class IslandState:
    index: int
    members: list[Member]
    rng: np.random.Generator
    next_uid: int
    generation: int = 0
    best: Member | None = None
    trace: list[tuple[int, float, int, float]] = field(default_factory=list)

    def best_member(self) -> Member:
        return min(self.members, key=lambda m: m.key)


def _note_best(state: IslandState, m: Member, reg: RegularizerSpec) -> None:
    if not reg.feasible(m.h_bits):
        return
    if state.best is None or m.key < state.best.key:
        state.best = m


def init_island(
    index: int, initial: Sequence[Network], config: GaConfig, scorer: Scorer, alphabet: Sequence[str]
) -> IslandState:
    rng = np.random.default_rng([config.seed, index])
    nets = list(initial)
    for net in nets:
        validate_member(net, config, alphabet)
    transform = nets[0].output_transform if nets else "normalize"
    while len(nets) < config.population:
        if config.mode == "weights_only":
            if not initial:
                raise ValueError("invalid initial population: weights-only search needs a seed network")
            nets.append(initial[len(nets) % len(initial)])
        else:
            nets.append(random_network(alphabet, config, rng, transform))
    nets = nets[: config.population]
    members = [scorer(net, uid) for uid, net in enumerate(nets)]
    state = IslandState(index, members, rng, len(members))
    for m in members:
        _note_best(state, m, config.reg)
    return state


def run_generations(state: IslandState, config: GaConfig, scorer: Scorer, count: int) -> IslandState:
    """Advance one island by ``count`` generations of steady-state replacement."""
    pop = state.members
    rng = state.rng
    for _ in range(count):
        elites = set(sorted(range(len(pop)), key=lambda i: pop[i].key)[: config.n_elites])
        for _ in range(config.population):
            w, l = tournament_select(pop, rng, config.tournament_size)
            if l in elites:
                continue
            child = scorer(mutate(pop[w].net, config, rng), state.next_uid)
            state.next_uid += 1
            if not config.reg.feasible(child.h_bits):
                continue
            pop[l] = child
            _note_best(state, child, config.reg)
        state.generation += 1
        b = state.best_member()
        state.trace.append((state.generation, b.objective, b.h_bits, b.dh_train))
    return state


def evolve_island(
    initial: Sequence[Network],
    config: GaConfig,
    train: Corpus,
    alphabet: Sequence[str] | None = None,
    on_evaluate: Callable[[Network], None] | None = None,
    index: int = 0,
) -> tuple[Network, list[tuple[int, float, int, float]]]:
    """Run one island; returns the best network ever seen and the per-generation trace."""
    alphabet = tuple(alphabet if alphabet is not None else initial[0].alphabet)
    scorer = Scorer(train, config, alphabet, on_evaluate)
    state = init_island(index, initial, config, scorer, alphabet)
    run_generations(state, config, scorer, config.generations)
    best = state.best if state.best is not None else state.best_member()
    return best.net, state.trace


# ---------------------------------------------------------------------------
# Archipelago


def migrate(states: list[IslandState], config: GaConfig) -> None:
    """Ring migration: each island's best members replace the next island's worst."""
    k = config.n_migrants
    if len(states) < 2 or k == 0:
        return
    emigrants = [sorted(s.members, key=lambda m: m.key)[:k] for s in states]
    for i, s in enumerate(states):
        incoming = emigrants[(i - 1) % len(states)]
        worst = sorted(range(len(s.members)), key=lambda j: s.members[j].key, reverse=True)[:k]
        for j, m in zip(worst, incoming):
            s.members[j] = replace(m, uid=s.next_uid)
            s.next_uid += 1
            _note_best(s, s.members[j], config.reg)


@dataclass
class SearchResult:
    best: Network
    best_member: Member
    islands: list[IslandState]
    evaluations: int

    @property
    def trace(self) -> list[tuple[int, int, float, int, float]]:
        rows = []
        for s in self.islands:
            rows.extend((g, s.index, o, h, d) for g, o, h, d in s.trace)
        return sorted(rows)


_WORKER: dict = {}


def _worker_init(train: Corpus, config: GaConfig, alphabet: tuple[str, ...]) -> None:
    _WORKER["scorer"] = Scorer(train, config, alphabet)
    _WORKER["config"] = config


def _worker_run(state: IslandState, count: int) -> tuple[IslandState, int]:
    scorer = _WORKER["scorer"]
    before = scorer.evaluations
    run_generations(state, _WORKER["config"], scorer, count)
    return state, scorer.evaluations - before


def _segments(start: int, config: GaConfig) -> list[int]:
    """Generation counts at which islands synchronise (migration or checkpoint)."""
    marks = set(range(config.migration_interval, config.generations + 1, config.migration_interval))
    if config.checkpoint_every:
        marks |= set(range(config.checkpoint_every, config.generations + 1, config.checkpoint_every))
    marks.add(config.generations)
    return sorted(m for m in marks if m > start)


def evolve_archipelago(
    config: GaConfig,
    train: Corpus,
    alphabet: Sequence[str],
    seeds: Sequence[Network] = (),
    *,
    workers: int = 1,
    on_evaluate: Callable[[Network], None] | None = None,
    checkpoint_dir: str | os.PathLike | None = None,
    progress_csv: str | os.PathLike | None = None,
    resume: bool = False,
) -> SearchResult:
    """Run all islands with ring migration at fixed generation barriers.

    ``seeds`` are placed in every island (``golden_copies`` copies of the
    first seed in architecture mode; the whole population in weights-only
    mode). Sequential and parallel execution give identical results.
    """
    alphabet = tuple(alphabet)
    if on_evaluate is not None and workers > 1:
        raise ValueError("evaluation hooks require sequential execution")
    scorer = Scorer(train, config, alphabet, on_evaluate)
    if config.mode == "weights_only":
        if not seeds:
            raise ValueError("invalid initial population: weights-only search needs a seed network")
        initial = [seeds[0]] * config.population
    else:
        initial = [seeds[0]] * config.golden_copies if seeds else []
        initial = initial[: config.population]

    states: list[IslandState] | None = None
    if resume:
        if checkpoint_dir is None:
            raise ValueError("resume needs a checkpoint directory")
        states = load_checkpoint(checkpoint_dir, config, train, alphabet)
    if states is None:
        states = [init_island(i, initial, config, scorer, alphabet) for i in range(config.islands)]
    evaluations = scorer.evaluations
    start = states[0].generation

    writer = None
    fh = None
    if progress_csv is not None:
        fh = open(progress_csv, "a" if resume else "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if not resume:
            writer.writerow(["generation", "island", "best_objective", "best_h_bits", "best_dh_train"])

    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(train, config, alphabet)
        )
    try:
        current = start
        for mark in _segments(start, config):
            count = mark - current
            marks_before = [len(s.trace) for s in states]
            if pool is None:
                before = scorer.evaluations
                for s in states:
                    run_generations(s, config, scorer, count)
                evaluations += scorer.evaluations - before
            else:
                results = list(pool.map(_worker_run, states, [count] * len(states)))
                states = [r[0] for r in results]
                evaluations += sum(r[1] for r in results)
            current = mark
            if writer is not None:
                rows = []
                for s, m in zip(states, marks_before):
                    rows.extend((g, s.index, o, h, d) for g, o, h, d in s.trace[m:])
                for g, i, o, h, d in sorted(rows):
                    writer.writerow([g, i, repr(o), h, repr(d)])
                fh.flush()
            if current % config.migration_interval == 0 and current < config.generations:
                migrate(states, config)
            if checkpoint_dir is not None and (
                current == config.generations
                or (config.checkpoint_every and current % config.checkpoint_every == 0)
            ):
                save_checkpoint(checkpoint_dir, states)
    finally:
        if pool is not None:
            pool.shutdown()
        if fh is not None:
            fh.close()

    bests = [s.best if s.best is not None else s.best_member() for s in states]
    best = min(bests, key=lambda m: m.key)
    return SearchResult(best.net, best, states, evaluations)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(directory, states: list[IslandState]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for s in states:
        payload = {
            "index": s.index,
            "generation": s.generation,
            "next_uid": s.next_uid,
            "rng": s.rng.bit_generator.state,
            "members": [{"uid": m.uid, "net": m.net.to_text()} for m in s.members],
            "best": None if s.best is None else {"uid": s.best.uid, "net": s.best.net.to_text()},
            "trace": [[g, repr(o), h, repr(dh)] for g, o, h, dh in s.trace],
        }
        tmp = d / f"island{s.index:04d}.json.tmp"
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        tmp.replace(d / f"island{s.index:04d}.json")


def load_checkpoint(directory, config: GaConfig, train: Corpus, alphabet) -> list[IslandState] | None:
    d = Path(directory)
    files = sorted(d.glob("island*.json"))
    if not files:
        return None
    if len(files) != config.islands:
        raise ValueError(f"checkpoint has {len(files)} islands, config expects {config.islands}")
    scorer = Scorer(train, config, alphabet)
    states = []
    for f in files:
        p = json.loads(f.read_text(encoding="utf-8"))
        rng = np.random.default_rng()
        rng.bit_generator.state = p["rng"]
        members = [scorer(Network.from_text(m["net"]), m["uid"]) for m in p["members"]]
        best = None
        if p["best"] is not None:
            best = scorer(Network.from_text(p["best"]["net"]), p["best"]["uid"])
        trace = [(g, float(o), h, float(dh)) for g, o, h, dh in p["trace"]]
        states.append(IslandState(p["index"], members, rng, p["next_uid"], p["generation"], best, trace))
    return states
