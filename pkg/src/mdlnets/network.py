"""Free-form recurrent networks: data model, text format and teacher-forced evaluation."""
from __future__ import annotations

import math
import re
import weakref
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import _kernel
from .grammar import EOS, START, Corpus, LanguageSpec, PrefixState, enumerate_test_set, render

ACTIVATIONS = tuple(_kernel.ACT_CODES)
UNIT_KINDS = ("summation", "multiplication")
CONN_KINDS = ("forward", "recurrent")
ROLES = ("input", "hidden", "output")
TRANSFORMS = ("softmax", "normalize")
SMOOTH = _kernel.SMOOTH


class NetworkError(ValueError):
    pass


def activate(tag: str, x: float) -> float:
    """Scalar reference implementation of every activation."""
    if tag == "linear":
        return x
    if tag == "relu":
        return x if x > 0 else 0.0
    if tag == "tanh":
        return math.tanh(x)
    if tag == "sigmoid":
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    if tag == "unsigned_step":
        return 1.0 if x > 0 else 0.0
    if tag == "floor":
        return float(math.floor(x)) if math.isfinite(x) else math.nan
    if tag in ("mod3", "mod4"):
        k = 3.0 if tag == "mod3" else 4.0
        return x - k * math.floor(x / k) if math.isfinite(x) else math.nan
    if tag == "abs":
        return abs(x)
    raise NetworkError(f"unknown activation {tag!r}")


def input_id(symbol: str) -> str:
    return f"in:{symbol}"


def output_id(symbol: str) -> str:
    return f"out:{symbol}"


@dataclass(frozen=True)
class Unit:
    id: str
    role: str = "hidden"
    kind: str = "summation"
    activation: str = "linear"
    bias: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "bias", Fraction(self.bias))
        if self.role not in ROLES:
            raise NetworkError(f"unknown role {self.role!r}")
        if self.kind not in UNIT_KINDS:
            raise NetworkError(f"unknown unit kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if not self.id or any(c.isspace() for c in self.id):
            raise NetworkError(f"invalid unit id {self.id!r}")


@dataclass(frozen=True)
class Connection:
    src: str
    dst: str
    weight: Fraction
    kind: str = "forward"

    def __post_init__(self):
        object.__setattr__(self, "weight", Fraction(self.weight))
        if self.kind not in CONN_KINDS:
            raise NetworkError(f"unknown connection kind {self.kind!r}")


def _natural_key(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


@dataclass(frozen=True)
class Compiled:
    n_units: int
    order: np.ndarray
    kind: np.ndarray
    act: np.ndarray
    bias: np.ndarray
    fw_ptr: np.ndarray
    fw_src: np.ndarray
    fw_w: np.ndarray
    rc_ptr: np.ndarray
    rc_src: np.ndarray
    rc_w: np.ndarray
    in_units: np.ndarray
    out_units: np.ndarray
    transform: int

    def args(self):
        return (
            self.n_units, self.order, self.kind, self.act, self.bias,
            self.fw_ptr, self.fw_src, self.fw_w, self.rc_ptr, self.rc_src, self.rc_w,
            self.in_units, self.out_units, self.transform,
        )


@dataclass(frozen=True, eq=False)
class Network:
    """An immutable free-form RNN.

    The constructor canonicalises unit order (inputs, hidden units in natural
    id order, outputs) and connection order, so two structurally identical
    networks compare equal and serialise identically. Input units are
    ``in:<s>`` followed by ``in:<symbol>`` for each terminal; output units are
    ``out:<symbol>`` for each terminal followed by ``out:</s>``.
    """

    alphabet: tuple[str, ...]
    units: tuple[Unit, ...]
    connections: tuple[Connection, ...]
    output_transform: str = "normalize"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        alphabet = tuple(self.alphabet)
        object.__setattr__(self, "alphabet", alphabet)
        if self.output_transform not in TRANSFORMS:
            raise NetworkError(f"unknown output transform {self.output_transform!r}")
        by_id: dict[str, Unit] = {}
        for u in self.units:
            if u.id in by_id:
                raise NetworkError(f"duplicate unit id {u.id!r}")
            by_id[u.id] = u
        in_ids = [input_id(START)] + [input_id(s) for s in alphabet]
        out_ids = [output_id(s) for s in alphabet] + [output_id(EOS)]
        for uid in in_ids:
            u = by_id.get(uid)
            if u is None or u.role != "input":
                raise NetworkError(f"missing input unit {uid!r}")
            if u.bias != 0 or u.activation != "linear" or u.kind != "summation":
                raise NetworkError(f"input unit {uid!r} must be a plain linear unit with zero bias")
        for uid in out_ids:
            u = by_id.get(uid)
            if u is None or u.role != "output":
                raise NetworkError(f"missing output unit {uid!r}")
        n_in = sum(u.role == "input" for u in self.units)
        n_out = sum(u.role == "output" for u in self.units)
        if n_in != len(in_ids) or n_out != len(out_ids):
            raise NetworkError("unexpected extra input or output units")
        hidden = sorted((u.id for u in self.units if u.role == "hidden"), key=_natural_key)
        for h in hidden:
            if h.startswith(("in:", "out:")):
                raise NetworkError(f"hidden unit id {h!r} uses a reserved prefix")
        order = in_ids + hidden + out_ids
        index = {uid: i for i, uid in enumerate(order)}
        object.__setattr__(self, "units", tuple(by_id[uid] for uid in order))
        object.__setattr__(self, "_index", index)

        seen = set()
        for c in self.connections:
            if c.src not in index or c.dst not in index:
                raise NetworkError(f"connection {c.src}->{c.dst} references an unknown unit")
            if by_id[c.dst].role == "input":
                raise NetworkError(f"input unit {c.dst!r} cannot receive connections")
            key = (c.src, c.dst, c.kind)
            if key in seen:
                raise NetworkError(f"duplicate connection {c.src}->{c.dst} ({c.kind})")
            seen.add(key)
        conns = sorted(
            self.connections, key=lambda c: (index[c.src], index[c.dst], CONN_KINDS.index(c.kind))
        )
        object.__setattr__(self, "connections", tuple(conns))
        self.topological_order()  # raises on cycles

    # -- structure ---------------------------------------------------------
    def index(self, unit_id: str) -> int:
        return self._index[unit_id]

    def unit(self, unit_id: str) -> Unit:
        return self.units[self._index[unit_id]]

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def hidden_ids(self) -> list[str]:
        return [u.id for u in self.units if u.role == "hidden"]

    @property
    def input_symbols(self) -> tuple[str, ...]:
        return (START,) + self.alphabet

    @property
    def output_symbols(self) -> tuple[str, ...]:
        return self.alphabet + (EOS,)

    def has_connection(self, src: str, dst: str, kind: str) -> bool:
        return any(c.src == src and c.dst == dst and c.kind == kind for c in self.connections)

    def topological_order(self) -> list[int]:
        """Indices of non-input units in a forward-edge topological order.

        Ties are broken by canonical index, so the order is deterministic.
        """
        import heapq

        n = len(self.units)
        indeg = [0] * n
        succ: list[list[int]] = [[] for _ in range(n)]
        for c in self.connections:
            if c.kind == "forward":
                s, d = self._index[c.src], self._index[c.dst]
                succ[s].append(d)
                indeg[d] += 1
        heap = [i for i in range(n) if indeg[i] == 0]
        heapq.heapify(heap)
        out = []
        while heap:
            i = heapq.heappop(heap)
            out.append(i)
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(heap, j)
        if len(out) != n:
            raise NetworkError("cycle in forward graph")
        return [i for i in out if self.units[i].role != "input"]

    def creates_cycle(self, src: str, dst: str) -> bool:
        """Would a forward edge src -> dst close a cycle?"""
        if src == dst:
            return True
        succ: dict[str, list[str]] = {}
        for c in self.connections:
            if c.kind == "forward":
                succ.setdefault(c.src, []).append(c.dst)
        stack, seen = [dst], {dst}
        while stack:
            u = stack.pop()
            if u == src:
                return True
            for v in succ.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return False

    def with_changes(self, units=None, connections=None, output_transform=None) -> "Network":
        return Network(
            self.alphabet,
            tuple(self.units if units is None else units),
            tuple(self.connections if connections is None else connections),
            self.output_transform if output_transform is None else output_transform,
        )

    def parameters(self) -> list[Fraction]:
        """Every connection weight and every non-input bias, in canonical order."""
        return [c.weight for c in self.connections] + [
            u.bias for u in self.units if u.role != "input"
        ]

    # -- equality / hashing via canonical text ------------------------------
    def __eq__(self, other) -> bool:
        return isinstance(other, Network) and self.to_text() == other.to_text()

    def __hash__(self) -> int:
        return hash(self.to_text())

    def __repr__(self) -> str:
        return (
            f"Network(units={len(self.units)}, connections={len(self.connections)}, "
            f"transform={self.output_transform!r})"
        )

    # -- text format -------------------------------------------------------
    def to_text(self) -> str:
        cached = self.__dict__.get("_text")
        if cached is not None:
            return cached
        lines = [
            "network v1",
            "alphabet " + " ".join(self.alphabet),
            f"transform {self.output_transform}",
        ]
        for u in self.units:
            lines.append(f"unit {u.id} {u.role} {u.kind} {u.activation} {_signed(u.bias)}")
        for c in self.connections:
            lines.append(f"conn {c.src} {c.dst} {c.kind} {_signed(c.weight)}")
        text = "\n".join(lines) + "\n"
        object.__setattr__(self, "_text", text)
        return text

    @classmethod
    def from_text(cls, text: str) -> "Network":
        alphabet = None
        transform = "normalize"
        units, conns = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            head = parts[0]
            try:
                if head == "network":
                    continue
                if head == "alphabet":
                    alphabet = tuple(parts[1:])
                elif head == "transform":
                    transform = parts[1]
                elif head == "unit":
                    _, uid, role, kind, act, bias = parts
                    units.append(Unit(uid, role, kind, act, Fraction(bias)))
                elif head == "conn":
                    _, src, dst, kind, w = parts
                    conns.append(Connection(src, dst, Fraction(w), kind))
                else:
                    raise NetworkError(f"unknown record {head!r}")
            except ValueError as exc:
                raise NetworkError(f"line {lineno}: {exc}") from None
        if alphabet is None:
            raise NetworkError("missing alphabet line")
        return cls(alphabet, tuple(units), tuple(conns), transform)

    # -- compiled arrays for the kernel ------------------------------------
    def compiled(self) -> Compiled:
        cached = self.__dict__.get("_compiled")
        if cached is not None:
            return cached
        n = len(self.units)
        fw: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        rc: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for c in self.connections:
            s, d = self._index[c.src], self._index[c.dst]
            (fw if c.kind == "forward" else rc)[d].append((s, float(c.weight)))

        def csr(lists):
            ptr = np.zeros(n + 1, dtype=np.int64)
            src, w = [], []
            for i, lst in enumerate(lists):
                lst.sort()
                for s, x in lst:
                    src.append(s)
                    w.append(x)
                ptr[i + 1] = len(src)
            return ptr, np.array(src, dtype=np.int64), np.array(w, dtype=np.float64)

        fw_ptr, fw_src, fw_w = csr(fw)
        rc_ptr, rc_src, rc_w = csr(rc)
        comp = Compiled(
            n_units=n,
            order=np.array(self.topological_order(), dtype=np.int64),
            kind=np.array([UNIT_KINDS.index(u.kind) for u in self.units], dtype=np.int64),
            act=np.array([_kernel.ACT_CODES[u.activation] for u in self.units], dtype=np.int64),
            bias=np.array([float(u.bias) for u in self.units], dtype=np.float64),
            fw_ptr=fw_ptr, fw_src=fw_src, fw_w=fw_w,
            rc_ptr=rc_ptr, rc_src=rc_src, rc_w=rc_w,
            in_units=np.array([self._index[input_id(s)] for s in self.input_symbols], dtype=np.int64),
            out_units=np.array([self._index[output_id(s)] for s in self.output_symbols], dtype=np.int64),
            transform=TRANSFORMS.index(self.output_transform),
        )
        object.__setattr__(self, "_compiled", comp)
        return comp


def _signed(q: Fraction) -> str:
    sign = "-" if q < 0 else "+"
    return f"{sign}{abs(q.numerator)}/{q.denominator}"


def load_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return Network.from_text(fh.read())


def save_network(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(net.to_text())


def make_io_units(alphabet: Sequence[str]) -> list[Unit]:
    """Plain input and output units for an alphabet (outputs linear, zero bias)."""
    units = [Unit(input_id(START), "input")] + [Unit(input_id(s), "input") for s in alphabet]
    units += [Unit(output_id(s), "output") for s in tuple(alphabet) + (EOS,)]
    return units


# ---------------------------------------------------------------------------
# Reference evaluation


def forward_step(net: Network, symbol: str, state: Sequence[float] | None = None):
    """One teacher-forced step in pure Python.

    ``symbol`` is the current input (``<s>`` at the first step). Returns the
    next-symbol distribution (keyed by output symbol) and the new state.
    """
    if symbol not in net.input_symbols:
        raise NetworkError(f"unknown symbol {symbol!r}")
    n = net.n_units
    prev = [0.0] * n if state is None else list(state)
    if len(prev) != n:
        raise NetworkError("state dimension does not match unit count")
    cur = [0.0] * n
    cur[net.index(input_id(symbol))] = 1.0
    fw_in: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    rc_in: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for c in net.connections:
        lst = fw_in if c.kind == "forward" else rc_in
        lst[net.index(c.dst)].append((net.index(c.src), float(c.weight)))
    for i in net.topological_order():
        u = net.units[i]
        if u.kind == "summation":
            s = float(u.bias)
            for j, w in sorted(fw_in[i]):
                s += w * cur[j]
            for j, w in sorted(rc_in[i]):
                s += w * prev[j]
        else:
            s = float(u.bias)
            for j, w in sorted(fw_in[i]):
                s *= w * cur[j]
            for j, w in sorted(rc_in[i]):
                s *= w * prev[j]
        cur[i] = activate(u.activation, s)
    outs = [cur[net.index(output_id(s))] for s in net.output_symbols]
    return dict(zip(net.output_symbols, _transform(outs, net.output_transform))), cur


def _transform(values: list[float], transform: str) -> list[float]:
    m = len(values)
    if all(math.isfinite(v) for v in values):
        if transform == "softmax":
            hi = max(values)
            ex = [math.exp(v - hi) for v in values]
            tot = sum(ex)
            return [e / tot for e in ex]
        clipped = [v if v > 0 else 0.0 for v in values]
        tot = sum(clipped)
        if tot > 0 and math.isfinite(tot):
            return [c / tot for c in clipped]
    return [1.0 / m] * m


def sequence_surprisal(net: Network, tokens: Sequence[str], smooth: bool = True) -> float:
    """Teacher-forced surprisal of ``tokens`` followed by end-of-sequence, in bits."""
    for t in tokens:
        if t not in net.alphabet:
            raise NetworkError(f"unknown symbol {t!r}")
    state = None
    bits = 0.0
    inputs = (START,) + tuple(tokens)
    targets = tuple(tokens) + (EOS,)
    for x, y in zip(inputs, targets):
        dist, state = forward_step(net, x, state)
        q = dist[y]
        if q == 0.0:
            if not smooth:
                return math.inf
            q = SMOOTH
        bits -= math.log2(q)
    return bits


# ---------------------------------------------------------------------------
# Prefix tries and fast evaluation


@dataclass(frozen=True)
class PrefixTrie:
    """All prefixes of a weighted corpus, in DFS preorder.

    ``sym`` is the input id consumed at each node (0 = start marker,
    k+1 = terminal k); ``pass_w`` is the weight of sequences continuing through
    the node and ``end_w`` the weight of sequences ending there.
    """

    alphabet: tuple[str, ...]
    depth: np.ndarray
    sym: np.ndarray
    pass_w: np.ndarray
    end_w: np.ndarray
    parent: np.ndarray

    def __len__(self) -> int:
        return len(self.depth)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if len(self.depth) else 0

    def prefix(self, node: int) -> tuple[str, ...]:
        out = []
        while node > 0:
            out.append(self.alphabet[self.sym[node] - 1])
            node = int(self.parent[node])
        return tuple(reversed(out))

    def find(self, tokens: Sequence[str]) -> int | None:
        """Node index of the prefix ``tokens``, or None if absent."""
        children = {(int(p), int(s)): v for v, (p, s) in enumerate(zip(self.parent, self.sym)) if v}
        sym_id = {s: i + 1 for i, s in enumerate(self.alphabet)}
        node = 0
        for t in tokens:
            node = children.get((node, sym_id.get(t, -1)))
            if node is None:
                return None
        return node

    @classmethod
    def from_sequences(
        cls, alphabet: Sequence[str], items: Iterable[tuple[Sequence[str], float]]
    ) -> "PrefixTrie":
        alphabet = tuple(alphabet)
        sym_id = {s: i + 1 for i, s in enumerate(alphabet)}
        # children keyed by symbol id; node = [children, pass, end]
        root: list = [{}, 0.0, 0.0]
        for tokens, w in items:
            node = root
            node[1] += w
            for t in tokens:
                if t not in sym_id:
                    raise NetworkError(f"unknown symbol {t!r}")
                k = sym_id[t]
                child = node[0].get(k)
                if child is None:
                    child = node[0][k] = [{}, 0.0, 0.0]
                child[1] += w
                node = child
            node[2] += w
        depth, sym, pw, ew, parent = [], [], [], [], []
        stack = [(root, 0, 0, -1)]
        while stack:
            node, d, k, par = stack.pop()
            me = len(depth)
            depth.append(d)
            sym.append(k)
            pw.append(node[1])
            ew.append(node[2])
            parent.append(par)
            for kk in sorted(node[0], reverse=True):
                stack.append((node[0][kk], d + 1, kk, me))
        return cls(
            alphabet,
            np.array(depth, dtype=np.int64),
            np.array(sym, dtype=np.int64),
            np.array(pw, dtype=np.float64),
            np.array(ew, dtype=np.float64),
            np.array(parent, dtype=np.int64),
        )

    @classmethod
    def from_corpus(cls, corpus: Corpus, alphabet: Sequence[str]) -> "PrefixTrie":
        return cls.from_sequences(alphabet, ((e.tokens, float(e.weight)) for e in corpus.entries))


_TRIES: "weakref.WeakKeyDictionary[Corpus, dict]" = weakref.WeakKeyDictionary()


def trie_for(corpus: Corpus, alphabet: Sequence[str]) -> PrefixTrie:
    per = _TRIES.setdefault(corpus, {})
    key = tuple(alphabet)
    if key not in per:
        per[key] = PrefixTrie.from_corpus(corpus, key)
    return per[key]


def score_trie(net: Network, trie: PrefixTrie, keep_dist: bool = False):
    """(bits, smoothing hits, distributions) for a trie; see ``_kernel.run_trie``."""
    if trie.alphabet != net.alphabet:
        raise NetworkError("trie and network alphabets differ")
    c = net.compiled()
    return _kernel.run_trie(
        *c.args(), trie.depth, trie.sym, trie.pass_w, trie.end_w, trie.max_depth, keep_dist
    )


def corpus_surprisal(net: Network, corpus: Corpus) -> tuple[float, int]:
    bits, hits, _ = score_trie(net, trie_for(corpus, net.alphabet))
    return float(bits), int(hits)


# ---------------------------------------------------------------------------
# Verification against the true conditional distribution


@dataclass
class VerificationReport:
    max_deviation: float
    worst_prefix: tuple[str, ...]
    prefixes_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}: max deviation {self.max_deviation:.3g} at prefix "
            f"{render(self.worst_prefix)!r} over {self.prefixes_checked} prefixes"
        )


def verify_distribution(net: Network, spec: LanguageSpec, max_len: int, tol: float = 1e-9) -> VerificationReport:
    """Compare next-symbol distributions on every prefix of every member up to ``max_len``."""
    if tuple(spec.alphabet) != net.alphabet:
        raise NetworkError("network alphabet does not match the language")
    limit = max_len
    if spec.is_parametric:
        limit = max(1, max_len // len(spec.alphabet))
    members = enumerate_test_set(spec, limit)
    trie = PrefixTrie.from_sequences(net.alphabet, ((e.tokens, 1.0) for e in members))
    _, _, dists = score_trie(net, trie, keep_dist=True)
    outputs = net.output_symbols
    states: list[PrefixState] = []
    worst, worst_node = 0.0, 0
    for v, row in enumerate(dists):
        if v == 0:
            state = PrefixState(spec)
        else:
            sym = trie.alphabet[trie.sym[v] - 1]
            state = states[trie.parent[v]].advance(sym)
        states.append(state)
        truth = state.next_distribution()
        for q, sym in zip(row, outputs):
            dev = abs(float(q) - float(truth.get(sym, 0)))
            if dev > worst:
                worst, worst_node = dev, v
    return VerificationReport(worst, trie.prefix(worst_node), len(trie), tol)


def next_distribution(net: Network, prefix: Sequence[str]) -> dict[str, float]:
    """Network's next-symbol distribution after reading ``prefix`` (reference path)."""
    state = None
    dist = None
    for x in (START,) + tuple(prefix):
        dist, state = forward_step(net, x, state)
    return dist
