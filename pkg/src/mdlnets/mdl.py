"""Description lengths of networks and the weight-penalty regularisers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .network import ACTIVATIONS, CONN_KINDS, UNIT_KINDS, Network


def encode_int(n: int) -> int:
    """Length of the prefix-free code ``1^len(b) 0 b`` for n >= 1, and 1 bit for 0."""
    if n < 0:
        raise ValueError("encode_int takes a nonnegative integer")
    if n == 0:
        return 1
    return 2 * n.bit_length() + 1


def int_codeword(n: int) -> str:
    if n < 0:
        raise ValueError("int_codeword takes a nonnegative integer")
    if n == 0:
        return "0"
    b = format(n, "b")
    return "1" * len(b) + "0" + b


def decode_ints(bits: str) -> list[int]:
    """Greedy decoder for a concatenation of :func:`int_codeword` strings."""
    out = []
    i = 0
    while i < len(bits):
        k = 0
        while bits[i + k] == "1":
            k += 1
        if k == 0:
            out.append(0)
            i += 1
            continue
        start = i + k + 1
        if start + k > len(bits):
            raise ValueError("truncated codeword")
        out.append(int(bits[start:start + k], 2))
        i = start + k
    return out


def encode_fraction(q) -> int:
    """Sign bit plus the codes of |numerator| and denominator (lowest terms)."""
    q = Fraction(q)
    return 1 + encode_int(abs(q.numerator)) + encode_int(q.denominator)


def activation_bits(palette_size: int) -> int:
    return math.ceil(math.log2(palette_size)) if palette_size > 1 else 0


def network_layout(net: Network, palette: Sequence[str] | None = None) -> list[tuple[str, int]]:
    """Field-by-field layout of the network code, as (label, bits) pairs.

    Layout: unit count; then per unit in canonical order its kind bit,
    activation code, bias and out-degree, followed by each outgoing
    connection as (from index, to index, kind bit, weight).
    """
    palette = tuple(ACTIVATIONS if palette is None else palette)
    for u in net.units:
        if u.activation not in palette:
            raise ValueError(f"activation {u.activation!r} of {u.id} is outside the palette")
    abits = activation_bits(len(palette))
    out_edges: dict[str, list] = {u.id: [] for u in net.units}
    for c in net.connections:
        out_edges[c.src].append(c)
    fields = [("units", encode_int(net.n_units))]
    for i, u in enumerate(net.units):
        fields.append((f"{u.id}.kind", 1))
        fields.append((f"{u.id}.activation", abits))
        fields.append((f"{u.id}.bias", encode_fraction(u.bias)))
        fields.append((f"{u.id}.out_degree", encode_int(len(out_edges[u.id]))))
        for c in out_edges[u.id]:
            tag = f"{c.src}->{c.dst}/{c.kind}"
            fields.append((f"{tag}.from", encode_int(i)))
            fields.append((f"{tag}.to", encode_int(net.index(c.dst))))
            fields.append((f"{tag}.kind", 1))
            fields.append((f"{tag}.weight", encode_fraction(c.weight)))
    return fields


def encode_network(net: Network, palette: Sequence[str] | None = None) -> int:
    """|H| in bits. ``palette`` sets the activation code width (default: all activations)."""
    return sum(b for _, b in network_layout(net, palette))


def network_bitstring(net: Network, palette: Sequence[str] | None = None) -> str:
    """The actual code, for audits; its length equals :func:`encode_network`."""
    palette = tuple(ACTIVATIONS if palette is None else palette)
    abits = activation_bits(len(palette))

    def frac(q: Fraction) -> str:
        return ("1" if q < 0 else "0") + int_codeword(abs(q.numerator)) + int_codeword(q.denominator)

    out_edges: dict[str, list] = {u.id: [] for u in net.units}
    for c in net.connections:
        out_edges[c.src].append(c)
    parts = [int_codeword(net.n_units)]
    for i, u in enumerate(net.units):
        parts.append(str(UNIT_KINDS.index(u.kind)))
        if abits:
            parts.append(format(palette.index(u.activation), f"0{abits}b"))
        parts.append(frac(u.bias))
        parts.append(int_codeword(len(out_edges[u.id])))
        for c in out_edges[u.id]:
            parts.append(int_codeword(i) + int_codeword(net.index(c.dst)))
            parts.append(str(CONN_KINDS.index(c.kind)))
            parts.append(frac(c.weight))
    return "".join(parts)


def _params(net: Network) -> Iterable[Fraction]:
    return net.parameters()


def l1_term(net: Network, lam: float = 1.0) -> float:
    return lam * float(sum((abs(w) for w in _params(net)), Fraction(0)))


def l2_term(net: Network, lam: float = 1.0) -> float:
    return lam * float(sum((w * w for w in _params(net)), Fraction(0)))


REG_TAGS = ("mdl", "l1", "l2", "none", "none_with_h_limit")


@dataclass(frozen=True)
class RegularizerSpec:
    """Which objective to minimise.

    ``none`` is only meaningful for gradient training; the genetic search
    uses ``none_with_h_limit`` instead.
    """

    tag: str
    lam: float | None = None
    h_limit: float | None = None

    def __post_init__(self):
        if self.tag not in REG_TAGS:
            raise ValueError(f"unknown regularizer {self.tag!r}")
        if (self.lam is not None) != (self.tag in ("l1", "l2")):
            raise ValueError("lambda is required for l1/l2 and only for them")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if (self.h_limit is not None) != (self.tag == "none_with_h_limit"):
            raise ValueError("h_limit is required for none_with_h_limit and only for it")

    @classmethod
    def parse(cls, text: str, lam: float = 1.0, h_limit: float | None = None) -> "RegularizerSpec":
        if text in ("l1", "l2"):
            return cls(text, lam=lam)
        if text == "none_with_h_limit":
            if h_limit is None:
                raise ValueError("none_with_h_limit needs an h_limit")
            return cls(text, h_limit=h_limit)
        return cls(text)

    def penalty(self, net: Network, h_bits: int | None = None, palette=None) -> float:
        if self.tag == "mdl":
            return float(encode_network(net, palette) if h_bits is None else h_bits)
        if self.tag == "l1":
            return l1_term(net, self.lam)
        if self.tag == "l2":
            return l2_term(net, self.lam)
        return 0.0

    def feasible(self, h_bits: int) -> bool:
        return self.tag != "none_with_h_limit" or h_bits <= self.h_limit

    def __str__(self) -> str:
        if self.tag in ("l1", "l2"):
            return f"{self.tag}(lambda={self.lam:g})"
        if self.tag == "none_with_h_limit":
            return f"none(|H|<={self.h_limit:g})"
        return self.tag


def objective(net: Network, train, reg: RegularizerSpec, palette=None) -> float:
    """Penalty plus train |D:H| (the latter smoothed, in bits)."""
    from .evaluation import dh_score

    dh, _ = dh_score(net, train)
    return reg.penalty(net, palette=palette) + dh


def feasible(net: Network, reg: RegularizerSpec, palette=None) -> bool:
    return reg.feasible(encode_network(net, palette))
