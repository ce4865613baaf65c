"""Gradient training of fixed-architecture networks by backpropagation through time.

The forward pass runs over a prefix trie of the corpus, so shared prefixes
are computed once; the backward pass walks the trie in reverse preorder,
which visits every child before its parent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from numba import njit

from .grammar import Corpus
from .mdl import RegularizerSpec, encode_fraction
from . import _kernel
from .network import Network, PrefixTrie, trie_for

DIFFERENTIABLE = ("linear", "relu", "tanh", "sigmoid")
DENOMINATOR_CAP = 10**6
LN2 = math.log(2.0)


class GdError(RuntimeError):
    pass


@dataclass(frozen=True)
class GdConfig:
    learning_rate: float = 1e-4
    epochs: int = 1000
    reg: RegularizerSpec = RegularizerSpec("none")
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.reg.tag not in ("none", "l1", "l2"):
            raise ValueError(f"gradient training supports none/l1/l2, not {self.reg.tag}")
        if self.learning_rate < 0 or self.epochs < 0:
            raise ValueError("learning rate and epochs must be nonnegative")


@dataclass(frozen=True)
class _Plan:
    n_units: int
    order: np.ndarray
    act: np.ndarray
    fw_ptr: np.ndarray
    fw_src: np.ndarray
    fw_par: np.ndarray
    rc_ptr: np.ndarray
    rc_src: np.ndarray
    rc_par: np.ndarray
    bias_par: np.ndarray
    in_units: np.ndarray
    out_units: np.ndarray
    transform: int


def check_differentiable(net: Network) -> None:
    for u in net.units:
        if u.activation not in DIFFERENTIABLE:
            raise GdError(f"non-differentiable activation {u.activation!r} on unit {u.id}")
        if u.kind != "summation":
            raise GdError(f"multiplication unit {u.id} is not supported by gradient training")


def parameter_vector(net: Network) -> np.ndarray:
    """Connection weights (canonical order) followed by non-input biases."""
    return np.array([float(q) for q in net.parameters()], dtype=np.float64)


def _plan(net: Network) -> _Plan:
    check_differentiable(net)
    n = net.n_units
    fw: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    rc: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for p, c in enumerate(net.connections):
        (fw if c.kind == "forward" else rc)[net.index(c.dst)].append((net.index(c.src), p))
    bias_par = np.full(n, -1, dtype=np.int64)
    p = len(net.connections)
    for i, u in enumerate(net.units):
        if u.role != "input":
            bias_par[i] = p
            p += 1

    def csr(lists):
        ptr = np.zeros(n + 1, dtype=np.int64)
        src, par = [], []
        for i, lst in enumerate(lists):
            for s, q in sorted(lst):
                src.append(s)
                par.append(q)
            ptr[i + 1] = len(src)
        return ptr, np.array(src, dtype=np.int64), np.array(par, dtype=np.int64)

    fw_ptr, fw_src, fw_par = csr(fw)
    rc_ptr, rc_src, rc_par = csr(rc)
    comp = net.compiled()
    return _Plan(
        n, comp.order, comp.act, fw_ptr, fw_src, fw_par, rc_ptr, rc_src, rc_par,
        bias_par, comp.in_units, comp.out_units, comp.transform,
    )


def _targets(trie: PrefixTrie, m: int) -> np.ndarray:
    t = np.zeros((len(trie), m))
    for v in range(1, len(trie)):
        t[trie.parent[v], trie.sym[v] - 1] += trie.pass_w[v]
    t[:, m - 1] += trie.end_w
    return t


@njit(cache=True)
def _dact(code, pre, post):
    if code == 0:
        return 1.0
    if code == 1:
        return 1.0 if pre > 0.0 else 0.0
    if code == 2:
        return 1.0 - post * post
    return post * (1.0 - post)


@njit(cache=True)
def _forward_backward(
    n_units, order, act, fw_ptr, fw_src, fw_par, rc_ptr, rc_src, rc_par, bias_par,
    in_units, out_units, transform, theta, t_sym, t_parent, targets, want_grad,
):
    """Weighted cross-entropy in nats over the trie, and its gradient."""
    n_nodes = t_sym.shape[0]
    m = out_units.shape[0]
    pre = np.zeros((n_nodes, n_units))
    post = np.zeros((n_nodes, n_units))
    q = np.zeros((n_nodes, m))
    zero = np.zeros(n_units)
    loss = 0.0
    for v in range(n_nodes):
        p = t_parent[v]
        prev = zero if p < 0 else post[p]
        post[v, in_units[t_sym[v]]] = 1.0
        for k in range(order.shape[0]):
            u = order[k]
            s = theta[bias_par[u]]
            for e in range(fw_ptr[u], fw_ptr[u + 1]):
                s += theta[fw_par[e]] * post[v, fw_src[e]]
            for e in range(rc_ptr[u], rc_ptr[u + 1]):
                s += theta[rc_par[e]] * prev[rc_src[e]]
            pre[v, u] = s
            post[v, u] = _kernel._activate(act[u], s)
        _kernel._output(post[v], out_units, transform, q[v])
        for k in range(m):
            if targets[v, k] > 0.0:
                qq = q[v, k]
                if qq == 0.0:
                    qq = _kernel.SMOOTH
                loss -= targets[v, k] * math.log(qq)
    grad = np.zeros(theta.shape[0])
    if not want_grad:
        return loss, grad
    g = np.zeros((n_nodes, n_units))
    for v in range(n_nodes - 1, -1, -1):
        tot = 0.0
        for k in range(m):
            tot += targets[v, k]
        if tot > 0.0:
            if transform == 0:
                for k in range(m):
                    g[v, out_units[k]] += q[v, k] * tot - targets[v, k]
            else:
                rsum = 0.0
                for k in range(m):
                    z = post[v, out_units[k]]
                    rsum += z if z > 0.0 else 0.0
                if rsum > 0.0:
                    for k in range(m):
                        z = post[v, out_units[k]]
                        if z > 0.0:
                            g[v, out_units[k]] += tot / rsum - targets[v, k] / z
        p = t_parent[v]
        for k in range(order.shape[0] - 1, -1, -1):
            u = order[k]
            gp = g[v, u] * _dact(act[u], pre[v, u], post[v, u])
            if gp == 0.0:
                continue
            grad[bias_par[u]] += gp
            for e in range(fw_ptr[u], fw_ptr[u + 1]):
                grad[fw_par[e]] += gp * post[v, fw_src[e]]
                g[v, fw_src[e]] += gp * theta[fw_par[e]]
            if p >= 0:
                for e in range(rc_ptr[u], rc_ptr[u + 1]):
                    grad[rc_par[e]] += gp * post[p, rc_src[e]]
                    g[p, rc_src[e]] += gp * theta[rc_par[e]]
    return loss, grad


class Objective:
    """Cross-entropy of a corpus as a function of the parameter vector."""

    def __init__(self, net: Network, trie: PrefixTrie):
        self.net = net
        self.plan = _plan(net)
        self.trie = trie
        self.targets = _targets(trie, len(net.output_symbols))
        self.steps = float(self.targets.sum())

    def ce_nats(self, theta: np.ndarray, want_grad: bool = True):
        p = self.plan
        return _forward_backward(
            p.n_units, p.order, p.act, p.fw_ptr, p.fw_src, p.fw_par, p.rc_ptr, p.rc_src,
            p.rc_par, p.bias_par, p.in_units, p.out_units, p.transform,
            np.ascontiguousarray(theta, dtype=np.float64), self.trie.sym, self.trie.parent,
            self.targets, want_grad,
        )

    def ce_bits(self, theta: np.ndarray, want_grad: bool = True):
        loss, grad = self.ce_nats(theta, want_grad)
        return loss / LN2, grad / LN2


def corpus_objective(net: Network, corpus: Corpus) -> Objective:
    return Objective(net, trie_for(corpus, net.alphabet))


def backward(net: Network, tokens: Sequence[str]) -> tuple[float, np.ndarray]:
    """Surprisal (bits) of one sequence and its gradient w.r.t. :func:`parameter_vector`."""
    trie = PrefixTrie.from_sequences(net.alphabet, [(tuple(tokens), 1.0)])
    return Objective(net, trie).ce_bits(parameter_vector(net))


def finite_difference(obj: Objective, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the cross-entropy in bits."""
    out = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += h
        dn = theta.copy()
        dn[i] -= h
        out[i] = (obj.ce_bits(up, False)[0] - obj.ce_bits(dn, False)[0]) / (2 * h)
    return out


@dataclass
class GradientCheck:
    variants: int
    failures: int
    worst_excess: float  # max of |a - f| - max(rtol * max(|a|, |f|), atol); <= 0 passes

    @property
    def passed(self) -> bool:
        return self.failures == 0


def gradient_check(
    net: Network,
    corpus: Corpus,
    perturbations: int = 20,
    scale: float = 0.05,
    seed: int = 0,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    h: float = 1e-5,
) -> GradientCheck:
    """Analytic vs central-difference gradients at ``net`` and at Gaussian perturbations of it."""
    obj = corpus_objective(net, corpus)
    theta = parameter_vector(net)
    rng = np.random.default_rng(seed)
    failures, worst = 0, -math.inf
    for k in range(perturbations + 1):
        x = theta if k == 0 else theta + rng.normal(0.0, scale, theta.size)
        a = obj.ce_bits(x)[1]
        f = finite_difference(obj, x, h)
        excess = float((np.abs(a - f) - np.maximum(rtol * np.maximum(np.abs(a), np.abs(f)), atol)).max())
        worst = max(worst, excess)
        failures += excess > 0
    return GradientCheck(perturbations + 1, failures, worst)


def with_parameters(net: Network, values: Sequence) -> Network:
    """Copy of ``net`` with parameters replaced (same order as :func:`parameter_vector`)."""
    values = list(values)
    nc = len(net.connections)
    conns = [type(c)(c.src, c.dst, Fraction(v), c.kind) for c, v in zip(net.connections, values[:nc])]
    it = iter(values[nc:])
    units = [u if u.role == "input" else type(u)(u.id, u.role, u.kind, u.activation, Fraction(next(it))) for u in net.units]
    return net.with_changes(units=units, connections=conns)


def rationalize(x: float, cap: int = DENOMINATOR_CAP) -> Fraction:
    """Closest fraction with denominator at most ``cap`` (continued-fraction convergents)."""
    return Fraction(x).limit_denominator(cap)


def approx_h_bits(net: Network) -> int:
    """Encoding length of all parameters as signed fractions."""
    return sum(encode_fraction(q) for q in net.parameters())


def reg_value(reg: RegularizerSpec, theta: np.ndarray) -> tuple[float, np.ndarray]:
    if reg.tag == "l1":
        return reg.lam * float(np.abs(theta).sum()), reg.lam * np.sign(theta)
    if reg.tag == "l2":
        return reg.lam * float((theta * theta).sum()), 2.0 * reg.lam * theta
    return 0.0, np.zeros_like(theta)


@dataclass
class TrainResult:
    network: Network
    theta: np.ndarray
    trace: list[tuple[int, float, float, float]]  # epoch, train CE bits, reg term, loss


def train(net: Network, corpus: Corpus, config: GdConfig) -> TrainResult:
    """Full-batch Adam on mean per-step cross-entropy (nats) plus the penalty.

    Trace rows are recorded before each update; the final row (epoch ==
    ``config.epochs``) describes the returned parameters. The returned
    network carries the trained values rationalised with denominators up to
    10^6.
    """
    obj = corpus_objective(net, corpus)
    theta = parameter_vector(net)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = config.beta1, config.beta2
    trace = []
    for epoch in range(config.epochs + 1):
        ce, g = obj.ce_nats(theta, epoch < config.epochs)
        rv, rg = reg_value(config.reg, theta)
        loss = ce / obj.steps + rv
        if not math.isfinite(loss):
            raise GdError(f"divergence at epoch {epoch}")
        trace.append((epoch, ce / LN2, rv, loss))
        if epoch == config.epochs:
            break
        grad = g / obj.steps + rg
        if not np.all(np.isfinite(grad)):
            raise GdError(f"divergence at epoch {epoch}")
        t = epoch + 1
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)
    trained = net if config.epochs == 0 or config.learning_rate == 0 else with_parameters(
        net, [rationalize(x) for x in theta]
    )
    return TrainResult(trained, theta, trace)
