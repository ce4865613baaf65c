"""Compiled inner loop: teacher-forced evaluation of one network over a prefix trie."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

SMOOTH = 1e-10

ACT_CODES = {
    "linear": 0,
    "relu": 1,
    "tanh": 2,
    "sigmoid": 3,
    "unsigned_step": 4,
    "floor": 5,
    "mod3": 6,
    "mod4": 7,
    "abs": 8,
}


@njit(cache=True)
def _activate(code, x):
    if code == 0:
        return x
    if code == 1:
        return x if x > 0.0 else 0.0
    if code == 2:
        return math.tanh(x)
    if code == 3:
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    if code == 4:
        return 1.0 if x > 0.0 else 0.0
    if code == 5:
        return math.floor(x)
    if code == 6:
        return x - 3.0 * math.floor(x / 3.0)
    if code == 7:
        return x - 4.0 * math.floor(x / 4.0)
    return abs(x)


@njit(cache=True)
def _step(
    in_unit, prev, cur, order, kind, act, bias,
    fw_ptr, fw_src, fw_w, rc_ptr, rc_src, rc_w,
):
    for j in range(cur.shape[0]):
        cur[j] = 0.0
    cur[in_unit] = 1.0
    for k in range(order.shape[0]):
        u = order[k]
        if kind[u] == 0:
            s = bias[u]
            for e in range(fw_ptr[u], fw_ptr[u + 1]):
                s += fw_w[e] * cur[fw_src[e]]
            for e in range(rc_ptr[u], rc_ptr[u + 1]):
                s += rc_w[e] * prev[rc_src[e]]
        else:
            s = bias[u]
            for e in range(fw_ptr[u], fw_ptr[u + 1]):
                s *= fw_w[e] * cur[fw_src[e]]
            for e in range(rc_ptr[u], rc_ptr[u + 1]):
                s *= rc_w[e] * prev[rc_src[e]]
        cur[u] = _activate(act[u], s)


@njit(cache=True)
def _output(cur, out_units, transform, dist):
    m = out_units.shape[0]
    bad = False
    for i in range(m):
        if not math.isfinite(cur[out_units[i]]):
            bad = True
    if not bad:
        if transform == 0:
            hi = cur[out_units[0]]
            for i in range(1, m):
                if cur[out_units[i]] > hi:
                    hi = cur[out_units[i]]
            tot = 0.0
            for i in range(m):
                dist[i] = math.exp(cur[out_units[i]] - hi)
                tot += dist[i]
            for i in range(m):
                dist[i] /= tot
            return
        tot = 0.0
        for i in range(m):
            v = cur[out_units[i]]
            dist[i] = v if v > 0.0 else 0.0
            tot += dist[i]
        if tot > 0.0 and math.isfinite(tot):
            for i in range(m):
                dist[i] /= tot
            return
    for i in range(m):
        dist[i] = 1.0 / m


@njit(cache=True)
def run_trie(
    n_units, order, kind, act, bias,
    fw_ptr, fw_src, fw_w, rc_ptr, rc_src, rc_w,
    in_units, out_units, transform,
    t_depth, t_sym, t_pass, t_end, max_depth, keep_dist,
):
    """Score a trie of prefixes in DFS preorder.

    Node v at depth d consumes symbol ``t_sym[v]`` (0 is the start marker),
    reads the state left by its parent and predicts the next symbol. Returns
    (bits, smoothed_hits, per-node distributions or an empty array).
    """
    m = out_units.shape[0]
    eos = m - 1
    states = np.zeros((max_depth + 2, n_units))
    dists = np.zeros((max_depth + 1, m))
    n_nodes = t_depth.shape[0]
    if keep_dist:
        kept = np.zeros((n_nodes, m))
    else:
        kept = np.zeros((0, m))
    total = 0.0
    hits = 0
    for v in range(n_nodes):
        d = t_depth[v]
        _step(in_units[t_sym[v]], states[d], states[d + 1], order, kind, act, bias,
              fw_ptr, fw_src, fw_w, rc_ptr, rc_src, rc_w)
        _output(states[d + 1], out_units, transform, dists[d])
        if keep_dist:
            for i in range(m):
                kept[v, i] = dists[d, i]
        if d > 0 and t_pass[v] > 0.0:
            q = dists[d - 1, t_sym[v] - 1]
            if q == 0.0:
                q = SMOOTH
                hits += 1
            total -= t_pass[v] * math.log2(q)
        if t_end[v] > 0.0:
            q = dists[d, eos]
            if q == 0.0:
                q = SMOOTH
                hits += 1
            total -= t_end[v] * math.log2(q)
    return total, hits, kept
