"""Shared test utilities: random fixtures, reference oracles, gradient checks."""

import numpy as np

from acp import build_cooc
from acp.model import named_tensors


def random_occurrence_sets(rng, max_actions=20, max_sets=30):
    """Random per-image action sets, allowing empty sets and unused actions."""
    n = int(rng.integers(2, max_actions + 1))
    n_sets = int(rng.integers(1, max_sets + 1))
    sets = []
    for _ in range(n_sets):
        size = int(rng.integers(0, n + 1))
        members = rng.choice(n, size=size, replace=False)
        sets.append(set(int(a) for a in members))
    return sets, n


def random_cooc(rng, max_actions=20, max_sets=30):
    sets, n = random_occurrence_sets(rng, max_actions, max_sets)
    return build_cooc(sets, n), sets, n


def nes_reference(pair):
    """Literal transcription of the greedy suppression loop, dict based."""
    scores = {}
    for i in range(pair.n):
        if pair.row_valid[i]:
            scores[i] = sum(1 for j in range(pair.n) if pair.c[i, j] == 0.0)
    selected = []
    while scores:
        best = max(scores.values())
        m = min(i for i, v in scores.items() if v == best)
        selected.append(m)
        for k in list(scores):
            if pair.c[m, k] > 0.0:
                del scores[k]
    return tuple(selected)


def ap_reference(scores, labels):
    """Prefix-enumeration average precision, independent of the library."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranked = [labels[i] for i in order]
    total = 0.0
    n_pos = 0
    for k in range(1, len(ranked) + 1):
        prefix = ranked[:k]
        if prefix[-1]:
            n_pos += 1
            total += sum(1 for v in prefix if v) / k
    return total / n_pos


# ---------------------------------------------------------------------------
# Independent straight-line forward pass in extended precision.
#
# The finite-difference oracles below difference loss values; in double
# precision the cancellation noise (|loss| * eps / step) can reach the
# comparison tolerance on near-zero gradients.  Evaluating the oracle's
# loss in 80-bit longdouble removes that noise while the implementation
# under test stays in double.  This is also a from-scratch re-evaluation
# of every architecture, independent of the library's forward code.

LD = np.longdouble


def _ld(arr):
    return np.asarray(arr, dtype=LD)


def _ld_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _ld_softmax(z):
    ez = np.exp(z - z.max(axis=-1, keepdims=True))
    return ez / ez.sum(axis=-1, keepdims=True)


def _ld_mlp(mlp, u):
    z1 = u @ _ld(mlp.w1).T + _ld(mlp.b1)
    a1 = np.maximum(z1, LD(0.0))
    return a1 @ _ld(mlp.w2).T + _ld(mlp.b2)


def ld_forward(params, x, groups):
    """Longdouble re-evaluation; returns (action probs, anchor probs or None)."""
    x = np.atleast_2d(_ld(x))
    u = x @ _ld(params.fusion.w).T + _ld(params.fusion.b)
    arch = params.arch_kind
    if arch == "baseline":
        return _ld_sigmoid(u), None
    if arch == "modified":
        return _ld_sigmoid(_ld_mlp(params.flat_head, u)), None
    s = _ld_softmax(_ld_mlp(params.anchor_head, u))
    if arch == "multitask":
        return _ld_sigmoid(_ld_mlp(params.flat_head, u)), s
    if arch == "twostream":
        a = np.zeros((x.shape[0], params.dims.n_actions), dtype=LD)
        flat = _ld_sigmoid(_ld_mlp(params.flat_head, u))
        for t, act in enumerate(groups.anchors):
            a[:, act] = s[:, t]
        for j in groups.regular:
            a[:, j] = flat[:, j]
        return a, s
    assert arch == "hierarchical"
    a = np.zeros((x.shape[0], params.dims.n_actions), dtype=LD)
    for t, act in enumerate(groups.anchors):
        a[:, act] = s[:, t]
    pos = groups.regular_pos
    for t, gid in enumerate(groups.anchor_ids):
        cond = _ld_sigmoid(_ld_mlp(params.group_heads[gid], u))
        for j in groups.membership[gid]:
            a[:, j] += s[:, t] * cond[:, pos[j]]
    return a, s


def ld_bce(pred, target, eps=1e-7):
    p = np.clip(_ld(pred), LD(eps), LD(1.0) - LD(eps))
    t = _ld(target)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


# ---------------------------------------------------------------------------
# Parameter vector utilities for finite differences


def flatten_params(params):
    return np.concatenate([arr.ravel() for _, arr in named_tensors(params)])


def set_params(params, vec):
    i = 0
    for _, arr in named_tensors(params):
        arr[...] = vec[i : i + arr.size].reshape(arr.shape)
        i += arr.size


def flatten_grads(params, grads):
    return np.concatenate([grads[name].ravel() for name, _ in named_tensors(params)])


def fd_gradient(loss_fn, params, step=1e-5):
    """Central finite differences of loss_fn() over every parameter."""
    base = flatten_params(params).copy()
    grad = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] += step
        set_params(params, bumped)
        up = loss_fn()
        bumped[i] = base[i] - step
        set_params(params, bumped)
        down = loss_fn()
        grad[i] = (up - down) / (2.0 * step)
    set_params(params, base)
    return grad


def max_rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
