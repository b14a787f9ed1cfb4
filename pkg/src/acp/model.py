"""Action probability predictors.

All architectures share a fusion stage (an affine map of the input
feature) followed by small two-layer heads:

* ``baseline``       sigmoid of the fusion output itself
* ``modified``       sigmoid of a flat head on the fusion output
* ``multitask``      the modified head plus an auxiliary anchor softmax
* ``twostream``      anchor slots from a softmax head, regular slots from
                     an independent sigmoid head
* ``hierarchical``   anchor softmax, per-group conditional sigmoids, and
                     the mixture of the two for regular actions

Forward and backward are pure functions of (params, input); backward
returns exact analytic gradients so training needs no autodiff framework.
Inputs may be a single feature vector or a batch matrix; parameter
gradients sum over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import ActionGroups
from .errors import ContractError

ARCH_KINDS = ("baseline", "modified", "multitask", "twostream", "hierarchical")


@dataclass
class Affine:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


@dataclass
class Mlp:
    """Two-layer perceptron with a rectified hidden layer."""

    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray


@dataclass(frozen=True)
class ModelDims:
    feature_dim: int
    n_actions: int
    fusion_dim: int = 64
    hidden_dim: int = 64


@dataclass
class ModelParams:
    arch_kind: str
    dims: ModelDims
    fusion: Affine
    flat_head: Mlp | None = None
    anchor_head: Mlp | None = None
    group_heads: dict[int, Mlp] = field(default_factory=dict)


@dataclass
class ActionProbs:
    """Per-action probabilities plus the auxiliary head outputs.

    ``anchor`` covers the anchors and the trailing ``other`` slot and sums
    to one; ``group_cond`` holds each group's conditional sigmoid outputs
    over the regular actions, zeroed outside the group's membership.
    """

    a: np.ndarray
    anchor: np.ndarray | None = None
    group_cond: dict[int, np.ndarray] | None = None


@dataclass
class UpstreamGrads:
    """Loss gradients w.r.t. the predictor outputs."""

    d_a: np.ndarray
    d_anchor: np.ndarray | None = None
    d_group_cond: dict[int, np.ndarray] | None = None


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def group_masks(groups: ActionGroups) -> dict[int, np.ndarray]:
    """Per-group 0/1 vector over regular-head columns."""
    pos = groups.regular_pos
    masks: dict[int, np.ndarray] = {}
    for gid in groups.anchor_ids:
        mask = np.zeros(len(groups.regular), dtype=np.float64)
        for j in groups.membership[gid]:
            mask[pos[j]] = 1.0
        masks[gid] = mask
    return masks


def _as_batch(x: np.ndarray, dim: int, module: str = "predictor") -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        single = True
    elif x.ndim == 2:
        single = False
    else:
        raise ContractError(f"input must be 1- or 2-dimensional, got {x.ndim}", module)
    if x.shape[1] != dim:
        raise ContractError(
            f"input dimension {x.shape[1]} does not match expected {dim}", module
        )
    return x, single


def _affine(aff: Affine, x: np.ndarray) -> np.ndarray:
    return x @ aff.w.T + aff.b


def _mlp(mlp: Mlp, u: np.ndarray) -> dict:
    z1 = u @ mlp.w1.T + mlp.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ mlp.w2.T + mlp.b2
    return {"z1": z1, "a1": a1, "z2": z2}


def _mlp_backward(
    mlp: Mlp, u: np.ndarray, cache: dict, dz2: np.ndarray, grads: dict, prefix: str
) -> np.ndarray:
    """Accumulate this head's parameter gradients; return the input gradient."""
    grads[f"{prefix}.w2"] = dz2.T @ cache["a1"]
    grads[f"{prefix}.b2"] = dz2.sum(axis=0)
    da1 = dz2 @ mlp.w2
    dz1 = da1 * (cache["z1"] > 0.0)
    grads[f"{prefix}.w1"] = dz1.T @ u
    grads[f"{prefix}.b1"] = dz1.sum(axis=0)
    return dz1 @ mlp.w1


def _softmax_backward(s: np.ndarray, ds: np.ndarray) -> np.ndarray:
    return s * (ds - (ds * s).sum(axis=-1, keepdims=True))


def _require_arch(params: ModelParams, allowed: tuple[str, ...], op: str) -> None:
    if params.arch_kind not in allowed:
        raise ContractError(
            f"{op} supports arch kinds {allowed}, got {params.arch_kind!r}",
            module="predictor",
        )


# ---------------------------------------------------------------------------
# Forward passes


def _forward_cache(
    params: ModelParams, x: np.ndarray, groups: ActionGroups | None
) -> dict:
    """Run the active architecture, keeping every intermediate for backward."""
    arch = params.arch_kind
    cache: dict = {"x": x}
    u = _affine(params.fusion, x)
    cache["u"] = u

    if arch == "baseline":
        cache["a"] = sigmoid(u)
        return cache

    if arch in ("modified", "multitask", "twostream"):
        if params.flat_head is None:
            raise ContractError("flat head missing", module="predictor")
        flat = _mlp(params.flat_head, u)
        cache["flat"] = flat
        cache["flat_sig"] = sigmoid(flat["z2"])

    if arch in ("multitask", "twostream", "hierarchical"):
        if params.anchor_head is None:
            raise ContractError("anchor head missing", module="predictor")
        if groups is None:
            raise ContractError("action groups required", module="predictor")
        anc = _mlp(params.anchor_head, u)
        cache["anc"] = anc
        cache["s"] = softmax(anc["z2"])

    if arch == "modified":
        cache["a"] = cache["flat_sig"]
    elif arch == "multitask":
        cache["a"] = cache["flat_sig"]
    elif arch == "twostream":
        assert groups is not None
        n = params.dims.n_actions
        a = np.zeros((x.shape[0], n), dtype=np.float64)
        d_cols = np.array(groups.anchors, dtype=np.intp)
        r_cols = np.array(groups.regular, dtype=np.intp)
        if d_cols.size:
            a[:, d_cols] = cache["s"][:, : len(groups.anchors)]
        if r_cols.size:
            a[:, r_cols] = cache["flat_sig"][:, r_cols]
        cache["a"] = a
    elif arch == "hierarchical":
        assert groups is not None
        masks = group_masks(groups)
        gcaches: dict[int, dict] = {}
        gcond: dict[int, np.ndarray] = {}
        for gid in groups.anchor_ids:
            head = params.group_heads.get(gid)
            if head is None:
                raise ContractError(f"group head {gid} missing", module="predictor")
            gc = _mlp(head, u)
            gc["sig"] = sigmoid(gc["z2"])
            gcaches[gid] = gc
            gcond[gid] = gc["sig"] * masks[gid]
        cache["gcaches"] = gcaches
        cache["gcond"] = gcond
        cache["masks"] = masks
        cache["a"] = compose_action_probs(cache["s"], gcond, groups, _premasked=True)
    return cache


def compose_action_probs(
    anchor: np.ndarray,
    group_cond: dict[int, np.ndarray],
    groups: ActionGroups,
    _premasked: bool = False,
) -> np.ndarray:
    """Assemble final action probabilities from anchor and group outputs.

    Anchor actions take their softmax probability directly.  Each regular
    action gets the anchor-weighted mixture of its group conditionals,
    with actions outside a group contributing nothing to that term.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    single = anchor.ndim == 1
    s = anchor[None, :] if single else anchor
    k = groups.n_anchor_slots
    if s.shape[1] != k:
        raise ContractError(
            f"anchor vector has {s.shape[1]} slots, expected {k}", module="predictor"
        )
    sums = s.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ContractError("anchor probabilities must sum to 1", module="predictor")

    b = s.shape[0]
    n = groups.n_actions
    a = np.zeros((b, n), dtype=np.float64)
    for t, act in enumerate(groups.anchors):
        a[:, act] = s[:, t]
    if groups.regular:
        masks = None if _premasked else group_masks(groups)
        r_cols = np.array(groups.regular, dtype=np.intp)
        mix = np.zeros((b, len(r_cols)), dtype=np.float64)
        for t, gid in enumerate(groups.anchor_ids):
            g = np.asarray(group_cond[gid], dtype=np.float64)
            g = g[None, :] if g.ndim == 1 else g
            if masks is not None:
                g = g * masks[gid]
            mix += s[:, t : t + 1] * g
        a[:, r_cols] = mix
    return a[0] if single else a


def _probs_from_cache(params: ModelParams, cache: dict, single: bool) -> ActionProbs:
    def squeeze(arr):
        return arr[0] if single else arr

    anchor = squeeze(cache["s"]) if "s" in cache else None
    gcond = None
    if "gcond" in cache:
        gcond = {gid: squeeze(v) for gid, v in cache["gcond"].items()}
    return ActionProbs(a=squeeze(cache["a"]), anchor=anchor, group_cond=gcond)


def forward_flat(params: ModelParams, x: np.ndarray) -> ActionProbs:
    """Baseline or modified flat prediction: sigmoid per action."""
    _require_arch(params, ("baseline", "modified"), "forward_flat")
    x2d, single = _as_batch(x, params.dims.feature_dim)
    cache = _forward_cache(params, x2d, None)
    return _probs_from_cache(params, cache, single)


def forward_hierarchical(
    params: ModelParams, x: np.ndarray, groups: ActionGroups
) -> ActionProbs:
    """Anchor softmax, conditional group sigmoids, and their mixture."""
    _require_arch(params, ("hierarchical",), "forward_hierarchical")
    x2d, single = _as_batch(x, params.dims.feature_dim)
    cache = _forward_cache(params, x2d, groups)
    return _probs_from_cache(params, cache, single)


def multitask_twostream_forward(
    params: ModelParams, x: np.ndarray, groups: ActionGroups
) -> ActionProbs:
    """The two intermediate architectures between flat and hierarchical."""
    _require_arch(params, ("multitask", "twostream"), "multitask_twostream_forward")
    x2d, single = _as_batch(x, params.dims.feature_dim)
    cache = _forward_cache(params, x2d, groups)
    return _probs_from_cache(params, cache, single)


def forward(
    params: ModelParams, x: np.ndarray, groups: ActionGroups | None = None
) -> ActionProbs:
    """Dispatch to the forward pass for the active architecture."""
    if params.arch_kind in ("baseline", "modified"):
        return forward_flat(params, x)
    if params.arch_kind == "hierarchical":
        if groups is None:
            raise ContractError("action groups required", module="predictor")
        return forward_hierarchical(params, x, groups)
    if params.arch_kind in ("multitask", "twostream"):
        if groups is None:
            raise ContractError("action groups required", module="predictor")
        return multitask_twostream_forward(params, x, groups)
    raise ContractError(f"unknown arch kind {params.arch_kind!r}", module="predictor")


# ---------------------------------------------------------------------------
# Backward pass


def named_tensors(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """All parameter tensors in a fixed, deterministic order."""
    out: list[tuple[str, np.ndarray]] = [
        ("fusion.w", params.fusion.w),
        ("fusion.b", params.fusion.b),
    ]
    def mlp_tensors(prefix: str, mlp: Mlp):
        out.extend(
            [
                (f"{prefix}.w1", mlp.w1),
                (f"{prefix}.b1", mlp.b1),
                (f"{prefix}.w2", mlp.w2),
                (f"{prefix}.b2", mlp.b2),
            ]
        )

    if params.flat_head is not None:
        mlp_tensors("flat", params.flat_head)
    if params.anchor_head is not None:
        mlp_tensors("anchor", params.anchor_head)
    for gid in sorted(params.group_heads):
        mlp_tensors(f"group{gid}", params.group_heads[gid])
    return out


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in named_tensors(params)}


def backward(
    params: ModelParams,
    x: np.ndarray,
    groups: ActionGroups | None,
    upstream: UpstreamGrads,
) -> dict[str, np.ndarray]:
    """Exact parameter gradients for the active architecture.

    ``upstream`` carries the loss gradients w.r.t. the final action
    probabilities and, when present, the auxiliary anchor and group
    outputs.  For the hierarchical mixture both product-rule paths are
    followed: anchor gradients collect the group outputs they weight, and
    each group output collects its anchor weight.
    """
    x2d, single = _as_batch(x, params.dims.feature_dim)
    cache = _forward_cache(params, x2d, groups)
    grads = zero_grads(params)
    arch = params.arch_kind

    def up(arr):
        if arr is None:
            return None
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        return arr

    d_a = up(upstream.d_a)
    if d_a is None:
        d_a = np.zeros_like(cache["a"])
    if d_a.shape != cache["a"].shape:
        raise ContractError(
            f"upstream d_a shape {d_a.shape} does not match outputs "
            f"{cache['a'].shape}",
            module="predictor",
        )
    du = np.zeros_like(cache["u"])

    if arch == "baseline":
        a = cache["a"]
        dz = d_a * a * (1.0 - a)
        grads["fusion.w"] = dz.T @ x2d
        grads["fusion.b"] = dz.sum(axis=0)
        return grads

    if arch in ("modified", "multitask"):
        a = cache["flat_sig"]
        dz2 = d_a * a * (1.0 - a)
        du += _mlp_backward(params.flat_head, cache["u"], cache["flat"], dz2, grads, "flat")

    if arch in ("multitask", "twostream", "hierarchical"):
        s = cache["s"]
        ds = np.zeros_like(s)
        d_anchor = up(upstream.d_anchor)
        if d_anchor is not None:
            ds += d_anchor

    if arch == "twostream":
        assert groups is not None
        n_d = len(groups.anchors)
        if n_d:
            ds[:, :n_d] += d_a[:, np.array(groups.anchors, dtype=np.intp)]
        sig = cache["flat_sig"]
        dz2 = np.zeros_like(sig)
        r_cols = np.array(groups.regular, dtype=np.intp)
        if r_cols.size:
            dz2[:, r_cols] = (
                d_a[:, r_cols] * sig[:, r_cols] * (1.0 - sig[:, r_cols])
            )
        du += _mlp_backward(params.flat_head, cache["u"], cache["flat"], dz2, grads, "flat")

    if arch == "hierarchical":
        assert groups is not None
        for t, act in enumerate(groups.anchors):
            ds[:, t] += d_a[:, act]
        r_cols = np.array(groups.regular, dtype=np.intp)
        d_mix = d_a[:, r_cols] if r_cols.size else None
        for t, gid in enumerate(groups.anchor_ids):
            gc = cache["gcaches"][gid]
            mask = cache["masks"][gid]
            dg = np.zeros_like(gc["sig"])
            if d_mix is not None and d_mix.size:
                ds[:, t] += (d_mix * cache["gcond"][gid]).sum(axis=1)
                dg += d_mix * s[:, t : t + 1]
            if upstream.d_group_cond is not None and gid in upstream.d_group_cond:
                dg += up(upstream.d_group_cond[gid])
            dz2 = dg * mask * gc["sig"] * (1.0 - gc["sig"])
            du += _mlp_backward(
                params.group_heads[gid], cache["u"], gc, dz2, grads, f"group{gid}"
            )

    if arch in ("multitask", "twostream", "hierarchical"):
        dz_anc = _softmax_backward(s, ds)
        du += _mlp_backward(
            params.anchor_head, cache["u"], cache["anc"], dz_anc, grads, "anchor"
        )

    grads["fusion.w"] = du.T @ x2d
    grads["fusion.b"] = du.sum(axis=0)
    return grads
