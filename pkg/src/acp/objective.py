"""Interaction probabilities, cross-entropy, and the distillation objective.

The joint probability for interaction class (a, o) multiplies the human
and object detection confidences into the predicted action probability,
and is zero for classes of a different object.  The training objective is
a weighted sum of three binary cross-entropy terms: against the ground
truth, against the model's own projected prediction (treated as a fixed
teacher target), and against the projected ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .cooc import CoocBank
from .corpus import LabelSpace
from .errors import ContractError
from .projection import ProjectionWeights, project_weighted

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights of the ground-truth and the two teacher loss terms."""

    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.5

    def validate(self) -> None:
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if any(l < 0 for l in lams):
            raise ContractError(f"loss weights must be nonnegative, got {lams}",
                                module="objective")
        if not any(l > 0 for l in lams):
            raise ContractError("at least one loss weight must be positive",
                                module="objective")


@dataclass(frozen=True)
class HoiProbs:
    """A probability (or soft target) per interaction class."""

    y: np.ndarray


@dataclass(frozen=True)
class TeacherTargets:
    """Projected prediction and projected ground truth, as fixed targets."""

    y_pred_proj: HoiProbs
    y_gt_proj: HoiProbs
    used_global_fallback: bool


def _as_y(v: HoiProbs | np.ndarray) -> np.ndarray:
    arr = v.y if isinstance(v, HoiProbs) else v
    return np.asarray(arr, dtype=np.float64)


def actions_to_vector(actions: Iterable[int], n: int) -> np.ndarray:
    vec = np.zeros(n, dtype=np.float64)
    for a in actions:
        vec[a] = 1.0
    return vec


def joint_hoi(
    h_conf: float,
    o_conf: float,
    a_probs: np.ndarray,
    obj: int,
    space: LabelSpace,
) -> HoiProbs:
    """Scatter action probabilities into the interaction classes of one object."""
    a = np.asarray(a_probs, dtype=np.float64)
    if a.shape != (space.n_actions,):
        raise ContractError(
            f"action vector has shape {a.shape}, expected ({space.n_actions},)",
            module="objective",
        )
    match = space.hoi_object_idx == obj
    y = np.where(match, h_conf * o_conf * a[space.hoi_action_idx], 0.0)
    return HoiProbs(y=y)


def joint_hoi_batch(
    h_conf: np.ndarray,
    o_conf: np.ndarray,
    a_probs: np.ndarray,
    obj: np.ndarray,
    space: LabelSpace,
) -> np.ndarray:
    """Batched joint probabilities, shape (batch, n_hoi)."""
    match = space.hoi_object_idx[None, :] == obj[:, None]
    scale = (h_conf * o_conf)[:, None]
    return np.where(match, scale * a_probs[:, space.hoi_action_idx], 0.0)


def bce(pred: HoiProbs | np.ndarray, target: HoiProbs | np.ndarray) -> float:
    """Mean binary cross-entropy with soft targets.

    Predictions are clamped away from 0 and 1 before the logarithms, so
    perfect hard predictions cost a vanishing positive amount rather than
    producing infinities.
    """
    p = np.clip(_as_y(pred), PROB_EPS, 1.0 - PROB_EPS)
    t = _as_y(target)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def bce_grad(pred: HoiProbs | np.ndarray, target: HoiProbs | np.ndarray) -> np.ndarray:
    """Gradient of :func:`bce` w.r.t. the raw predictions.

    Zero wherever the clamp is active, matching the computed loss exactly.
    """
    raw = _as_y(pred)
    p = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    t = _as_y(target)
    inside = (raw > PROB_EPS) & (raw < 1.0 - PROB_EPS)
    return np.where(inside, (p - t) / (p * (1.0 - p)), 0.0) / raw.size


def total_loss(
    y_pred: HoiProbs | np.ndarray,
    y_gt: HoiProbs | np.ndarray,
    y_pred_proj: HoiProbs | np.ndarray,
    y_gt_proj: HoiProbs | np.ndarray,
    weights: LossWeights,
) -> float:
    """Weighted sum of the ground-truth and teacher cross-entropy terms.

    The projected prediction enters as a constant target: no gradient is
    taken through it.
    """
    weights.validate()
    return (
        weights.lambda1 * bce(y_pred, y_gt)
        + weights.lambda2 * bce(y_pred, y_pred_proj)
        + weights.lambda3 * bce(y_pred, y_gt_proj)
    )


def teacher_targets(
    h_conf: float,
    o_conf: float,
    a_probs: np.ndarray,
    gt_actions: Iterable[int],
    obj: int,
    bank: CoocBank,
    weights: ProjectionWeights,
    space: LabelSpace,
    gt_obj: int | None = None,
) -> TeacherTargets:
    """Build both teacher targets for one candidate pair.

    The prediction is projected through the detected object's matrices and
    rescattered with the detection confidences; the binary ground-truth
    action vector is projected through the labeled object's matrices with
    unit confidences.  Objects absent from the bank fall back to the
    global matrices, flagged in the result.
    """
    if gt_obj is None:
        gt_obj = obj
    fallback = obj not in bank.per_object or gt_obj not in bank.per_object
    a_proj = project_weighted(np.asarray(a_probs, dtype=np.float64),
                              bank.pair_for(obj), weights)
    y_pred_proj = joint_hoi(h_conf, o_conf, a_proj, obj, space)
    a_gt = actions_to_vector(gt_actions, space.n_actions)
    a_gt_proj = project_weighted(a_gt, bank.pair_for(gt_obj), weights)
    y_gt_proj = joint_hoi(1.0, 1.0, a_gt_proj, gt_obj, space)
    return TeacherTargets(
        y_pred_proj=y_pred_proj,
        y_gt_proj=y_gt_proj,
        used_global_fallback=fallback,
    )


# ---------------------------------------------------------------------------
# Batched objective used by the trainer


@dataclass(frozen=True)
class LossParts:
    total: float
    gt: float
    teacher_pred: float
    teacher_gt: float


def _project_by_object(
    a: np.ndarray, obj: np.ndarray, bank: CoocBank, weights: ProjectionWeights
) -> np.ndarray:
    out = np.empty_like(a)
    for o in np.unique(obj):
        rows = obj == o
        out[rows] = project_weighted(a[rows], bank.pair_for(int(o)), weights)
    return out


def batch_objective(
    a_probs: np.ndarray,
    h_conf: np.ndarray,
    o_conf: np.ndarray,
    obj: np.ndarray,
    a_gt: np.ndarray,
    space: LabelSpace,
    bank: CoocBank,
    loss_weights: LossWeights,
    proj_weights: ProjectionWeights,
    teacher_pred: np.ndarray | None = None,
) -> tuple[LossParts, np.ndarray, np.ndarray]:
    """Loss and its gradient w.r.t. the action probabilities, over a batch.

    Means are taken over both the batch and the interaction classes.  The
    projected-prediction teacher is recomputed from ``a_probs`` unless one
    is passed in; either way it is a constant target.  Returns the loss
    parts, the gradient d loss / d a_probs, and the teacher used.
    """
    loss_weights.validate()
    b = a_probs.shape[0]
    y_pred = joint_hoi_batch(h_conf, o_conf, a_probs, obj, space)
    y_gt = joint_hoi_batch(np.ones(b), np.ones(b), a_gt, obj, space)

    l2 = loss_weights.lambda2
    l3 = loss_weights.lambda3
    if l2 > 0 or teacher_pred is not None:
        if teacher_pred is None:
            a_proj = _project_by_object(a_probs, obj, bank, proj_weights)
            teacher_pred = joint_hoi_batch(h_conf, o_conf, a_proj, obj, space)
    if l3 > 0:
        a_gt_proj = _project_by_object(a_gt, obj, bank, proj_weights)
        y_gt_proj = joint_hoi_batch(np.ones(b), np.ones(b), a_gt_proj, obj, space)

    loss_gt = bce(y_pred, y_gt)
    d_y = loss_weights.lambda1 * bce_grad(y_pred, y_gt)
    loss_tp = 0.0
    if l2 > 0:
        loss_tp = bce(y_pred, teacher_pred)
        d_y = d_y + l2 * bce_grad(y_pred, teacher_pred)
    loss_tg = 0.0
    if l3 > 0:
        loss_tg = bce(y_pred, y_gt_proj)
        d_y = d_y + l3 * bce_grad(y_pred, y_gt_proj)

    total = loss_weights.lambda1 * loss_gt + l2 * loss_tp + l3 * loss_tg

    # Pull the per-class gradient back onto the action vector: only classes
    # of the pair's own object carry signal, scaled by the confidences.
    match = space.hoi_object_idx[None, :] == obj[:, None]
    d_y_scaled = d_y * (h_conf * o_conf)[:, None] * match
    d_a = np.zeros_like(a_probs)
    np.add.at(d_a.T, space.hoi_action_idx, d_y_scaled.T)

    if teacher_pred is None:
        teacher_pred = np.zeros_like(y_pred)
    return (
        LossParts(total=total, gt=loss_gt, teacher_pred=loss_tp, teacher_gt=loss_tg),
        d_a,
        teacher_pred,
    )
