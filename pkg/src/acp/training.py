"""Mini-batch training of the prediction heads.

The sample unit is the candidate pair, matching the per-pair joint
probability the loss is defined on.  Each step runs a forward pass,
rebuilds the projected-prediction teacher from the current outputs
(against fixed, precomputed co-occurrence matrices), takes the analytic
gradient, and applies the optimizer.  With a multitask architecture an
auxiliary softmax cross-entropy on the anchor slot is added, since the
anchor head does not otherwise receive gradient.

Everything is deterministic given (seed, config): initialization, batch
shuffling, and the update arithmetic run on fixed Philox streams in a
fixed order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anchors import ActionGroups, groups_from_dict, groups_to_dict
from .cooc import CoocBank, CoocPair
from .corpus import AnnotationCorpus
from .errors import ContractError, TrainingDivergedError
from .model import (
    Affine,
    ARCH_KINDS,
    Mlp,
    ModelDims,
    ModelParams,
    UpstreamGrads,
    backward,
    forward,
    named_tensors,
)
from .objective import LossWeights, actions_to_vector, batch_objective
from .projection import ProjectionWeights
from .rng import STREAM_INIT, STREAM_SHUFFLE, make_rng

AUX_ANCHOR_WEIGHT = 1.0
_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    arch_kind: str = "modified"
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer_kind: str = "adam"
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=lambda: LossWeights(1.0, 0.0, 0.0))
    projection_weights: ProjectionWeights = field(default_factory=ProjectionWeights)
    use_postprocess_in_eval: bool = False
    fusion_dim: int = 64
    hidden_dim: int = 64

    def validate(self) -> None:
        if self.arch_kind not in ARCH_KINDS:
            raise ContractError(
                f"unknown arch kind {self.arch_kind!r}", module="trainer"
            )
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ContractError("epochs and batch_size must be positive",
                                module="trainer")
        if self.learning_rate < 0:
            raise ContractError("learning rate must be nonnegative",
                                module="trainer")
        if self.optimizer_kind not in ("sgd", "adam"):
            raise ContractError(
                f"unknown optimizer {self.optimizer_kind!r}", module="trainer"
            )
        self.loss_weights.validate()
        self.projection_weights.validate()


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    loss_total: float
    loss_gt: float
    loss_teacher_pred: float
    loss_teacher_gt: float


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)


def history_csv(history: TrainHistory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["epoch", "step", "loss_total", "loss_gt", "loss_teacher_pred",
         "loss_teacher_gt"]
    )
    for rec in history.steps:
        writer.writerow(
            [rec.epoch, rec.step, repr(rec.loss_total), repr(rec.loss_gt),
             repr(rec.loss_teacher_pred), repr(rec.loss_teacher_gt)]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Initialization


def _init_affine(rng: np.random.Generator, n_out: int, n_in: int) -> Affine:
    limit = 1.0 / np.sqrt(n_in)
    return Affine(
        w=rng.uniform(-limit, limit, size=(n_out, n_in)),
        b=np.zeros(n_out),
    )


def _init_mlp(rng: np.random.Generator, n_out: int, n_in: int, hidden: int) -> Mlp:
    l1 = _init_affine(rng, hidden, n_in)
    l2 = _init_affine(rng, n_out, hidden)
    return Mlp(w1=l1.w, b1=l1.b, w2=l2.w, b2=l2.b)


def init_params(
    seed: int, dims: ModelDims, arch_kind: str, groups: ActionGroups
) -> ModelParams:
    """Fan-in-scaled symmetric uniform initialization, fixed draw order."""
    if arch_kind not in ARCH_KINDS:
        raise ContractError(f"unknown arch kind {arch_kind!r}", module="trainer")
    if dims.n_actions != groups.n_actions:
        raise ContractError(
            f"dims.n_actions={dims.n_actions} does not match groups "
            f"({groups.n_actions})",
            module="trainer",
        )
    rng = make_rng(seed, STREAM_INIT)
    fusion_out = dims.n_actions if arch_kind == "baseline" else dims.fusion_dim
    params = ModelParams(
        arch_kind=arch_kind,
        dims=dims,
        fusion=_init_affine(rng, fusion_out, dims.feature_dim),
    )
    if arch_kind in ("modified", "multitask", "twostream"):
        params.flat_head = _init_mlp(rng, dims.n_actions, dims.fusion_dim,
                                     dims.hidden_dim)
    if arch_kind in ("multitask", "twostream", "hierarchical"):
        params.anchor_head = _init_mlp(rng, groups.n_anchor_slots,
                                       dims.fusion_dim, dims.hidden_dim)
    if arch_kind == "hierarchical":
        n_regular = len(groups.regular)
        for gid in groups.anchor_ids:
            params.group_heads[gid] = _init_mlp(rng, n_regular, dims.fusion_dim,
                                                dims.hidden_dim)
    return params


# ---------------------------------------------------------------------------
# Optimizers


class SgdOptimizer:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, tensors: list[tuple[str, np.ndarray]],
               grads: dict[str, np.ndarray]) -> None:
        for name, arr in tensors:
            arr -= self.lr * grads[name]


class AdamOptimizer:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, tensors: list[tuple[str, np.ndarray]],
               grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, arr in tensors:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SgdOptimizer(lr)
    if kind == "adam":
        return AdamOptimizer(lr)
    raise ContractError(f"unknown optimizer {kind!r}", module="trainer")


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass(frozen=True)
class PairBatchData:
    """Corpus flattened to aligned per-pair arrays."""

    x: np.ndarray
    h_conf: np.ndarray
    o_conf: np.ndarray
    obj: np.ndarray
    a_gt: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[0]


def pair_arrays(corpus: AnnotationCorpus) -> PairBatchData:
    pairs = corpus.all_pairs()
    if not pairs:
        raise ContractError("corpus has no candidate pairs", module="trainer")
    n = corpus.label_space.n_actions
    return PairBatchData(
        x=np.stack([p.feature for p in pairs]),
        h_conf=np.array([p.human_conf for p in pairs]),
        o_conf=np.array([p.object_conf for p in pairs]),
        obj=np.array([p.object for p in pairs], dtype=np.intp),
        a_gt=np.stack([actions_to_vector(p.gt_actions, n) for p in pairs]),
    )


def anchor_targets(a_gt: np.ndarray, groups: ActionGroups) -> np.ndarray:
    """Softmax target slot per sample: its anchor's position, or ``other``."""
    targets = np.full(a_gt.shape[0], len(groups.anchors), dtype=np.intp)
    for t, anchor in enumerate(groups.anchors):
        hit = (a_gt[:, anchor] > 0) & (targets == len(groups.anchors))
        targets[hit] = t
    return targets


def _aux_anchor_loss(
    anchor_probs: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Cross-entropy on the anchor softmax plus its output gradient."""
    b = anchor_probs.shape[0]
    picked = anchor_probs[np.arange(b), targets]
    clamped = np.clip(picked, _CLAMP, 1.0)
    loss = float(np.mean(-np.log(clamped)))
    d_anchor = np.zeros_like(anchor_probs)
    inside = picked > _CLAMP
    d_anchor[np.arange(b), targets] = np.where(inside, -1.0 / clamped, 0.0) / b
    return AUX_ANCHOR_WEIGHT * loss, AUX_ANCHOR_WEIGHT * d_anchor


def train(
    corpus: AnnotationCorpus,
    groups: ActionGroups,
    bank: CoocBank,
    cfg: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    """Train a model on every candidate pair of the corpus.

    Batches are shuffled per epoch from a seeded stream; the last short
    batch is kept.  Aborts with a diagnostic if the loss turns non-finite.
    """
    cfg.validate()
    space = corpus.label_space
    data = pair_arrays(corpus)
    dims = ModelDims(
        feature_dim=data.x.shape[1],
        n_actions=space.n_actions,
        fusion_dim=cfg.fusion_dim,
        hidden_dim=cfg.hidden_dim,
    )
    params = init_params(cfg.seed, dims, cfg.arch_kind, groups)
    optimizer = make_optimizer(cfg.optimizer_kind, cfg.learning_rate)
    tensors = named_tensors(params)
    shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE)
    anchor_tgt_all = (
        anchor_targets(data.a_gt, groups) if cfg.arch_kind == "multitask" else None
    )

    history = TrainHistory()
    global_step = 0
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(data.size)
        epoch_total = 0.0
        n_batches = 0
        for start in range(0, data.size, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = PairBatchData(
                x=data.x[idx],
                h_conf=data.h_conf[idx],
                o_conf=data.o_conf[idx],
                obj=data.obj[idx],
                a_gt=data.a_gt[idx],
            )
            probs = forward(params, batch.x, groups)
            parts, d_a, _ = batch_objective(
                np.atleast_2d(probs.a),
                batch.h_conf,
                batch.o_conf,
                batch.obj,
                batch.a_gt,
                space,
                bank,
                cfg.loss_weights,
                cfg.projection_weights,
            )
            aux = 0.0
            d_anchor = None
            if cfg.arch_kind == "multitask":
                aux, d_anchor = _aux_anchor_loss(
                    np.atleast_2d(probs.anchor), anchor_tgt_all[idx]
                )
            loss_value = parts.total + aux
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} step {global_step}"
                )
            history.steps.append(
                StepRecord(
                    epoch=epoch,
                    step=global_step,
                    loss_total=loss_value,
                    loss_gt=parts.gt,
                    loss_teacher_pred=parts.teacher_pred,
                    loss_teacher_gt=parts.teacher_gt,
                )
            )
            grads = backward(
                params, batch.x, groups, UpstreamGrads(d_a=d_a, d_anchor=d_anchor)
            )
            optimizer.update(tensors, grads)
            epoch_total += loss_value
            n_batches += 1
            global_step += 1
        history.epoch_loss.append(epoch_total / n_batches)

    for name, arr in tensors:
        if not np.all(np.isfinite(arr)):
            raise TrainingDivergedError(f"non-finite parameter {name} after training")
    return params, history


# ---------------------------------------------------------------------------
# Checkpoints


def _pair_to_dict(pair: CoocPair) -> dict:
    return {
        "n": pair.n,
        "c": pair.c.tolist(),
        "c_comp": pair.c_comp.tolist(),
        "row_valid": pair.row_valid.tolist(),
        "comp_row_valid": pair.comp_row_valid.tolist(),
    }


def _pair_from_dict(data: dict) -> CoocPair:
    return CoocPair(
        n=data["n"],
        c=np.array(data["c"], dtype=np.float64),
        c_comp=np.array(data["c_comp"], dtype=np.float64),
        row_valid=np.array(data["row_valid"], dtype=bool),
        comp_row_valid=np.array(data["comp_row_valid"], dtype=bool),
    )


def bank_to_dict(bank: CoocBank) -> dict:
    return {
        "global": _pair_to_dict(bank.global_pair),
        "per_object": {
            str(o): _pair_to_dict(p) for o, p in sorted(bank.per_object.items())
        },
    }


def bank_from_dict(data: dict) -> CoocBank:
    return CoocBank(
        global_pair=_pair_from_dict(data["global"]),
        per_object={int(o): _pair_from_dict(p) for o, p in data["per_object"].items()},
    )


@dataclass(frozen=True)
class Checkpoint:
    """A trained model plus everything needed to evaluate it."""

    params: ModelParams
    groups: ActionGroups
    bank: CoocBank
    rare_classes: tuple[int, ...]


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    dims = ckpt.params.dims
    return {
        "version": 1,
        "arch_kind": ckpt.params.arch_kind,
        "dims": {
            "feature_dim": dims.feature_dim,
            "n_actions": dims.n_actions,
            "fusion_dim": dims.fusion_dim,
            "hidden_dim": dims.hidden_dim,
        },
        "groups": groups_to_dict(ckpt.groups),
        "bank": bank_to_dict(ckpt.bank),
        "rare_classes": list(ckpt.rare_classes),
        "tensors": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in named_tensors(ckpt.params)
        },
    }


def checkpoint_from_dict(data: dict) -> Checkpoint:
    if data.get("version") != 1:
        raise ContractError(
            f"unsupported checkpoint version {data.get('version')!r}",
            module="trainer",
        )
    dims = ModelDims(**data["dims"])
    groups = groups_from_dict(data["groups"])
    params = init_params(0, dims, data["arch_kind"], groups)
    tensors = dict(named_tensors(params))
    stored = data["tensors"]
    if set(stored) != set(tensors):
        raise ContractError(
            "checkpoint tensor names do not match the architecture",
            module="trainer",
        )
    for name, arr in tensors.items():
        raw = stored[name]
        if list(arr.shape) != raw["shape"]:
            raise ContractError(
                f"checkpoint tensor {name} has shape {raw['shape']}, "
                f"expected {list(arr.shape)}",
                module="trainer",
            )
        arr[...] = np.array(raw["data"], dtype=np.float64).reshape(arr.shape)
    return Checkpoint(
        params=params,
        groups=groups,
        bank=bank_from_dict(data["bank"]),
        rare_classes=tuple(data["rare_classes"]),
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(checkpoint_to_dict(ckpt), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    return checkpoint_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
