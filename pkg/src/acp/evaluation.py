"""Average precision over interaction classes and ablation tables.

Evaluation here is label ranking over candidate pairs: every pair is
scored for every interaction class through the joint probability, and
each class's average precision summarizes how well its true pairs rank.
There is no box matching.  Classes with no positive example in the test
corpus are undefined and excluded from the split means rather than
scored zero.  The rare split always comes from training-corpus counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .anchors import ActionGroups, build_groups, nes_select
from .cooc import CoocBank, build_bank
from .corpus import AnnotationCorpus, class_frequencies
from .errors import ContractError
from .model import ModelParams, forward
from .objective import joint_hoi_batch
from .projection import ProjectionWeights, project_weighted
from .training import TrainConfig, pair_arrays, train


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """All-point average precision of one ranked list.

    Samples are sorted by descending score with ties broken by original
    index, and precision is averaged at each positive's rank.  Returns
    NaN when there is no positive label.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError(
            f"scores {s.shape} and labels {y.shape} must be equal-length vectors",
            module="evaluator",
        )
    n_pos = int(np.count_nonzero(y))
    if n_pos == 0:
        return float("nan")
    order = np.lexsort((np.arange(len(s)), -s))
    hits = y[order] > 0
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    return float(np.sum(cum_pos[hits] / ranks[hits]) / n_pos)


@dataclass(frozen=True)
class EvalConfig:
    postprocess: bool = False
    projection_weights: ProjectionWeights = field(default_factory=ProjectionWeights)
    rare_classes: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    per_class_ap: np.ndarray  # NaN where undefined
    map_full: float | None
    map_rare: float | None
    map_nonrare: float | None
    n_defined_full: int
    n_defined_rare: int
    n_defined_nonrare: int
    rare_classes: tuple[int, ...]
    config: dict


def _mean_or_none(values: np.ndarray) -> tuple[float | None, int]:
    defined = values[~np.isnan(values)]
    if defined.size == 0:
        return None, 0
    return float(defined.mean()), int(defined.size)


def evaluate(
    params: ModelParams,
    corpus_test: AnnotationCorpus,
    groups: ActionGroups,
    bank: CoocBank,
    cfg: EvalConfig,
) -> EvalReport:
    """Score every candidate pair for every class and compute split means."""
    space = corpus_test.label_space
    if space.n_actions != params.dims.n_actions:
        raise ContractError(
            f"corpus has {space.n_actions} actions, model expects "
            f"{params.dims.n_actions}",
            module="evaluator",
        )
    data = pair_arrays(corpus_test)
    probs = forward(params, data.x, groups)
    a = np.atleast_2d(probs.a)
    if cfg.postprocess:
        projected = np.empty_like(a)
        for o in np.unique(data.obj):
            rows = data.obj == o
            projected[rows] = project_weighted(
                a[rows], bank.pair_for(int(o)), cfg.projection_weights
            )
        a = projected
    scores = joint_hoi_batch(data.h_conf, data.o_conf, a, data.obj, space)
    match = space.hoi_object_idx[None, :] == data.obj[:, None]
    labels = (data.a_gt[:, space.hoi_action_idx] > 0) & match

    ap = np.array(
        [average_precision(scores[:, m], labels[:, m]) for m in range(space.n_hoi)]
    )
    rare_set = set(cfg.rare_classes)
    rare_mask = np.array([m in rare_set for m in range(space.n_hoi)])
    map_full, n_full = _mean_or_none(ap)
    map_rare, n_rare = _mean_or_none(ap[rare_mask])
    map_nonrare, n_nonrare = _mean_or_none(ap[~rare_mask])
    return EvalReport(
        per_class_ap=ap,
        map_full=map_full,
        map_rare=map_rare,
        map_nonrare=map_nonrare,
        n_defined_full=n_full,
        n_defined_rare=n_rare,
        n_defined_nonrare=n_nonrare,
        rare_classes=tuple(sorted(rare_set)),
        config={
            "postprocess": cfg.postprocess,
            "alpha": cfg.projection_weights.alpha,
            "beta": cfg.projection_weights.beta,
        },
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "note": "label-ranking average precision over candidate pairs (no boxes)",
        "per_class_ap": [
            None if np.isnan(v) else float(v) for v in report.per_class_ap
        ],
        "map_full": report.map_full,
        "map_rare": report.map_rare,
        "map_nonrare": report.map_nonrare,
        "n_defined": {
            "full": report.n_defined_full,
            "rare": report.n_defined_rare,
            "nonrare": report.n_defined_nonrare,
        },
        "rare_classes": list(report.rare_classes),
        "config": report.config,
    }


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def render_report(report: EvalReport) -> str:
    lines = [
        "label-ranking mAP over candidate pairs (no box matching)",
        f"{'split':<10}{'mAP':>12}{'classes':>10}",
        f"{'full':<10}{_fmt(report.map_full):>12}{report.n_defined_full:>10}",
        f"{'rare':<10}{_fmt(report.map_rare):>12}{report.n_defined_rare:>10}",
        f"{'non-rare':<10}{_fmt(report.map_nonrare):>12}{report.n_defined_nonrare:>10}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Ablation


@dataclass(frozen=True)
class AblationRow:
    label: str
    map_full: float | None
    map_rare: float | None
    map_nonrare: float | None


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[AblationRow, ...]


def config_label(cfg: TrainConfig) -> str:
    label = cfg.arch_kind
    if cfg.loss_weights.lambda2 > 0 or cfg.loss_weights.lambda3 > 0:
        label += "+distill"
    if cfg.use_postprocess_in_eval:
        label += "+post"
    return label


def ablation(
    corpus_train: AnnotationCorpus,
    corpus_test: AnnotationCorpus,
    configs: Sequence[TrainConfig],
    rare_threshold: int = 10,
    groups: ActionGroups | None = None,
    bank: CoocBank | None = None,
) -> AblationTable:
    """Train and evaluate one row per config on shared data.

    Groups and the matrix bank default to ones built from the training
    corpus, so a bare call reproduces the full pipeline per row.
    """
    if bank is None:
        bank = build_bank(corpus_train)
    if groups is None:
        anchors = nes_select(bank.global_pair)
        groups = build_groups(bank.global_pair, anchors, corpus_train)
    rare = class_frequencies(corpus_train, threshold=rare_threshold).rare
    rows = []
    for cfg in configs:
        params, _ = train(corpus_train, groups, bank, cfg)
        report = evaluate(
            params,
            corpus_test,
            groups,
            bank,
            EvalConfig(
                postprocess=cfg.use_postprocess_in_eval,
                projection_weights=cfg.projection_weights,
                rare_classes=rare,
            ),
        )
        rows.append(
            AblationRow(
                label=config_label(cfg),
                map_full=report.map_full,
                map_rare=report.map_rare,
                map_nonrare=report.map_nonrare,
            )
        )
    return AblationTable(rows=tuple(rows))


def table_to_dict(table: AblationTable) -> dict:
    return {
        "rows": [
            {
                "label": r.label,
                "map_full": r.map_full,
                "map_rare": r.map_rare,
                "map_nonrare": r.map_nonrare,
            }
            for r in table.rows
        ]
    }


def render_table(table: AblationTable) -> str:
    width = max([len(r.label) for r in table.rows] + [12])
    lines = [f"{'model':<{width}}{'full':>12}{'rare':>12}{'non-rare':>12}"]
    for r in table.rows:
        lines.append(
            f"{r.label:<{width}}{_fmt(r.map_full):>12}{_fmt(r.map_rare):>12}"
            f"{_fmt(r.map_nonrare):>12}"
        )
    return "\n".join(lines) + "\n"
