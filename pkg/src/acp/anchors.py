"""Anchor action selection and action groups.

Anchor actions are a mutually exclusive subset of the action vocabulary,
found by non-exclusive suppression (NES): repeatedly take the action whose
row of the co-occurrence matrix has the most zeros, then drop every
remaining candidate that positively co-occurs with it.  A synthetic
``other`` anchor covers images containing no selected anchor, so the
anchor set plus ``other`` partitions every image.  Each non-anchor
(regular) action joins the group of every anchor it can co-occur with.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cooc import CoocPair
from .corpus import AnnotationCorpus, action_occurrence_sets
from .errors import ContractError


@dataclass(frozen=True)
class ExclusivenessVector:
    """Per-action count of actions that never co-occur with it.

    Entries for invalid matrix rows (actions never observed) are -1: they
    carry no exclusiveness evidence and are skipped during selection.
    """

    e: np.ndarray


@dataclass(frozen=True)
class ActionGroups:
    """Anchors, the synthetic ``other`` anchor, and group membership.

    ``other_index`` equals the action count so it never collides with a
    real action index.  ``membership`` maps each anchor id (anchors plus
    ``other_index``) to the regular actions reachable from it.
    ``other_cond_row[j]`` is the empirical frequency of action j among
    images containing no anchor.
    """

    n_actions: int
    anchors: tuple[int, ...]
    other_index: int
    regular: tuple[int, ...]
    membership: dict[int, frozenset[int]]
    other_cond_row: np.ndarray

    @property
    def anchor_ids(self) -> tuple[int, ...]:
        """All group ids in head order: anchors first, ``other`` last."""
        return self.anchors + (self.other_index,)

    @property
    def n_anchor_slots(self) -> int:
        return len(self.anchors) + 1

    @property
    def regular_pos(self) -> dict[int, int]:
        """Action index to column position in regular-head outputs."""
        return {j: r for r, j in enumerate(self.regular)}


def exclusiveness(pair: CoocPair) -> ExclusivenessVector:
    """Count, per valid row, how many actions have zero conditional mass."""
    e = np.full(pair.n, -1, dtype=np.int64)
    for i in range(pair.n):
        if pair.row_valid[i]:
            e[i] = int(np.count_nonzero(pair.c[i] == 0.0))
    return ExclusivenessVector(e=e)


def nes_select(pair: CoocPair) -> tuple[int, ...]:
    """Greedy mutually exclusive anchor selection.

    Scores are computed once; each round takes the remaining candidate with
    the highest score (ties to the lowest index) and removes every
    candidate it positively co-occurs with, itself included.  Only valid
    rows are candidates.
    """
    e = exclusiveness(pair).e
    remaining = [i for i in range(pair.n) if pair.row_valid[i]]
    anchors: list[int] = []
    while remaining:
        m = max(remaining, key=lambda i: (e[i], -i))
        anchors.append(m)
        remaining = [k for k in remaining if pair.c[m, k] == 0.0]
    return tuple(anchors)


def _check_exclusive(pair: CoocPair, anchors: tuple[int, ...]) -> None:
    for idx, i in enumerate(anchors):
        for j in anchors[idx + 1 :]:
            if pair.c[i, j] != 0.0 or pair.c[j, i] != 0.0:
                raise ContractError(
                    f"anchors {i} and {j} are not mutually exclusive "
                    f"(c[{i},{j}]={pair.c[i, j]}, c[{j},{i}]={pair.c[j, i]})",
                    module="anchors",
                )


def build_groups_from_sets(
    pair: CoocPair,
    anchors: tuple[int, ...],
    occurrence_sets: list[set[int]],
) -> ActionGroups:
    """Assign regular actions to anchor groups given per-image action sets."""
    _check_exclusive(pair, anchors)
    n = pair.n
    anchor_set = set(anchors)
    regular = tuple(j for j in range(n) if j not in anchor_set)

    membership: dict[int, frozenset[int]] = {}
    for i in anchors:
        membership[i] = frozenset(j for j in regular if pair.c[i, j] > 0.0)

    # The ``other`` event is the absence of every anchor; its conditional
    # row is counted from exactly those images.
    anchor_free = [occ for occ in occurrence_sets if not (occ & anchor_set)]
    other_cond_row = np.zeros(n, dtype=np.float64)
    if anchor_free:
        counts = np.zeros(n, dtype=np.int64)
        for occ in anchor_free:
            for a in occ:
                counts[a] += 1
        other_cond_row = counts / len(anchor_free)

    other_index = n
    other_members = {j for j in regular if other_cond_row[j] > 0.0}
    grouped = set().union(*membership.values()) if membership else set()
    grouped |= other_members
    # Regular actions reachable from no anchor still need a predictor.
    other_members |= set(regular) - grouped
    membership[other_index] = frozenset(other_members)

    return ActionGroups(
        n_actions=n,
        anchors=anchors,
        other_index=other_index,
        regular=regular,
        membership=membership,
        other_cond_row=other_cond_row,
    )


def build_groups(
    pair: CoocPair, anchors: tuple[int, ...], corpus: AnnotationCorpus
) -> ActionGroups:
    """Assign regular actions to anchor groups using corpus statistics."""
    return build_groups_from_sets(pair, anchors, action_occurrence_sets(corpus))


def groups_to_dict(groups: ActionGroups) -> dict:
    return {
        "anchors": list(groups.anchors),
        "other": sorted(groups.membership[groups.other_index]),
        "groups": {
            str(i): sorted(groups.membership[i]) for i in groups.anchors
        },
        "other_cond_row": [float(v) for v in groups.other_cond_row],
    }


def groups_from_dict(data: dict) -> ActionGroups:
    n = len(data["other_cond_row"])
    anchors = tuple(data["anchors"])
    membership = {int(k): frozenset(v) for k, v in data["groups"].items()}
    membership[n] = frozenset(data["other"])
    regular = tuple(j for j in range(n) if j not in set(anchors))
    return ActionGroups(
        n_actions=n,
        anchors=anchors,
        other_index=n,
        regular=regular,
        membership=membership,
        other_cond_row=np.array(data["other_cond_row"], dtype=np.float64),
    )


def save_groups(groups: ActionGroups, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(groups_to_dict(groups), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_groups(path: str | Path) -> ActionGroups:
    return groups_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
