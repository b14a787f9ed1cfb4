"""Empirical action co-occurrence matrices.

From per-image action occurrence sets we count, for every ordered action
pair (i, j), the conditional frequency of j among images containing i
(matrix C) and among images not containing i (complementary matrix C').
Rows whose denominator is zero are stored as zeros and flagged invalid so
downstream consumers stay total.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import AnnotationCorpus, action_occurrence_sets
from .errors import ContractError


@dataclass(frozen=True)
class CoocPair:
    """A conditional co-occurrence matrix and its complement.

    ``c[i, j]`` is the fraction of images containing action i that also
    contain action j; ``c_comp[i, j]`` is the fraction of images without i
    that contain j.  ``row_valid[i]`` / ``comp_row_valid[i]`` record whether
    the respective denominator was nonzero.
    """

    n: int
    c: np.ndarray
    c_comp: np.ndarray
    row_valid: np.ndarray
    comp_row_valid: np.ndarray


@dataclass(frozen=True)
class CoocBank:
    """The global matrix pair plus one pair per object class."""

    global_pair: CoocPair
    per_object: dict[int, CoocPair]

    def pair_for(self, obj: int | None) -> CoocPair:
        """Matrices for an object class, falling back to the global pair."""
        if obj is not None and obj in self.per_object:
            return self.per_object[obj]
        return self.global_pair


def occurrence_matrix(occurrence_sets: Sequence[Iterable[int]], n: int) -> np.ndarray:
    """Binary image-by-action indicator matrix, shape (n_images, n)."""
    x = np.zeros((len(occurrence_sets), n), dtype=np.int64)
    for k, occ in enumerate(occurrence_sets):
        for a in occ:
            if not (0 <= a < n):
                raise ContractError(
                    f"occurrence set {k} contains action {a} outside [0, {n})",
                    module="cooc",
                )
            x[k, a] = 1
    return x


def build_cooc(occurrence_sets: Sequence[Iterable[int]], n: int) -> CoocPair:
    """Count conditional and complementary co-occurrence frequencies.

    Entries are exact ratios of integer counts; a row with no images on its
    side of the condition is zeroed and flagged invalid.
    """
    if n == 0:
        raise ContractError("action space is empty", module="cooc")
    x = occurrence_matrix(occurrence_sets, n)
    n_sets = x.shape[0]
    joint = x.T @ x  # joint[i, j] = #images containing both i and j
    with_i = np.diag(joint).astype(np.int64)
    without_i = n_sets - with_i
    col_totals = with_i  # #images containing j, same vector viewed per column

    row_valid = with_i > 0
    comp_row_valid = without_i > 0

    c = np.zeros((n, n), dtype=np.float64)
    np.divide(joint, with_i[:, None], out=c, where=row_valid[:, None])

    # #images containing j but not i = #images with j minus #images with both.
    only_j = col_totals[None, :] - joint
    c_comp = np.zeros((n, n), dtype=np.float64)
    np.divide(only_j, without_i[:, None], out=c_comp, where=comp_row_valid[:, None])

    return CoocPair(
        n=n, c=c, c_comp=c_comp, row_valid=row_valid, comp_row_valid=comp_row_valid
    )


def build_bank(corpus: AnnotationCorpus) -> CoocBank:
    """Global matrices plus per-object matrices for every object seen."""
    n = corpus.label_space.n_actions
    global_pair = build_cooc(action_occurrence_sets(corpus), n)
    per_object: dict[int, CoocPair] = {}
    seen = sorted({p.object for img in corpus.images for p in img.pairs})
    for obj in seen:
        sets_o = action_occurrence_sets(corpus, object_filter=obj)
        if sets_o:
            per_object[obj] = build_cooc(sets_o, n)
    return CoocBank(global_pair=global_pair, per_object=per_object)


def validate_cooc(pair: CoocPair) -> list[str]:
    """Check the matrix invariants; returns one message per violation."""
    violations: list[str] = []
    n = pair.n
    for name, mat in (("c", pair.c), ("c_comp", pair.c_comp)):
        bad = np.argwhere((mat < 0.0) | (mat > 1.0))
        for i, j in bad:
            violations.append(f"{name}[{i},{j}]={mat[i, j]} outside [0, 1]")
    for i in range(n):
        if pair.row_valid[i] and pair.c[i, i] != 1.0:
            violations.append(f"diagonal != 1 at {i} (c[{i},{i}]={pair.c[i, i]})")
    for i in range(n):
        if not pair.row_valid[i]:
            continue
        for j in range(n):
            if not pair.row_valid[j]:
                continue
            if (pair.c[i, j] > 0.0) != (pair.c[j, i] > 0.0):
                violations.append(
                    f"positivity asymmetry at ({i},{j}): "
                    f"c[{i},{j}]={pair.c[i, j]}, c[{j},{i}]={pair.c[j, i]}"
                )
    return violations


# ---------------------------------------------------------------------------
# Directory format: one CSV per matrix plus a JSON sidecar with the validity
# masks and the occurrence sets the matrices were counted from.

def _matrix_csv(actions: Sequence[str], mat: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(actions)
    for row in mat:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _read_matrix_csv(path: Path) -> np.ndarray:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)


def save_bank(
    bank: CoocBank,
    out_dir: str | Path,
    actions: Sequence[str],
    objects: Sequence[str],
    occurrence_sets: Sequence[set[int]] | None = None,
    write=None,
) -> list[Path]:
    """Write a bank as CSV matrices plus a ``cooc_meta.json`` sidecar.

    ``write(path, text)`` may be supplied to control how files hit disk
    (the CLI passes an atomic writer); the default writes directly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if write is None:
        write = lambda path, text: Path(path).write_text(text, encoding="utf-8")
    written: list[Path] = []

    def emit(tag: str, pair: CoocPair) -> None:
        for prefix, mat in (("cooc", pair.c), ("cooc_comp", pair.c_comp)):
            path = out / f"{prefix}_{tag}.csv"
            write(path, _matrix_csv(actions, mat))
            written.append(path)

    emit("global", bank.global_pair)
    meta = {
        "actions": list(actions),
        "objects": list(objects),
        "row_valid": {"global": bank.global_pair.row_valid.tolist()},
        "comp_row_valid": {"global": bank.global_pair.comp_row_valid.tolist()},
        "object_indices": sorted(bank.per_object),
    }
    for obj in sorted(bank.per_object):
        tag = objects[obj]
        emit(tag, bank.per_object[obj])
        meta["row_valid"][tag] = bank.per_object[obj].row_valid.tolist()
        meta["comp_row_valid"][tag] = bank.per_object[obj].comp_row_valid.tolist()
    if occurrence_sets is not None:
        meta["occurrence_sets"] = [sorted(s) for s in occurrence_sets]
    meta_path = out / "cooc_meta.json"
    write(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(meta_path)
    return written


def load_bank(in_dir: str | Path) -> tuple[CoocBank, dict]:
    """Read back a bank directory written by :func:`save_bank`."""
    src = Path(in_dir)
    meta = json.loads((src / "cooc_meta.json").read_text(encoding="utf-8"))
    actions = meta["actions"]
    objects = meta["objects"]
    n = len(actions)

    def read_pair(tag: str) -> CoocPair:
        return CoocPair(
            n=n,
            c=_read_matrix_csv(src / f"cooc_{tag}.csv"),
            c_comp=_read_matrix_csv(src / f"cooc_comp_{tag}.csv"),
            row_valid=np.array(meta["row_valid"][tag], dtype=bool),
            comp_row_valid=np.array(meta["comp_row_valid"][tag], dtype=bool),
        )

    global_pair = read_pair("global")
    per_object = {obj: read_pair(objects[obj]) for obj in meta["object_indices"]}
    return CoocBank(global_pair=global_pair, per_object=per_object), meta
