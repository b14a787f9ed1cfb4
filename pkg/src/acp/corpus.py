"""Label space and annotation corpus.

A corpus is a list of images, each holding candidate human-object pairs
with detection confidences, an object class, a ground-truth action set,
and a pre-fused feature vector.  Interaction classes are (action, object)
pairs.  Everything is immutable after load; the operations here are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusFormatError, CorpusValidationError


@dataclass(frozen=True)
class LabelSpace:
    """Action vocabulary, object vocabulary, and the interaction class table.

    ``hoi_classes[m] = (a, o)`` maps interaction class m to action a
    performed on object o.
    """

    actions: tuple[str, ...]
    objects: tuple[str, ...]
    hoi_classes: tuple[tuple[int, int], ...]

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_hoi(self) -> int:
        return len(self.hoi_classes)

    @cached_property
    def _class_lookup(self) -> dict[tuple[int, int], int]:
        return {pair: m for m, pair in enumerate(self.hoi_classes)}

    @cached_property
    def hoi_action_idx(self) -> np.ndarray:
        """Action index of each interaction class, shape (n_hoi,)."""
        return np.array([a for a, _ in self.hoi_classes], dtype=np.intp)

    @cached_property
    def hoi_object_idx(self) -> np.ndarray:
        """Object index of each interaction class, shape (n_hoi,)."""
        return np.array([o for _, o in self.hoi_classes], dtype=np.intp)

    def class_index(self, action: int, obj: int) -> int | None:
        return self._class_lookup.get((action, obj))

    def validate(self) -> None:
        seen: set[tuple[int, int]] = set()
        for m, (a, o) in enumerate(self.hoi_classes):
            if not (0 <= a < self.n_actions):
                raise CorpusValidationError(
                    f"hoi_classes[{m}]: action index {a} out of range"
                )
            if not (0 <= o < self.n_objects):
                raise CorpusValidationError(
                    f"hoi_classes[{m}]: object index {o} out of range"
                )
            if (a, o) in seen:
                raise CorpusValidationError(
                    f"hoi_classes[{m}]: duplicate pair ({a}, {o})"
                )
            seen.add((a, o))


@dataclass(frozen=True)
class CandidatePair:
    """One candidate human-object pair inside an image."""

    human_conf: float
    object_conf: float
    object: int
    gt_actions: frozenset[int]
    feature: np.ndarray


@dataclass(frozen=True)
class ImageRecord:
    id: str
    pairs: tuple[CandidatePair, ...]


@dataclass(frozen=True)
class AnnotationCorpus:
    label_space: LabelSpace
    images: tuple[ImageRecord, ...]

    @property
    def n_images(self) -> int:
        return len(self.images)

    def all_pairs(self) -> list[CandidatePair]:
        return [p for img in self.images for p in img.pairs]

    def validate(self) -> None:
        self.label_space.validate()
        n = self.label_space.n_actions
        n_obj = self.label_space.n_objects
        seen_ids: set[str] = set()
        for img in self.images:
            if img.id in seen_ids:
                raise CorpusValidationError(f"image {img.id!r}: duplicate id")
            seen_ids.add(img.id)
            for k, pair in enumerate(img.pairs):
                where = f"image {img.id!r} pair {k}"
                if not (0.0 <= pair.human_conf <= 1.0):
                    raise CorpusValidationError(
                        f"{where}: human_conf {pair.human_conf} not in [0, 1]"
                    )
                if not (0.0 <= pair.object_conf <= 1.0):
                    raise CorpusValidationError(
                        f"{where}: object_conf {pair.object_conf} not in [0, 1]"
                    )
                if not (0 <= pair.object < n_obj):
                    raise CorpusValidationError(
                        f"{where}: object index {pair.object} out of range"
                    )
                for a in pair.gt_actions:
                    if not (0 <= a < n):
                        raise CorpusValidationError(
                            f"{where}: action index {a} out of range"
                        )


@dataclass(frozen=True)
class ClassFrequencies:
    """Per interaction class positive counts and the rare/non-rare split."""

    counts: np.ndarray
    rare: tuple[int, ...]
    nonrare: tuple[int, ...]
    threshold: int


def _require(cond: bool, field_path: str, detail: str) -> None:
    if not cond:
        raise CorpusFormatError(f"{field_path}: {detail}")


def _parse_pair(raw: object, where: str) -> CandidatePair:
    _require(isinstance(raw, dict), where, "expected an object")
    assert isinstance(raw, dict)
    for key in ("human_conf", "object_conf", "object", "actions", "feature"):
        _require(key in raw, f"{where}.{key}", "missing")
    _require(
        isinstance(raw["human_conf"], (int, float)), f"{where}.human_conf", "not a number"
    )
    _require(
        isinstance(raw["object_conf"], (int, float)), f"{where}.object_conf", "not a number"
    )
    _require(
        isinstance(raw["object"], int) and not isinstance(raw["object"], bool),
        f"{where}.object",
        "not an integer",
    )
    _require(isinstance(raw["actions"], list), f"{where}.actions", "not an array")
    for i, a in enumerate(raw["actions"]):
        _require(
            isinstance(a, int) and not isinstance(a, bool),
            f"{where}.actions[{i}]",
            "not an integer",
        )
    _require(isinstance(raw["feature"], list), f"{where}.feature", "not an array")
    for i, v in enumerate(raw["feature"]):
        _require(
            isinstance(v, (int, float)) and not isinstance(v, bool),
            f"{where}.feature[{i}]",
            "not a number",
        )
    return CandidatePair(
        human_conf=float(raw["human_conf"]),
        object_conf=float(raw["object_conf"]),
        object=raw["object"],
        gt_actions=frozenset(raw["actions"]),
        feature=np.asarray(raw["feature"], dtype=np.float64),
    )


def corpus_from_dict(data: object) -> AnnotationCorpus:
    """Build a validated corpus from decoded JSON data."""
    _require(isinstance(data, dict), "<root>", "expected an object")
    assert isinstance(data, dict)
    for key in ("actions", "objects", "hoi_classes", "images"):
        _require(key in data, key, "missing")
    _require(isinstance(data["actions"], list), "actions", "not an array")
    _require(isinstance(data["objects"], list), "objects", "not an array")
    for name_key in ("actions", "objects"):
        for i, name in enumerate(data[name_key]):
            _require(isinstance(name, str), f"{name_key}[{i}]", "not a string")
    _require(isinstance(data["hoi_classes"], list), "hoi_classes", "not an array")
    hoi: list[tuple[int, int]] = []
    for m, raw in enumerate(data["hoi_classes"]):
        where = f"hoi_classes[{m}]"
        _require(isinstance(raw, dict), where, "expected an object")
        _require("action" in raw, f"{where}.action", "missing")
        _require("object" in raw, f"{where}.object", "missing")
        _require(isinstance(raw["action"], int), f"{where}.action", "not an integer")
        _require(isinstance(raw["object"], int), f"{where}.object", "not an integer")
        hoi.append((raw["action"], raw["object"]))
    space = LabelSpace(
        actions=tuple(data["actions"]),
        objects=tuple(data["objects"]),
        hoi_classes=tuple(hoi),
    )
    _require(isinstance(data["images"], list), "images", "not an array")
    images: list[ImageRecord] = []
    for k, raw_img in enumerate(data["images"]):
        where = f"images[{k}]"
        _require(isinstance(raw_img, dict), where, "expected an object")
        _require("id" in raw_img, f"{where}.id", "missing")
        _require(isinstance(raw_img["id"], str), f"{where}.id", "not a string")
        _require("pairs" in raw_img, f"{where}.pairs", "missing")
        _require(isinstance(raw_img["pairs"], list), f"{where}.pairs", "not an array")
        pairs = tuple(
            _parse_pair(raw_pair, f"{where}.pairs[{i}]")
            for i, raw_pair in enumerate(raw_img["pairs"])
        )
        images.append(ImageRecord(id=raw_img["id"], pairs=pairs))
    corpus = AnnotationCorpus(label_space=space, images=tuple(images))
    corpus.validate()
    return corpus


def corpus_to_dict(corpus: AnnotationCorpus) -> dict:
    """Serialize a corpus to the JSON-ready dict form (deterministic order)."""
    space = corpus.label_space
    return {
        "actions": list(space.actions),
        "objects": list(space.objects),
        "hoi_classes": [{"action": a, "object": o} for a, o in space.hoi_classes],
        "images": [
            {
                "id": img.id,
                "pairs": [
                    {
                        "human_conf": p.human_conf,
                        "object_conf": p.object_conf,
                        "object": p.object,
                        "actions": sorted(p.gt_actions),
                        "feature": [float(v) for v in p.feature],
                    }
                    for p in img.pairs
                ],
            }
            for img in corpus.images
        ],
    }


def load_corpus(path: str | Path) -> AnnotationCorpus:
    """Load and validate a corpus JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"<root>: invalid JSON ({exc})") from exc
    return corpus_from_dict(data)


def save_corpus(corpus: AnnotationCorpus, path: str | Path) -> None:
    """Write a corpus as UTF-8 JSON; loading it back reproduces the corpus."""
    Path(path).write_text(
        json.dumps(corpus_to_dict(corpus), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def action_occurrence_sets(
    corpus: AnnotationCorpus, object_filter: int | None = None
) -> list[set[int]]:
    """Per-image action sets, each the union of its pairs' labels.

    With an object filter, only pairs of that object class contribute and
    images with no such pair are omitted entirely.
    """
    out: list[set[int]] = []
    for img in corpus.images:
        pairs = img.pairs
        if object_filter is not None:
            pairs = tuple(p for p in pairs if p.object == object_filter)
            if not pairs:
                continue
        occ: set[int] = set()
        for p in pairs:
            occ |= p.gt_actions
        out.append(occ)
    return out


def class_frequencies(
    corpus: AnnotationCorpus, threshold: int = 10
) -> ClassFrequencies:
    """Count positives per interaction class and split rare from non-rare.

    The count for class (a, o) is the number of candidate pairs with object
    o whose labels include a.  Classes with fewer than ``threshold``
    positives are rare.
    """
    space = corpus.label_space
    counts = np.zeros(space.n_hoi, dtype=np.int64)
    for img in corpus.images:
        for p in img.pairs:
            for a in p.gt_actions:
                m = space.class_index(a, p.object)
                if m is not None:
                    counts[m] += 1
    rare = tuple(int(m) for m in range(space.n_hoi) if counts[m] < threshold)
    nonrare = tuple(int(m) for m in range(space.n_hoi) if counts[m] >= threshold)
    return ClassFrequencies(
        counts=counts, rare=rare, nonrare=nonrare, threshold=threshold
    )
