"""Seeded synthetic long-tailed corpora with planted co-occurrence structure.

Latent scenarios play the role of real-world activity contexts: each
scenario owns a set of compatible actions, one of which (the core) is
present in every image of that scenario while the rest appear at random.
Actions sharing no scenario can therefore never co-occur, giving exact
planted exclusions, and actions unique to one scenario always co-occur
with its core, giving planted prerequisites.  Scenario frequencies follow
a Zipf law so that many interaction classes end up with few positives.

Features are sums of per-action prototype vectors plus Gaussian noise; a
label drop rate simulates annotations that miss actions actually present.
Dropped labels do not change the feature, so the signal survives while
the supervision thins out, which is the regime co-occurrence priors are
meant to help with.

Generation is a pure function of the config: every image draws from its
own counter-based random stream keyed by (seed, image index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .cooc import build_cooc
from .corpus import (
    AnnotationCorpus,
    CandidatePair,
    ImageRecord,
    LabelSpace,
    action_occurrence_sets,
)
from .errors import ContractError
from .rng import STREAM_SETUP, make_rng

CONF_LOW = 0.6  # detection confidences are drawn from [CONF_LOW, 1]
INCLUDE_PROB = 0.75  # chance a non-core scenario action appears in an image
OBJECT_AFFINITY = 0.7  # chance an image uses its scenario's own object
EXTRA_MEMBER_PROB = 0.5  # chance a scenario borrows one outside action


@dataclass(frozen=True)
class SynthConfig:
    n_actions: int = 20
    n_objects: int = 4
    n_scenarios: int = 8
    images: int = 2000
    zipf_exponent: float = 1.2
    feature_dim: int = 32
    noise_sigma: float = 0.25
    label_drop_rate: float = 0.2
    seed: int = 0
    uniform_scenarios: bool = False
    id_prefix: str = "img"

    def validate(self) -> None:
        counts = {
            "n_actions": self.n_actions,
            "n_objects": self.n_objects,
            "n_scenarios": self.n_scenarios,
            "images": self.images,
            "feature_dim": self.feature_dim,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ContractError(f"{name} must be positive, got {value}",
                                    module="synth")
        if self.n_scenarios > self.n_actions:
            raise ContractError(
                "need at least one action per scenario "
                f"({self.n_scenarios} scenarios, {self.n_actions} actions)",
                module="synth",
            )
        if self.zipf_exponent <= 0:
            raise ContractError(
                f"zipf_exponent must be positive, got {self.zipf_exponent}; "
                "set uniform_scenarios for a balanced corpus",
                module="synth",
            )
        if not (0.0 <= self.label_drop_rate < 1.0):
            raise ContractError(
                f"label_drop_rate must be in [0, 1), got {self.label_drop_rate}",
                module="synth",
            )
        if self.noise_sigma < 0:
            raise ContractError(
                f"noise_sigma must be nonnegative, got {self.noise_sigma}",
                module="synth",
            )


@dataclass(frozen=True)
class PlantedStructure:
    """The latent structure a generated corpus was sampled from."""

    config: SynthConfig
    scenarios: tuple[tuple[int, ...], ...]
    cores: tuple[int, ...]
    scenario_objects: tuple[int, ...]
    prototypes: np.ndarray
    exclusion_pairs: tuple[tuple[int, int], ...]
    prerequisite_pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PlantedReport:
    """Agreement between planted structure and empirical statistics."""

    exclusions_ok: bool
    exclusion_violations: tuple[tuple[int, int], ...]
    cooccurrence_ok: bool
    cooccurrence_violations: tuple[tuple[int, int], ...]
    prerequisites_checked: bool
    prerequisites_ok: bool
    prerequisite_violations: tuple[tuple[int, int], ...]


def full_label_space(n_actions: int, n_objects: int) -> LabelSpace:
    """Every (action, object) combination as an interaction class."""
    return LabelSpace(
        actions=tuple(f"act{a:02d}" for a in range(n_actions)),
        objects=tuple(f"obj{o}" for o in range(n_objects)),
        hoi_classes=tuple(
            (a, o) for a in range(n_actions) for o in range(n_objects)
        ),
    )


def _build_scenarios(cfg: SynthConfig, rng: np.random.Generator):
    """Round-robin base partition plus occasional borrowed members."""
    base: list[list[int]] = [[] for _ in range(cfg.n_scenarios)]
    for a in range(cfg.n_actions):
        base[a % cfg.n_scenarios].append(a)
    scenarios: list[tuple[int, ...]] = []
    for s, members in enumerate(base):
        extra: list[int] = []
        if rng.random() < EXTRA_MEMBER_PROB:
            outside = [a for a in range(cfg.n_actions) if a not in members]
            if outside:
                extra = [int(rng.choice(outside))]
        scenarios.append(tuple(sorted(members + extra)))
    cores = tuple(min(members) for members in base)
    return scenarios, cores


def _derive_pairs(scenarios, cores, n_actions):
    shared = np.zeros((n_actions, n_actions), dtype=bool)
    for members in scenarios:
        for i in members:
            for j in members:
                shared[i, j] = True
    exclusions = tuple(
        (i, j)
        for i in range(n_actions)
        for j in range(n_actions)
        if i != j and not shared[i, j]
    )
    scenario_count = np.zeros(n_actions, dtype=np.int64)
    home = {}
    for s, members in enumerate(scenarios):
        for a in members:
            scenario_count[a] += 1
            home[a] = s
    prerequisites = tuple(
        (a, cores[home[a]])
        for a in range(n_actions)
        if scenario_count[a] == 1 and a != cores[home[a]]
    )
    return exclusions, prerequisites


def _scenario_weights(cfg: SynthConfig) -> np.ndarray:
    if cfg.uniform_scenarios:
        w = np.ones(cfg.n_scenarios)
    else:
        w = (np.arange(1, cfg.n_scenarios + 1, dtype=np.float64)
             ** -cfg.zipf_exponent)
    return w / w.sum()


def generate(cfg: SynthConfig) -> tuple[AnnotationCorpus, PlantedStructure]:
    """Sample a corpus and return it with its planted structure."""
    cfg.validate()
    setup = make_rng(cfg.seed, STREAM_SETUP)
    scenarios, cores = _build_scenarios(cfg, setup)
    scenario_objects = tuple(s % cfg.n_objects for s in range(cfg.n_scenarios))
    prototypes = setup.normal(size=(cfg.n_actions, cfg.feature_dim))
    exclusions, prerequisites = _derive_pairs(scenarios, cores, cfg.n_actions)
    weights = _scenario_weights(cfg)
    cum = np.cumsum(weights)

    space = full_label_space(cfg.n_actions, cfg.n_objects)
    images: list[ImageRecord] = []
    for k in range(cfg.images):
        rng = make_rng(cfg.seed, k)
        s = int(min(np.searchsorted(cum, rng.random(), side="right"),
                    cfg.n_scenarios - 1))
        if rng.random() < OBJECT_AFFINITY:
            obj = scenario_objects[s]
        else:
            obj = int(rng.integers(cfg.n_objects))
        true_actions = {cores[s]}
        for a in scenarios[s]:
            if a != cores[s] and rng.random() < INCLUDE_PROB:
                true_actions.add(a)
        feature = prototypes[sorted(true_actions)].sum(axis=0)
        feature = feature + cfg.noise_sigma * rng.normal(size=cfg.feature_dim)
        h_conf = CONF_LOW + (1.0 - CONF_LOW) * rng.random()
        o_conf = CONF_LOW + (1.0 - CONF_LOW) * rng.random()
        labels = frozenset(
            a for a in sorted(true_actions) if rng.random() >= cfg.label_drop_rate
        )
        pair = CandidatePair(
            human_conf=float(h_conf),
            object_conf=float(o_conf),
            object=obj,
            gt_actions=labels,
            feature=feature,
        )
        images.append(ImageRecord(id=f"{cfg.id_prefix}{k:05d}", pairs=(pair,)))

    corpus = AnnotationCorpus(label_space=space, images=tuple(images))
    planted = PlantedStructure(
        config=cfg,
        scenarios=tuple(scenarios),
        cores=cores,
        scenario_objects=scenario_objects,
        prototypes=prototypes,
        exclusion_pairs=exclusions,
        prerequisite_pairs=prerequisites,
    )
    return corpus, planted


def planted_vs_empirical(
    corpus: AnnotationCorpus, planted: PlantedStructure
) -> PlantedReport:
    """Check the empirical matrices against the planted structure.

    Planted exclusions must have exactly zero joint counts regardless of
    label dropping.  Action pairs observed together at least once must
    have positive conditional entries.  Prerequisite rows are checked only
    on corpora generated without label dropping, since a dropped core
    label breaks the always-present guarantee in the annotations.
    """
    n = corpus.label_space.n_actions
    sets = action_occurrence_sets(corpus)
    pair = build_cooc(sets, n)
    joint = np.zeros((n, n), dtype=np.int64)
    for occ in sets:
        occ_list = sorted(occ)
        for i in occ_list:
            for j in occ_list:
                joint[i, j] += 1

    excl_bad = tuple((i, j) for i, j in planted.exclusion_pairs if joint[i, j] > 0)
    cooc_bad = tuple(
        (i, j)
        for i in range(n)
        for j in range(n)
        if i != j and joint[i, j] > 0 and not pair.c[i, j] > 0.0
    )
    check_prereq = planted.config.label_drop_rate == 0.0
    prereq_bad: tuple[tuple[int, int], ...] = ()
    if check_prereq:
        prereq_bad = tuple(
            (b, a)
            for b, a in planted.prerequisite_pairs
            if pair.row_valid[b] and pair.c[b, a] != 1.0
        )
    return PlantedReport(
        exclusions_ok=not excl_bad,
        exclusion_violations=excl_bad,
        cooccurrence_ok=not cooc_bad,
        cooccurrence_violations=cooc_bad,
        prerequisites_checked=check_prereq,
        prerequisites_ok=not prereq_bad,
        prerequisite_violations=prereq_bad,
    )


def planted_to_dict(planted: PlantedStructure) -> dict:
    return {
        "config": asdict(planted.config),
        "scenarios": [list(s) for s in planted.scenarios],
        "cores": list(planted.cores),
        "scenario_objects": list(planted.scenario_objects),
        "prototypes": [[float(v) for v in row] for row in planted.prototypes],
        "exclusion_pairs": [list(p) for p in planted.exclusion_pairs],
        "prerequisite_pairs": [list(p) for p in planted.prerequisite_pairs],
    }


def save_planted(planted: PlantedStructure, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(planted_to_dict(planted), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
