import json

import numpy as np
import pytest

from acp import (
    AnnotationCorpus,
    CandidatePair,
    CorpusFormatError,
    CorpusValidationError,
    ImageRecord,
    LabelSpace,
    action_occurrence_sets,
    class_frequencies,
    load_corpus,
    save_corpus,
)
from acp.corpus import corpus_to_dict

from conftest import TOY_CORPUS_PATH


def two_object_space():
    return LabelSpace(
        actions=("hold", "ride"),
        objects=("bicycle", "boat"),
        hoi_classes=((0, 0), (1, 0), (0, 1), (1, 1)),
    )


def make_pair(obj=0, actions=(0,), feature=(0.0, 0.0)):
    return CandidatePair(
        human_conf=0.9,
        object_conf=0.8,
        object=obj,
        gt_actions=frozenset(actions),
        feature=np.asarray(feature, dtype=np.float64),
    )


def test_load_toy_corpus(toy_corpus):
    assert toy_corpus.label_space.n_actions == 3
    assert toy_corpus.n_images == 4
    assert toy_corpus.label_space.actions == ("hold", "ride", "wash")
    assert toy_corpus.images[0].pairs[0].gt_actions == frozenset({0, 1})


def test_empty_images_is_valid(tmp_path):
    data = {
        "actions": ["hold"],
        "objects": ["bicycle"],
        "hoi_classes": [{"action": 0, "object": 0}],
        "images": [],
    }
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(data))
    corpus = load_corpus(path)
    assert corpus.n_images == 0


def test_out_of_bounds_action_is_validation_error(tmp_path):
    data = json.loads(TOY_CORPUS_PATH.read_text())
    data["images"][1]["pairs"][0]["actions"] = [3]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CorpusValidationError, match="img1"):
        load_corpus(path)


def test_duplicate_hoi_class_rejected(tmp_path):
    data = json.loads(TOY_CORPUS_PATH.read_text())
    data["hoi_classes"].append({"action": 0, "object": 0})
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CorpusValidationError, match="duplicate"):
        load_corpus(path)


def test_format_error_names_field(tmp_path):
    data = json.loads(TOY_CORPUS_PATH.read_text())
    del data["images"][2]["pairs"][0]["feature"]
    path = tmp_path / "malformed.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CorpusFormatError, match=r"images\[2\].pairs\[0\].feature"):
        load_corpus(path)


def test_non_json_file_is_format_error(tmp_path):
    path = tmp_path / "garbage.json"
    path.write_text("not json at all {")
    with pytest.raises(CorpusFormatError):
        load_corpus(path)


def test_round_trip_identity(toy_corpus, tmp_path):
    path = tmp_path / "copy.json"
    save_corpus(toy_corpus, path)
    reloaded = load_corpus(path)
    assert corpus_to_dict(reloaded) == corpus_to_dict(toy_corpus)
    # A second round trip is byte identical.
    path2 = tmp_path / "copy2.json"
    save_corpus(reloaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_occurrence_sets_toy(toy_corpus):
    assert action_occurrence_sets(toy_corpus) == [{0, 1}, {1}, {0, 2}, {2}]


def test_occurrence_sets_absent_object_filter():
    space = two_object_space()
    corpus = AnnotationCorpus(
        label_space=space,
        images=(ImageRecord(id="a", pairs=(make_pair(obj=0),)),),
    )
    assert action_occurrence_sets(corpus, object_filter=1) == []


def test_occurrence_sets_union_over_pairs():
    space = two_object_space()
    corpus = AnnotationCorpus(
        label_space=space,
        images=(
            ImageRecord(
                id="a", pairs=(make_pair(actions=(0,)), make_pair(actions=(1,)))
            ),
        ),
    )
    assert action_occurrence_sets(corpus) == [{0, 1}]


def test_occurrence_sets_match_brute_force(toy_corpus):
    for img, got in zip(toy_corpus.images, action_occurrence_sets(toy_corpus)):
        expected = set()
        for pair in img.pairs:
            for a in pair.gt_actions:
                expected.add(a)
        assert got == expected


def test_class_frequencies_toy(toy_corpus):
    freq = class_frequencies(toy_corpus)
    assert freq.counts.tolist() == [2, 2, 2]
    assert freq.rare == (0, 1, 2)
    assert freq.nonrare == ()


def test_class_frequencies_threshold_zero(toy_corpus):
    freq = class_frequencies(toy_corpus, threshold=0)
    assert freq.rare == ()
    assert freq.nonrare == (0, 1, 2)


def test_unannotated_class_counts_zero():
    space = two_object_space()
    corpus = AnnotationCorpus(
        label_space=space,
        images=(ImageRecord(id="a", pairs=(make_pair(obj=0, actions=(0,)),)),),
    )
    freq = class_frequencies(corpus)
    assert freq.counts.tolist() == [1, 0, 0, 0]
    assert set(freq.rare) == {0, 1, 2, 3}


def test_frequency_total_matches_label_total(toy_corpus):
    freq = class_frequencies(toy_corpus)
    total_labels = sum(
        len(p.gt_actions) for img in toy_corpus.images for p in img.pairs
    )
    assert int(freq.counts.sum()) == total_labels
