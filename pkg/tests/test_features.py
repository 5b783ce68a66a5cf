import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symsearch.detections import Dataset, Detection, DetectionRecord, load_dataset
from symsearch.errors import FeatureError
from symsearch.features import (
    FeatureDef,
    FeatureSchema,
    build_schema,
    extract,
    extract_all,
    iou,
    schema_for_categories,
)


def rec(*dets, label=1, image_id="x"):
    return DetectionRecord(image_id, label, tuple(Detection(c, tuple(map(float, b)), s) for c, b, s in dets))


def test_schema_two_categories():
    ds = Dataset((rec(("person", (0, 0, 1, 1), 0.9), ("helmet", (0, 0, 1, 1), 0.9)),))
    assert build_schema(ds).feature_names == [
        "count.helmet", "count.person",
        "maxscore.helmet", "maxscore.person",
        "areashare.helmet", "areashare.person",
        "overlap.helmet.person",
    ]


def test_schema_single_category():
    assert schema_for_categories(["person"]).feature_names == ["count.person", "maxscore.person", "areashare.person"]


@pytest.mark.parametrize("k", range(1, 7))
def test_schema_size_closed_form(k):
    cats = [f"c{i}" for i in range(k)]
    schema = schema_for_categories(cats)
    assert len(schema) == 3 * k + k * (k - 1) // 2
    assert len(set(schema.feature_names)) == len(schema)


def test_empty_universe_gives_empty_schema(caplog):
    schema = build_schema(Dataset((rec(),)))
    assert len(schema) == 0
    assert "empty" in caplog.text


def test_schema_rejects_bad_names():
    with pytest.raises(FeatureError):
        FeatureSchema((FeatureDef("count", ("Bad Name",)),))
    with pytest.raises(FeatureError):
        FeatureSchema((FeatureDef("count", ("a",)), FeatureDef("count", ("a",))))


def test_counts_match_detections(helmet_schema):
    r = rec(*[("person", (i, 0, i + 5, 5), 0.8) for i in range(3)], *[("helmet", (0, i, 5, i + 5), 0.7) for i in range(2)])
    v = dict(zip(helmet_schema.feature_names, extract(r, helmet_schema)))
    assert v["count.person"] == 3
    assert v["count.helmet"] == 2
    assert v["count.head"] == 0


def test_empty_record_all_zero(helmet_schema):
    assert not extract(rec(), helmet_schema).any()


def test_maxscore_and_areashare():
    schema = schema_for_categories(["a", "b"])
    r = rec(("a", (0, 0, 10, 10), 0.3), ("a", (50, 50, 60, 60), 0.8), ("b", (0, 0, 20, 10), 0.5))
    v = dict(zip(schema.feature_names, extract(r, schema)))
    assert v["maxscore.a"] == 0.8
    assert v["maxscore.b"] == 0.5
    assert v["areashare.a"] == pytest.approx(200 / 400)
    assert v["areashare.b"] == pytest.approx(200 / 400)


def test_overlap_identical_and_disjoint():
    schema = schema_for_categories(["a", "b"], iou_threshold=0.5)
    same = rec(("a", (0, 0, 1, 1), 0.9), ("b", (0, 0, 1, 1), 0.9))
    apart = rec(("a", (0, 0, 1, 1), 0.9), ("b", (5, 5, 6, 6), 0.9))
    idx = schema.index["overlap.a.b"]
    assert iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0
    assert extract(same, schema)[idx] == 1
    assert extract(apart, schema)[idx] == 0


def test_overlap_threshold_inclusive():
    # IoU of these two boxes is exactly 1/3
    schema = schema_for_categories(["a", "b"], iou_threshold=1 / 3)
    r = rec(("a", (0, 0, 2, 1), 0.9), ("b", (1, 0, 3, 1), 0.9))
    assert extract(r, schema)[schema.index["overlap.a.b"]] == 1


box = st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(1, 50), st.floats(1, 50)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3])
)


@given(box, box)
def test_iou_symmetric(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from("abc"), box, st.floats(0, 1)), max_size=12))
def test_areashare_sums_to_one(dets):
    schema = schema_for_categories(["a", "b", "c"])
    v = dict(zip(schema.feature_names, extract(rec(*dets), schema)))
    total = sum(v[f"areashare.{c}"] for c in "abc")
    if dets:
        assert total == pytest.approx(1.0)
    else:
        assert total == 0
    for name, value in v.items():
        if name.startswith(("maxscore", "areashare")):
            assert 0 <= value <= 1
        else:
            assert value >= 0 and float(value).is_integer()


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from("abc"), box, st.floats(0, 1)), max_size=10), st.sampled_from("abc"), box)
def test_adding_detection_increments_one_count(dets, cat, b):
    schema = schema_for_categories(["a", "b", "c"])
    before = extract(rec(*dets), schema)
    after = extract(rec(*dets, (cat, b, 0.5)), schema)
    for c in "abc":
        i = schema.index[f"count.{c}"]
        assert after[i] - before[i] == (1 if c == cat else 0)


def test_extract_pure(helmet_schema):
    r = rec(("person", (0, 0, 10, 10), 0.9), ("helmet", (2, 2, 8, 8), 0.7))
    assert np.array_equal(extract(r, helmet_schema), extract(r, helmet_schema))


def test_extract_all_shape_and_order(jsonl, random_records):
    ds = load_dataset(jsonl(random_records(40)))
    schema = build_schema(ds)
    X = extract_all(ds, schema)
    assert X.shape == (40, len(schema))
    perm = list(range(40))
    random.Random(1).shuffle(perm)
    shuffled = Dataset(tuple(ds.records[i] for i in perm))
    assert np.array_equal(extract_all(shuffled, schema), X[perm])


def test_extract_all_ignores_unknown_categories():
    schema = schema_for_categories(["a"])
    ds = Dataset((rec(("a", (0, 0, 1, 1), 0.9), ("zebra", (0, 0, 1, 1), 0.9)),))
    assert extract_all(ds, schema)[0, schema.index["count.a"]] == 1


def test_count_totals_match_raw_file(jsonl, random_records):
    path = jsonl(random_records(60, seed=3))
    raw = {}
    for line in open(path):
        for d in json.loads(line)["detections"]:
            if d["score"] >= 0.05:
                raw[d["category"]] = raw.get(d["category"], 0) + 1
    ds = load_dataset(path, 0.05)
    schema = build_schema(ds)
    X = extract_all(ds, schema)
    for cat, n in raw.items():
        assert X[:, schema.index[f"count.{cat}"]].sum() == n
