import json
import random

import pytest
from hypothesis import strategies as st

from symsearch.expr import (
    BOOL_OPS,
    NUM_OPS,
    RELATIONS,
    BoolBinary,
    Compare,
    Const,
    Feature,
    NumBinary,
    Not,
)
from symsearch.features import schema_for_categories

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def det(category, bbox, score=0.9):
    return {"category": category, "bbox": list(bbox), "score": score}


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path


def boxes(n, rng, category):
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, 800), rng.uniform(0, 800)
        out.append(det(category, (x, y, x + rng.uniform(10, 150), y + rng.uniform(10, 150)), rng.uniform(0.1, 1)))
    return out


@pytest.fixture
def helmet_schema():
    return schema_for_categories(["head", "helmet", "person"])


@pytest.fixture
def jsonl(tmp_path):
    def _write(records, name="data.jsonl"):
        return write_jsonl(tmp_path / name, records)

    return _write


@pytest.fixture
def random_records():
    def _make(n, categories=("person", "helmet", "head"), seed=0, max_count=4):
        rng = random.Random(seed)
        recs = []
        for i in range(n):
            dets = []
            for c in categories:
                dets += boxes(rng.randint(0, max_count), rng, c)
            recs.append({"image_id": f"r{i}", "label": i % 2, "detections": dets})
        return recs

    return _make


FEATURES = ["count.a", "count.b", "maxscore.a", "overlap.a.b"]
ab_schema = schema_for_categories(["a", "b"])

consts = st.sampled_from([0.0, 1.0, 2.0, 3.0, 5.0, 0.5, -1.0, 4.0, 1.5, 0.25])
num_leaf = st.one_of(st.builds(Feature, st.sampled_from(FEATURES)), st.builds(Const, consts))


def _num_branch(children):
    return st.builds(NumBinary, st.sampled_from(NUM_OPS), children, children)


num_trees = st.recursive(num_leaf, _num_branch, max_leaves=6)
compares = st.builds(Compare, st.sampled_from(RELATIONS), num_trees, num_trees)


def _bool_branch(children):
    return st.one_of(
        st.builds(BoolBinary, st.sampled_from(BOOL_OPS), children, children),
        st.builds(Not, children),
    )


bool_trees = st.recursive(compares, _bool_branch, max_leaves=5)
