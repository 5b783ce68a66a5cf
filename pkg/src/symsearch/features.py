"""Per-image feature extraction.

Four feature families are emitted for every category ``c`` (and every
unordered pair ``c1 < c2``):

    count.c          number of detections of c
    maxscore.c       highest confidence among them, 0 when absent
    areashare.c      c's share of the total box area in the image
    overlap.c1.c2    cross-category pairs with IoU >= the schema threshold
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .detections import Dataset, DetectionRecord
from .errors import FeatureError

log = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.1
KINDS = ("count", "maxscore", "areashare", "overlap")
FEATURE_NAME_RE = re.compile(r"^(count|maxscore|areashare)\.[a-z0-9_]+$|^overlap\.[a-z0-9_]+\.[a-z0-9_]+$")


@dataclass(frozen=True)
class FeatureDef:
    kind: str
    categories: tuple[str, ...]

    @property
    def name(self) -> str:
        return ".".join((self.kind,) + self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    defs: tuple[FeatureDef, ...]
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    categories: tuple[str, ...] = ()
    index: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        names = [d.name for d in self.defs]
        if len(set(names)) != len(names):
            raise FeatureError("duplicate feature names in schema")
        for n in names:
            if not FEATURE_NAME_RE.match(n):
                raise FeatureError(f"feature name {n!r} does not match the feature grammar")
        object.__setattr__(self, "index", {n: i for i, n in enumerate(names)})

    @property
    def feature_names(self) -> list[str]:
        return [d.name for d in self.defs]

    def __len__(self):
        return len(self.defs)

    def __contains__(self, name):
        return name in self.index


def schema_for_categories(categories, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> FeatureSchema:
    if not 0.0 <= iou_threshold <= 1.0:
        raise FeatureError(f"iou_threshold {iou_threshold} outside [0, 1]")
    cats = tuple(sorted(set(categories)))
    defs = [FeatureDef(kind, (c,)) for kind in ("count", "maxscore", "areashare") for c in cats]
    defs += [FeatureDef("overlap", pair) for pair in combinations(cats, 2)]
    return FeatureSchema(tuple(defs), iou_threshold, cats)


def build_schema(dataset: Dataset, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> FeatureSchema:
    if not dataset.category_universe:
        log.warning("dataset has no detections; feature schema is empty")
    return schema_for_categories(dataset.category_universe, iou_threshold)


def iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def extract(record: DetectionRecord, schema: FeatureSchema) -> np.ndarray:
    """Feature vector of one record, parallel to ``schema.feature_names``."""
    by_cat: dict[str, list] = {}
    for d in record.detections:
        by_cat.setdefault(d.category, []).append(d)
    total_area = sum(d.area for d in record.detections)

    out = np.zeros(len(schema), dtype=float)
    for i, fd in enumerate(schema.defs):
        dets = by_cat.get(fd.categories[0], [])
        if fd.kind == "count":
            out[i] = len(dets)
        elif fd.kind == "maxscore":
            out[i] = max((d.score for d in dets), default=0.0)
        elif fd.kind == "areashare":
            out[i] = sum(d.area for d in dets) / total_area if total_area > 0 else 0.0
        elif fd.kind == "overlap":
            other = by_cat.get(fd.categories[1], [])
            out[i] = sum(
                1 for a in dets for b in other if iou(a.bbox, b.bbox) >= schema.iou_threshold
            )
        else:  # pragma: no cover - FeatureSchema validates kinds
            raise FeatureError(f"unknown feature kind {fd.kind!r}")
    return out


def extract_all(dataset: Dataset, schema: FeatureSchema) -> np.ndarray:
    """(n_records, n_features) matrix, rows in record order."""
    if not dataset.records:
        return np.zeros((0, len(schema)))
    return np.vstack([extract(r, schema) for r in dataset.records]) if len(schema) else np.zeros((len(dataset), 0))
