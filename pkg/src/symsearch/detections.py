"""Loading, validating and splitting labelled detection records.

Records come from a JSON-lines file, one image per line::

    {"image_id": "img_001", "label": 1,
     "detections": [{"category": "person", "bbox": [x1, y1, x2, y2], "score": 0.93}]}

Detections below the score threshold are dropped at load time so every later
stage sees the same filtered view.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DatasetError

DEFAULT_SCORE_THRESHOLD = 0.05
CATEGORY_RE = re.compile(r"^[a-z0-9_]+$")


def normalize_category(raw: str) -> str:
    """Lowercase, trim, and join inner whitespace/hyphens with underscores."""
    return re.sub(r"[\s\-]+", "_", raw.strip().lower())


@dataclass(frozen=True)
class Detection:
    category: str
    bbox: tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        if not self.category or not CATEGORY_RE.match(self.category):
            raise DatasetError(f"invalid category {self.category!r}")
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise DatasetError(f"inverted bbox {list(self.bbox)}")
        if not 0.0 <= self.score <= 1.0:
            raise DatasetError(f"score {self.score} outside [0, 1]")

    @property
    def area(self) -> float:
        x1, y1, x2, y2 = self.bbox
        return (x2 - x1) * (y2 - y1)

    def to_json(self) -> dict:
        return {"category": self.category, "bbox": list(self.bbox), "score": self.score}


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    label: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise DatasetError(f"label {self.label!r} not in {{0, 1}} for {self.image_id!r}")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "label": self.label,
            "detections": [d.to_json() for d in self.detections],
        }


@dataclass(frozen=True)
class Dataset:
    records: tuple[DetectionRecord, ...]
    event_name: str = "event"
    category_universe: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise DatasetError(f"duplicate image_id {r.image_id!r}")
            seen.add(r.image_id)
        cats = sorted({d.category for r in self.records for d in r.detections})
        object.__setattr__(self, "category_universe", tuple(cats))

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> list[int]:
        return [r.label for r in self.records]

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def class_counts(self) -> tuple[int, int]:
        pos = sum(r.label for r in self.records)
        return len(self.records) - pos, pos

    def require_both_classes(self, minimum: int = 1):
        neg, pos = self.class_counts()
        if neg < minimum or pos < minimum:
            raise DatasetError(
                f"need at least {minimum} record(s) of each label, got {neg} negative / {pos} positive"
            )

    def filtered(self, threshold: float) -> "Dataset":
        return Dataset(
            tuple(filter_record(r, threshold) for r in self.records), event_name=self.event_name
        )


@dataclass(frozen=True)
class SplitSpec:
    search_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.search_scale < 1.0:
            raise DatasetError(f"search_scale must lie in (0, 1), got {self.search_scale}")
        if self.seed < 0:
            raise DatasetError("seed must be unsigned")


def filter_record(record: DetectionRecord, threshold: float) -> DetectionRecord:
    kept = tuple(d for d in record.detections if d.score >= threshold)
    return DetectionRecord(record.image_id, record.label, kept)


def _number(value, what, line_no):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise DatasetError(f"line {line_no}: {what} must be a finite number, got {value!r}")
    return float(value)


def parse_record(obj, line_no: int) -> DetectionRecord:
    if not isinstance(obj, dict):
        raise DatasetError(f"line {line_no}: expected a JSON object")
    for key in ("image_id", "label", "detections"):
        if key not in obj:
            raise DatasetError(f"line {line_no}: missing key {key!r}")
    image_id = obj["image_id"]
    if not isinstance(image_id, str) or not image_id:
        raise DatasetError(f"line {line_no}: image_id must be a non-empty string")
    label = obj["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise DatasetError(f"line {line_no}: label {label!r} not in {{0, 1}} for {image_id!r}")
    if not isinstance(obj["detections"], list):
        raise DatasetError(f"line {line_no}: detections must be a list")

    dets = []
    for raw in obj["detections"]:
        if not isinstance(raw, dict) or not {"category", "bbox", "score"} <= raw.keys():
            raise DatasetError(f"line {line_no}: detection needs category, bbox and score")
        if not isinstance(raw["category"], str):
            raise DatasetError(f"line {line_no}: category must be a string")
        category = normalize_category(raw["category"])
        if not category or not CATEGORY_RE.match(category):
            raise DatasetError(f"line {line_no}: invalid category {raw['category']!r}")
        bbox = raw["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise DatasetError(f"line {line_no}: bbox must be [x1, y1, x2, y2]")
        x1, y1, x2, y2 = (_number(v, "bbox coordinate", line_no) for v in bbox)
        if not (x1 < x2 and y1 < y2):
            raise DatasetError(f"line {line_no}: inverted bbox {bbox} in image {image_id!r}")
        score = _number(raw["score"], "score", line_no)
        if not 0.0 <= score <= 1.0:
            raise DatasetError(f"line {line_no}: score {score} outside [0, 1] in image {image_id!r}")
        dets.append(Detection(category, (x1, y1, x2, y2), score))
    return DetectionRecord(image_id, int(label), tuple(dets))


def load_dataset(path, threshold: float = DEFAULT_SCORE_THRESHOLD, event_name: str | None = None) -> Dataset:
    """Read a JSON-lines file, dropping detections scored below ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise DatasetError(f"score threshold {threshold} outside [0, 1]")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc

    records = []
    seen = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
        record = filter_record(parse_record(obj, line_no), threshold)
        if record.image_id in seen:
            raise DatasetError(
                f"line {line_no}: duplicate image_id {record.image_id!r} (first seen on line {seen[record.image_id]})"
            )
        seen[record.image_id] = line_no
        records.append(record)
    return Dataset(tuple(records), event_name=event_name or path.stem)


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset.records:
            fh.write(json.dumps(r.to_json(), sort_keys=False) + "\n")


def _side_count(n: int, fraction: float) -> int:
    k = math.floor(n * fraction + 0.5)
    return min(max(k, 1), n - 1)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Stratified split into (search part, evaluation part).

    Each label's records are shuffled with ``spec.seed`` and the first
    ``round(n * search_scale)`` (at least one, at most n - 1) go to the
    search part. Both parts keep the original record order. For a fixed seed
    the search parts are nested as ``search_scale`` grows.
    """
    dataset.require_both_classes(minimum=2)
    rng = random.Random(spec.seed)
    chosen = set()
    for label in (0, 1):
        idx = [i for i, r in enumerate(dataset.records) if r.label == label]
        rng.shuffle(idx)
        chosen.update(idx[: _side_count(len(idx), spec.search_scale)])
    search = tuple(r for i, r in enumerate(dataset.records) if i in chosen)
    held = tuple(r for i, r in enumerate(dataset.records) if i not in chosen)
    return Dataset(search, dataset.event_name), Dataset(held, dataset.event_name)
