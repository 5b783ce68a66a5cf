"""End-to-end orchestration: configuration, synthetic data, pipeline runs, reports."""

from __future__ import annotations

import dataclasses
import json
import logging
import random
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .detections import (
    DEFAULT_SCORE_THRESHOLD,
    Dataset,
    Detection,
    DetectionRecord,
    SplitSpec,
    load_dataset,
    split,
)
from .errors import HarnessError, SymSearchError, UnknownFeatureError
from .expr import evaluate, evaluate_batch, features_used, parse, parse_any, to_text
from .features import DEFAULT_IOU_THRESHOLD, build_schema, extract, extract_all, schema_for_categories
from .fitness import DEFAULT_LAMBDA, FitnessConfig, LabeledMatrix, score
from .guidance import (
    DEFAULT_COT_STEPS,
    DEFAULT_MAX_SUGGESTIONS,
    Guide,
    HttpProvider,
    MockProvider,
    RunLog,
    context_for,
    load_cot_template,
)
from .search import SearchConfig, run, write_trace

log = logging.getLogger(__name__)

CANVAS = 1000.0
BOX_MIN, BOX_MAX = 20.0, 200.0
SCORE_MIN, SCORE_MAX = 0.3, 1.0
MAX_ATTEMPTS = 10_000


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    """Every CLI flag in one place; serialises to flat ``key=value`` lines."""

    input: Optional[str] = None
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    search_scale: float = 0.5
    seed: int = 0
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    lam: float = DEFAULT_LAMBDA
    population: Optional[int] = None
    crossover: float = 0.5
    mutation: float = 0.3
    iterations: int = 5000
    top_k: int = 4
    max_depth: int = 6
    patience: int = 200
    guidance_period: int = 50
    llm_mode: str = "off"
    llm_endpoint: Optional[str] = None
    llm_model: Optional[str] = None
    max_suggestions: int = DEFAULT_MAX_SUGGESTIONS
    llm_timeout_s: float = 30.0
    cot_template: Optional[str] = None
    event: Optional[str] = None
    scene: Optional[str] = None
    report: Optional[str] = None
    trace: Optional[str] = None
    run_log: Optional[str] = None

    # config keys are the CLI flag names; "lambda" is a Python keyword
    _KEY_ALIASES = {"lam": "lambda"}

    def __post_init__(self):
        if self.llm_mode not in ("off", "mock", "http"):
            raise HarnessError(f"llm_mode must be off, mock or http, got {self.llm_mode!r}")

    @classmethod
    def key_for(cls, attr: str) -> str:
        return cls._KEY_ALIASES.get(attr, attr).replace("_", "-")

    @classmethod
    def attr_for(cls, key: str) -> str:
        attr = key.strip().replace("-", "_")
        return {v: k for k, v in cls._KEY_ALIASES.items()}.get(attr, attr)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            text = "" if value is None else (repr(value) if isinstance(value, float) else str(value))
            lines.append(f"{self.key_for(f.name)}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: Optional["RunConfig"] = None) -> "RunConfig":
        values = dataclasses.asdict(base) if base is not None else {}
        values.update(parse_config_text(text))
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_file(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def snapshot(self) -> dict:
        return {self.key_for(k): v for k, v in dataclasses.asdict(self).items()}

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            population_size=self.population,
            crossover_factor=self.crossover,
            mutation_factor=self.mutation,
            max_iterations=self.iterations,
            top_k_parents=self.top_k,
            max_depth=self.max_depth,
            convergence_patience=self.patience,
            guidance_period=self.guidance_period,
            rng_seed=self.seed,
        )

    def fitness_config(self) -> FitnessConfig:
        return FitnessConfig(lam=self.lam)


_FIELD_TYPES = {
    "input": str, "score_threshold": float, "search_scale": float, "seed": int,
    "iou_threshold": float, "lam": float, "population": int, "crossover": float,
    "mutation": float, "iterations": int, "top_k": int, "max_depth": int, "patience": int,
    "guidance_period": int, "llm_mode": str, "llm_endpoint": str, "llm_model": str,
    "max_suggestions": int, "llm_timeout_s": float, "cot_template": str, "event": str,
    "scene": str, "report": str, "trace": str, "run_log": str,
}


_OPTIONAL = {f.name for f in fields(RunConfig) if f.default is None}


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise HarnessError(f"config line {n}: expected key=value")
        key, value = line.split("=", 1)
        attr = RunConfig.attr_for(key)
        if attr not in _FIELD_TYPES:
            raise HarnessError(f"config line {n}: unknown key {key.strip()!r}")
        value = value.strip()
        if value == "":
            if attr not in _OPTIONAL:
                raise HarnessError(f"config line {n}: {key.strip()!r} needs a value")
            out[attr] = None
            continue
        try:
            out[attr] = _FIELD_TYPES[attr](value)
        except ValueError:
            raise HarnessError(f"config line {n}: bad value {value!r} for {key.strip()!r}") from None
    return out


# --------------------------------------------------------- synthetic data


@dataclass
class PlantedSpec:
    categories: list
    rule_text: str
    n_pos: int = 500
    n_neg: int = 500
    label_noise: float = 0.0
    # category -> (spurious rate, miss rate); a bare float applies to every category
    detection_noise: object = 0.0
    seed: int = 0
    max_count: int = 4
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    event_name: str = "planted"

    def __post_init__(self):
        if self.n_pos < 1 or self.n_neg < 1:
            raise HarnessError("n_pos and n_neg must be positive")
        if not 0.0 <= self.label_noise < 0.5:
            raise HarnessError("label_noise must lie in [0, 0.5)")
        if self.max_count < 0:
            raise HarnessError("max_count must be >= 0")

    def schema(self):
        return schema_for_categories(self.categories, self.iou_threshold)

    def rule(self):
        return parse(self.rule_text, self.schema())

    def noise_rates(self) -> dict:
        if isinstance(self.detection_noise, (int, float)):
            r = float(self.detection_noise)
            return {c: (r, r) for c in self.categories}
        return {c: tuple(self.detection_noise.get(c, (0.0, 0.0))) for c in self.categories}


def _random_detection(rng: random.Random, category: str) -> Detection:
    w = rng.uniform(BOX_MIN, BOX_MAX)
    h = rng.uniform(BOX_MIN, BOX_MAX)
    x1 = rng.uniform(0.0, CANVAS - w)
    y1 = rng.uniform(0.0, CANVAS - h)
    bbox = (round(x1, 1), round(y1, 1), round(x1 + w, 1), round(y1 + h, 1))
    return Detection(category, bbox, round(rng.uniform(SCORE_MIN, SCORE_MAX), 4))


def _sample_scene(rng, categories, max_count):
    dets = []
    for c in categories:
        dets.extend(_random_detection(rng, c) for _ in range(rng.randint(0, max_count)))
    return tuple(dets)


def generate_planted(spec: PlantedSpec) -> Dataset:
    """Synthetic records whose clean labels are decided by ``spec.rule_text``.

    Per record: a target label is drawn, scenes are sampled until the rule
    agrees with it, then label noise flips labels and detection noise adds
    or removes boxes.
    """
    schema = spec.schema()
    rule = spec.rule()
    rng = random.Random(spec.seed)
    labels = [1] * spec.n_pos + [0] * spec.n_neg
    rng.shuffle(labels)
    noise = spec.noise_rates()
    width = len(str(len(labels)))

    records = []
    for i, label in enumerate(labels):
        for _ in range(MAX_ATTEMPTS):
            dets = _sample_scene(rng, spec.categories, spec.max_count)
            rec = DetectionRecord(f"img_{i:0{width}d}", label, dets)
            if int(evaluate(rule, extract(rec, schema), schema)) == label:
                break
        else:
            raise HarnessError(
                f"rule {spec.rule_text!r} could not produce label {label} in {MAX_ATTEMPTS} attempts"
            )
        if rng.random() < spec.label_noise:
            label = 1 - label
        kept = []
        for d in dets:
            if rng.random() >= noise[d.category][1]:
                kept.append(d)
        for c in spec.categories:
            if rng.random() < noise[c][0]:
                kept.append(_random_detection(rng, c))
        records.append(DetectionRecord(rec.image_id, label, tuple(kept)))
    return Dataset(tuple(records), event_name=spec.event_name)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    best_rule: str
    search_metrics: Optional[dict]
    eval_metrics: dict
    generations_run: int
    guidance_calls: int
    wall_time: float
    config: dict
    seed: int
    n_search: int = 0
    n_eval: int = 0
    stop_reason: str = ""
    predictions: list = field(default_factory=list, repr=False)
    result: object = field(default=None, repr=False, compare=False)

    def to_json(self, include_wall_time: bool = True) -> dict:
        d = {
            "best_rule": self.best_rule,
            "search_metrics": self.search_metrics,
            "eval_metrics": self.eval_metrics,
            "generations_run": self.generations_run,
            "guidance_calls": self.guidance_calls,
            "stop_reason": self.stop_reason,
            "n_search": self.n_search,
            "n_eval": self.n_eval,
            "seed": self.seed,
            "config": self.config,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def summary(self) -> str:
        lines = [f"rule: {self.best_rule}"]
        if self.search_metrics is not None:
            m = self.search_metrics
            lines.append(
                f"search split ({self.n_search} records): auroc={m['auroc']:.4f} loss={m['loss']:.4f} "
                f"fitness={m['fitness']:.4f} complexity={m['complexity']}"
            )
        m = self.eval_metrics
        lines.append(
            f"eval split ({self.n_eval} records): auroc={m['auroc']:.4f} loss={m['loss']:.4f} "
            f"complexity={m['complexity']}"
        )
        if self.generations_run:
            lines.append(
                f"generations: {self.generations_run} ({self.stop_reason}), guidance calls: {self.guidance_calls}"
            )
        lines.append(f"wall time: {self.wall_time:.2f}s, seed: {self.seed}")
        return "\n".join(lines) + "\n"


def _metrics(s) -> dict:
    return {"auroc": s.auroc, "loss": s.loss, "fitness": s.fitness, "complexity": s.complexity,
            "tpr": s.tpr, "tnr": s.tnr}


def matrix_for(dataset: Dataset, schema) -> LabeledMatrix:
    return LabeledMatrix(extract_all(dataset, schema), dataset.labels, schema, tuple(dataset.image_ids))


def make_guide(config: RunConfig, search_data: LabeledMatrix, scene: str, run_log: RunLog):
    if config.llm_mode == "off":
        return None
    schema = search_data.schema
    if config.llm_mode == "mock":
        provider = MockProvider(search_data, config.max_suggestions)
    else:
        provider = HttpProvider(config.llm_endpoint, config.llm_model or "", timeout_s=config.llm_timeout_s)
    steps = load_cot_template(config.cot_template) if config.cot_template else DEFAULT_COT_STEPS
    ctx = context_for(schema, scene, cot_steps=steps, max_suggestions=config.max_suggestions)
    return Guide(provider, ctx, schema, run_log)


def _artifact_paths(config: RunConfig):
    trace = config.trace
    summary = None
    if config.report:
        stem = Path(config.report).with_suffix("")
        trace = trace or f"{stem}.trace.csv"
        summary = f"{stem}.txt"
    return trace, summary


def run_pipeline(config: RunConfig, guide=None) -> EvalReport:
    """load -> split -> schema -> extract -> search -> score on the held-out split.

    ``guide`` overrides the hook derived from ``config.llm_mode``.
    """
    if not config.input:
        raise HarnessError("no input dataset given")
    t0 = time.perf_counter()
    dataset = load_dataset(config.input, config.score_threshold, config.event)
    dataset.require_both_classes(minimum=2)
    search_ds, eval_ds = split(dataset, SplitSpec(config.search_scale, config.seed))
    overlap = set(search_ds.image_ids) & set(eval_ds.image_ids)
    if overlap:  # pragma: no cover - split guarantees disjointness
        raise HarnessError(f"search and eval splits share {len(overlap)} records")

    schema = build_schema(dataset, config.iou_threshold)
    search_data = matrix_for(search_ds, schema)
    eval_data = matrix_for(eval_ds, schema)

    run_log = RunLog(config.run_log)
    scene = config.scene or f"Images that may show the event '{dataset.event_name}'."
    if guide is None:
        guide = make_guide(config, search_data, scene, run_log)

    result = run(search_data, config.search_config(), guide, fitness=config.fitness_config(), eval_data=eval_data)
    report = EvalReport(
        best_rule=result.best.text,
        search_metrics=_metrics(result.best.score),
        eval_metrics=_metrics(result.eval_score),
        generations_run=result.generations_run,
        guidance_calls=result.guidance_calls,
        wall_time=time.perf_counter() - t0,
        config=config.snapshot(),
        seed=config.seed,
        n_search=len(search_ds),
        n_eval=len(eval_ds),
        stop_reason=result.stop_reason,
        result=result,
    )
    trace_path, summary_path = _artifact_paths(config)
    if config.report:
        report.write(config.report)
        Path(summary_path).write_text(report.summary(), encoding="utf-8")
    if trace_path:
        write_trace(result.trace, trace_path)
    return report


def read_rule(rule_file) -> str:
    for line in Path(rule_file).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            return line.strip()
    raise HarnessError(f"no rule found in {rule_file}")


def evaluate_rule(rule_file, dataset_path, config: RunConfig) -> EvalReport:
    """Apply the first rule in ``rule_file`` to every record of a dataset."""
    t0 = time.perf_counter()
    dataset = load_dataset(dataset_path, config.score_threshold, config.event)
    schema = build_schema(dataset, config.iou_threshold)
    text = read_rule(rule_file)
    expr = parse_any(text)
    missing = sorted(features_used(expr) - set(schema.feature_names))
    if missing:
        raise UnknownFeatureError(missing[0], missing)
    expr = parse(text, schema)
    data = matrix_for(dataset, schema)
    s = score(expr, data, config.fitness_config())
    preds = evaluate_batch(expr, data.X, schema)
    report = EvalReport(
        best_rule=to_text(expr),
        search_metrics=None,
        eval_metrics=_metrics(s),
        generations_run=0,
        guidance_calls=0,
        wall_time=time.perf_counter() - t0,
        config=config.snapshot(),
        seed=config.seed,
        n_eval=len(dataset),
        predictions=[int(p) for p in preds],
    )
    if config.report:
        report.write(config.report)
    return report


__all__ = [
    "RunConfig", "PlantedSpec", "EvalReport", "generate_planted", "run_pipeline",
    "evaluate_rule", "matrix_for", "SymSearchError",
]
