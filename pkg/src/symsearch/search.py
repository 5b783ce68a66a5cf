"""Generational genetic programming over boolean expression trees.

Each generation keeps the best candidate, scores any externally suggested
expressions, breeds offspring from the top-k parents by subtree crossover
and point mutation, removes duplicates and truncates back to the population
size by rank. A guidance hook, when given, is consulted every
``guidance_period`` generations and its expressions are injected.
"""

from __future__ import annotations

import concurrent.futures
import csv
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from .errors import ExprError, SearchError
from .expr import (
    BoolBinary,
    Const,
    check_classifier,
    depth,
    fit_depth,
    is_bool,
    random_bool,
    random_compare,
    random_expr,
    random_num,
    replace_at,
    to_text,
    walk,
)
from .fitness import FitnessConfig, LabeledMatrix, Score, rank, rank_key, score

log = logging.getLogger(__name__)

PROVENANCES = ("seeded", "crossover", "mutation", "llm_suggested", "elite")
IMPROVEMENT_EPS = 1e-6
PERFECT_STREAK = 10
MUTATION_DEPTH = 2
WRAP_PROB = 1 / 3
# attempts per offspring slot to produce an expression not already in the pool
BREED_TRIES = 4


@dataclass(frozen=True)
class SearchConfig:
    population_size: Optional[int] = None
    crossover_factor: float = 0.5
    mutation_factor: float = 0.3
    max_iterations: int = 5000
    top_k_parents: int = 4
    max_depth: int = 6
    convergence_patience: int = 200
    guidance_period: int = 50
    rng_seed: int = 0
    guidance_timeout_s: Optional[float] = None
    offspring_factor: int = 4

    def __post_init__(self):
        if not 0.0 <= self.crossover_factor <= 1.0:
            raise SearchError(f"crossover_factor {self.crossover_factor} outside [0, 1]")
        if not 0.0 <= self.mutation_factor <= 1.0:
            raise SearchError(f"mutation_factor {self.mutation_factor} outside [0, 1]")
        for name in ("max_iterations", "top_k_parents", "max_depth", "convergence_patience", "guidance_period", "offspring_factor"):
            if getattr(self, name) < 1:
                raise SearchError(f"{name} must be a positive integer")
        if self.population_size is not None:
            if self.population_size < 1:
                raise SearchError("population_size must be a positive integer")
            if self.top_k_parents > self.population_size:
                raise SearchError("top_k_parents cannot exceed population_size")
        if self.rng_seed < 0:
            raise SearchError("rng_seed must be unsigned")

    def resolved_population(self, n_categories: int) -> int:
        """Explicit size, else twice the category count with a floor of 8."""
        if self.population_size is not None:
            return self.population_size
        return max(2 * n_categories, 8, self.top_k_parents)


@dataclass
class Candidate:
    expr: object
    score: Optional[Score] = None
    provenance: str = "seeded"
    generation_born: int = 0
    text: str = ""

    def __post_init__(self):
        if not self.text:
            self.text = to_text(self.expr)

    @property
    def fitness(self) -> float:
        return self.score.fitness


@dataclass
class TraceRow:
    generation: int
    best_fitness: float
    best_auroc: float
    best_complexity: int
    injected_count: int
    best_text: str


@dataclass
class SearchState:
    population: list
    generation: int
    best_so_far: Candidate
    rng: random.Random
    population_size: int
    feedback_history: list = field(default_factory=list)
    cache: dict = field(default_factory=dict, repr=False)
    last_improvement: int = 0
    improvement_ref: float = float("-inf")
    perfect_streak: int = 0


@dataclass
class SearchResult:
    best: Candidate
    population: list
    trace: list
    eval_score: Optional[Score]
    generations_run: int
    guidance_calls: int
    feedback_history: list
    stop_reason: str

    def trace_rows(self):
        return [
            (r.generation, r.best_fitness, r.best_auroc, r.best_complexity, r.injected_count)
            for r in self.trace
        ]


TRACE_COLUMNS = ("generation", "best_fitness", "best_auroc", "best_complexity", "injected_count")


def write_trace(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([r.generation, repr(r.best_fitness), repr(r.best_auroc), r.best_complexity, r.injected_count])


# ------------------------------------------------------------------ helpers


def _score(state: SearchState, cand: Candidate, data: LabeledMatrix, fitness: FitnessConfig) -> Candidate:
    s = state.cache.get(cand.text)
    if s is None:
        s = score(cand.expr, data, fitness)
        state.cache[cand.text] = s
    cand.score = s
    return cand


def _names(data: LabeledMatrix):
    return list(data.schema.feature_names)


def crossover(a, b, rng: random.Random, max_depth: int, names):
    """Swap a random subtree of ``a`` for a same-typed random subtree of ``b``."""
    path, node = rng.choice(list(walk(a)))
    want = is_bool(node)
    donors = [n for _, n in walk(b) if is_bool(n) == want]
    child = replace_at(a, path, rng.choice(donors))
    return fit_depth(child, max_depth, rng, names)


def mutate(expr, rng: random.Random, max_depth: int, names):
    """Point mutation at a uniformly chosen node.

    Constants may be nudged by +-1; boolean nodes may be joined with a fresh
    comparison through && or ||; otherwise the node is regrown as a random
    subtree of depth <= 2.
    """
    path, node = rng.choice(list(walk(expr)))
    if isinstance(node, Const) and rng.random() < 0.5:
        new = Const(node.value + rng.choice((-1.0, 1.0)))
    elif is_bool(node) and rng.random() < WRAP_PROB:
        op = rng.choice(("&&", "||"))
        fresh = random_compare(rng, names, 1)
        new = BoolBinary(op, node, fresh) if rng.random() < 0.5 else BoolBinary(op, fresh, node)
    elif is_bool(node):
        new = random_bool(rng, names, MUTATION_DEPTH)
    else:
        new = random_num(rng, names, MUTATION_DEPTH)
    return fit_depth(replace_at(expr, path, new), max_depth, rng, names)


def _breed(parents, rng, config, names):
    if rng.random() < config.crossover_factor:
        p1, p2 = rng.choice(parents), rng.choice(parents)
        if p1.text != p2.text:
            expr, prov = crossover(p1.expr, p2.expr, rng, config.max_depth, names), "crossover"
        else:
            expr, prov = p1.expr, "elite"
    else:
        expr, prov = rng.choice(parents).expr, "elite"
    if rng.random() < config.mutation_factor:
        expr, prov = mutate(expr, rng, config.max_depth, names), "mutation"
    return expr, prov


def _update_best(state: SearchState):
    top = state.population[0]
    if rank_key(top) < rank_key(state.best_so_far):
        state.best_so_far = top
    best = state.best_so_far.score
    if best.fitness >= state.improvement_ref + IMPROVEMENT_EPS:
        state.improvement_ref = best.fitness
        state.last_improvement = state.generation
    state.perfect_streak = state.perfect_streak + 1 if best.loss == 0 else 0


# --------------------------------------------------------------- operations


def initialize(schema, config: SearchConfig, data: LabeledMatrix, fitness: FitnessConfig = FitnessConfig()) -> SearchState:
    """Random, scored, duplicate-free generation 0."""
    if len(schema) == 0:
        raise SearchError("cannot search over an empty feature schema")
    size = config.resolved_population(len(schema.categories))
    if config.top_k_parents > size:
        raise SearchError("top_k_parents cannot exceed population_size")
    rng = random.Random(config.rng_seed)
    state = SearchState([], 0, None, rng, size)
    seen = set()
    attempts = 0
    while len(state.population) < size:
        attempts += 1
        cand = Candidate(random_expr(schema, config.max_depth, rng), provenance="seeded", generation_born=0)
        if cand.text in seen and attempts < 100 * size:
            continue
        seen.add(cand.text)
        state.population.append(_score(state, cand, data, fitness))
    state.population = rank(state.population)
    state.best_so_far = state.population[0]
    _update_best(state)
    return state


def step(
    state: SearchState,
    data: LabeledMatrix,
    config: SearchConfig,
    injected: Sequence = (),
    fitness: FitnessConfig = FitnessConfig(),
) -> SearchState:
    """Advance ``state`` by one generation in place and return it."""
    rng = state.rng
    names = _names(data)
    gen = state.generation + 1
    ranked = state.population
    elite = replace(ranked[0], provenance="elite")
    pool = [elite]

    for expr in injected:
        pool.append(_score(state, Candidate(expr, provenance="llm_suggested", generation_born=gen), data, fitness))

    parents = ranked[: config.top_k_parents]
    seen = {c.text for c in ranked} | {c.text for c in pool}
    for _ in range(config.offspring_factor * state.population_size - 1):
        for _ in range(BREED_TRIES):
            expr, prov = _breed(parents, rng, config, names)
            text = to_text(expr)
            if text not in seen:
                break
        seen.add(text)
        pool.append(_score(state, Candidate(expr, provenance=prov, generation_born=gen, text=text), data, fitness))

    unique = {}
    for cand in pool:
        unique.setdefault(cand.text, cand)
    for cand in ranked:
        if len(unique) >= state.population_size:
            break
        unique.setdefault(cand.text, cand)
    while len(unique) < state.population_size:
        cand = Candidate(random_expr(data.schema, config.max_depth, rng), provenance="seeded", generation_born=gen)
        unique.setdefault(cand.text, _score(state, cand, data, fitness))

    state.population = rank(list(unique.values()))[: state.population_size]
    state.generation = gen
    _update_best(state)
    return state


GuidanceHook = Callable[[Candidate, list], Sequence]


def _call_guidance(hook, best, history, timeout):
    if timeout is None:
        return list(hook(best, list(history)))
    with concurrent.futures.ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(hook, best, list(history))
        try:
            return list(fut.result(timeout=timeout))
        except concurrent.futures.TimeoutError:
            log.warning("guidance call exceeded %.1fs; continuing without suggestions", timeout)
            return []


def _admissible(expr, schema, max_depth):
    try:
        check_classifier(expr, schema)
    except ExprError as exc:
        log.warning("dropping injected expression: %s", exc)
        return False
    if depth(expr) > max_depth:
        log.warning("dropping injected expression deeper than %d: %s", max_depth, to_text(expr))
        return False
    return True


def run(
    data: LabeledMatrix,
    config: SearchConfig,
    guidance: Optional[GuidanceHook] = None,
    *,
    fitness: FitnessConfig = FitnessConfig(),
    eval_data: Optional[LabeledMatrix] = None,
    on_generation: Optional[Callable[[SearchState], None]] = None,
) -> SearchResult:
    """Evolve until the generation budget, stagnation, or a sustained perfect fit.

    ``max_iterations`` counts generations including the initial one.
    """
    if data.n_pos == 0 or data.n_neg == 0:
        raise SearchError("search split must contain both classes")
    schema = data.schema
    state = initialize(schema, config, data, fitness)
    trace = [_row(state, 0)]
    calls = 0
    reason = "budget"

    while state.generation < config.max_iterations - 1:
        injected = []
        consulted = guidance is not None and state.generation % config.guidance_period == 0
        if consulted:
            calls += 1
            try:
                suggested = _call_guidance(guidance, state.best_so_far, state.feedback_history, config.guidance_timeout_s)
            except Exception as exc:  # guidance may degrade, never crash the search
                log.warning("guidance hook failed: %s", exc)
                suggested = []
            injected = [e for e in suggested if _admissible(e, schema, config.max_depth)]

        step(state, data, config, injected, fitness)

        if consulted:
            _record_feedback(state, injected, data, fitness)
        trace.append(_row(state, len(injected)))
        if on_generation is not None:
            on_generation(state)

        if state.perfect_streak > PERFECT_STREAK:
            reason = "perfect"
            break
        if state.generation - state.last_improvement >= config.convergence_patience:
            reason = "stagnation"
            break

    best = state.best_so_far
    eval_score = score(best.expr, eval_data, fitness) if eval_data is not None else None
    return SearchResult(
        best=best,
        population=state.population,
        trace=trace,
        eval_score=eval_score,
        generations_run=state.generation + 1,
        guidance_calls=calls,
        feedback_history=list(state.feedback_history),
        stop_reason=reason,
    )


def _record_feedback(state, injected, data, fitness):
    """One (rule, effectiveness) entry per guidance call; effectiveness = 1 - loss."""
    if injected:
        scored = rank([_score(state, Candidate(e), data, fitness) for e in injected])
        top = scored[0]
    else:
        top = state.best_so_far
    state.feedback_history.append((top.text, 1.0 - top.score.loss))


def _row(state: SearchState, injected_count: int) -> TraceRow:
    b = state.best_so_far
    return TraceRow(state.generation, b.score.fitness, b.score.auroc, b.score.complexity, injected_count, b.text)
