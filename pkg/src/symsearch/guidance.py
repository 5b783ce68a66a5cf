"""LLM suggestion loop: prompt construction, providers, reply parsing.

A provider is anything with ``complete(prompt: str) -> str``. Two ship here:
``HttpProvider`` talks to a chat-completion style endpoint, ``MockProvider``
answers deterministically from the data so the loop can run offline.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Optional, Protocol

import httpx

from .errors import ExprError, ExprSyntaxError, ExprTypeError, GuidanceError, UnknownFeatureError
from .expr import CONST_POOL, Compare, Const, Feature, evaluate_batch, parse, to_text
from .fitness import LabeledMatrix, rates

log = logging.getLogger(__name__)

API_KEY_ENV = "SYMSEARCH_LLM_KEY"
DEFAULT_MAX_SUGGESTIONS = 8
DEFAULT_TIMEOUT_S = 30.0

DEFAULT_COT_STEPS = (
    "Identify which detected entities are relevant to the event and which are distractors.",
    "Hypothesize relations between those entities (counts, co-occurrence, overlap, confidence) that separate event images from normal ones.",
    "Express each hypothesis as comparisons over the available features, combined with &&, || and !.",
    "Simplify: prefer the shortest expression that still captures the hypothesis.",
)

NO_FEEDBACK_MARKER = "No prior attempts."


@dataclass(frozen=True)
class PromptContext:
    scene: str
    entities: tuple[str, ...]
    constraints: tuple[str, ...] = ()
    cot_steps: tuple[str, ...] = DEFAULT_COT_STEPS
    feedback: tuple[tuple[str, float], ...] = ()
    feature_names: tuple[str, ...] = ()
    max_suggestions: int = DEFAULT_MAX_SUGGESTIONS

    def with_feedback(self, feedback) -> "PromptContext":
        return PromptContext(
            self.scene, self.entities, self.constraints, self.cot_steps,
            tuple((str(r), float(a)) for r, a in feedback), self.feature_names, self.max_suggestions,
        )


@dataclass
class SuggestionBatch:
    raw_reply: str = ""
    parsed: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    error: Optional[str] = None


class Provider(Protocol):
    def complete(self, prompt: str) -> str: ...


def load_cot_template(path) -> tuple[str, ...]:
    """Reasoning steps from a text file: one step per non-blank line, '#' comments skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    steps = tuple(l.strip() for l in lines if l.strip() and not l.lstrip().startswith("#"))
    if not steps:
        raise GuidanceError(f"no reasoning steps in {path}")
    return steps


def context_for(schema, scene: str, constraints=(), cot_steps=DEFAULT_COT_STEPS,
                max_suggestions: int = DEFAULT_MAX_SUGGESTIONS) -> PromptContext:
    return PromptContext(
        scene=scene,
        entities=tuple(schema.categories),
        constraints=tuple(constraints),
        cot_steps=tuple(cot_steps),
        feature_names=tuple(schema.feature_names),
        max_suggestions=max_suggestions,
    )


def build_prompt(context: PromptContext, best_rule) -> str:
    out = []
    out.append("## 1. Scene context")
    out.append(f"Scene: {context.scene}")
    out.append("Entities: " + ", ".join(context.entities))
    if context.constraints:
        out.append("Constraints:")
        out.extend(f"- {c}" for c in context.constraints)
    else:
        out.append("Constraints: none stated.")
    out.append("")
    out.append("## 2. Reasoning steps")
    out.extend(f"Step {i}: {s}" for i, s in enumerate(context.cot_steps, start=1))
    out.append("")
    out.append("## 3. Feedback on previous rules")
    if context.feedback:
        out.append("| # | rule | effectiveness |")
        out.append("|---|------|---------------|")
        out.extend(f"| {i} | {r} | {a:.4f} |" for i, (r, a) in enumerate(context.feedback, start=1))
    else:
        out.append(NO_FEEDBACK_MARKER)
    out.append("")
    out.append("## Current best rule")
    out.append(to_text(best_rule))
    out.append("")
    out.append("## Task")
    if context.feature_names:
        out.append("Available features: " + ", ".join(context.feature_names))
    out.append(
        "Operators: + - * / max(a, b) min(a, b); comparisons > >= < <= ==; logic && || !. "
        "Numbers are plain decimals."
    )
    out.append(
        f"Reply with up to {context.max_suggestions} candidate rules that could beat the current best, "
        "one expression per line, inside a single ``` fenced block. No commentary inside the block."
    )
    return "\n".join(out) + "\n"


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_START_RE = re.compile(r"^(\(|!|max\(|min\(|-?\d|\.\d|(count|maxscore|areashare|overlap)\.)")
_BULLET_RE = re.compile(r"^(?:[-*]\s+|\d+[.)]\s+)")


def _candidate_lines(raw: str) -> list[str]:
    m = _FENCE_RE.search(raw)
    if m:
        lines = [l.strip() for l in m.group(1).splitlines()]
        return [_BULLET_RE.sub("", l, count=1) for l in lines if l and not l.startswith("#")]
    lines = []
    for line in raw.splitlines():
        line = _BULLET_RE.sub("", line.strip(), count=1)
        if line and _START_RE.match(line):
            lines.append(line)
    return lines


def _reason(exc: ExprError) -> str:
    if isinstance(exc, UnknownFeatureError):
        return f"unknown feature: {exc.name}"
    if isinstance(exc, ExprSyntaxError):
        return f"syntax error: {exc}"
    if isinstance(exc, ExprTypeError):
        return f"type error: {exc}"
    return f"invalid: {exc}"


def parse_suggestions(raw_reply: str, schema, max_suggestions: int = DEFAULT_MAX_SUGGESTIONS) -> SuggestionBatch:
    """Turn a free-text reply into expressions. Never raises."""
    batch = SuggestionBatch(raw_reply=raw_reply or "")
    seen = set()
    for line in _candidate_lines(batch.raw_reply):
        try:
            expr = parse(line, schema)
        except ExprError as exc:
            batch.rejected.append((line, _reason(exc)))
            continue
        except RecursionError:
            batch.rejected.append((line, "invalid: expression nested too deeply"))
            continue
        text = to_text(expr)
        if text in seen:
            batch.rejected.append((line, "duplicate of an earlier suggestion"))
        elif len(batch.parsed) >= max_suggestions:
            batch.rejected.append((line, f"over the limit of {max_suggestions} suggestions"))
        else:
            seen.add(text)
            batch.parsed.append(expr)
    return batch


class RunLog:
    """Append-only JSON-lines audit log of prompts, replies and failures."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def write(self, kind: str, **payload):
        entry = {"seq": len(self.entries), "kind": kind, **payload}
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry) + "\n")

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.entries if e["kind"] == kind]


def suggest(provider: Provider, context: PromptContext, best_rule, schema, run_log: Optional[RunLog] = None) -> SuggestionBatch:
    """Prompt, ask, parse. Provider failures yield an empty batch, logged."""
    run_log = run_log if run_log is not None else RunLog()
    prompt = build_prompt(context, best_rule)
    run_log.write("prompt", prompt=prompt)
    try:
        raw = provider.complete(prompt)
        if not isinstance(raw, str):
            raise GuidanceError(f"provider returned {type(raw).__name__}, expected str")
    except Exception as exc:
        msg = f"{type(exc).__name__}: {exc}"
        log.warning("suggestion provider failed: %s", msg)
        run_log.write("failure", error=msg)
        return SuggestionBatch(error=msg)
    run_log.write("reply", reply=raw)
    batch = parse_suggestions(raw, schema, context.max_suggestions)
    run_log.write(
        "parsed",
        accepted=[to_text(e) for e in batch.parsed],
        rejected=[{"line": l, "reason": r} for l, r in batch.rejected],
    )
    return batch


class Guide:
    """Search hook: builds the prompt from the running feedback and returns parsed suggestions."""

    def __init__(self, provider: Provider, context: PromptContext, schema, run_log: Optional[RunLog] = None):
        self.provider = provider
        self.context = context
        self.schema = schema
        self.run_log = run_log if run_log is not None else RunLog()
        self.batches: list[SuggestionBatch] = []

    def __call__(self, best, history):
        ctx = self.context.with_feedback(history)
        batch = suggest(self.provider, ctx, best.expr, self.schema, self.run_log)
        self.batches.append(batch)
        return list(batch.parsed)


# ---------------------------------------------------------------- providers


class MockProvider:
    """Deterministic stand-in for an LLM.

    Ignores the prompt and replies with the ``k`` single comparisons
    ``a > b`` (ordered feature pairs) and ``a > c`` (pool constants) with the
    highest balanced accuracy on the given split.
    """

    def __init__(self, data: LabeledMatrix, k: int = DEFAULT_MAX_SUGGESTIONS):
        if data.n_pos == 0 or data.n_neg == 0:
            raise GuidanceError("mock provider needs both classes in its split")
        if k < 1:
            raise GuidanceError("k must be positive")
        self.k = k
        names = data.schema.feature_names
        cands = [Compare(">", Feature(a), Feature(b)) for a, b in permutations(names, 2)]
        cands += [Compare(">", Feature(a), Const(c)) for a in names for c in CONST_POOL]
        ranked = []
        for expr in cands:
            tpr, tnr = rates(evaluate_batch(expr, data.X, data.schema), data.y)
            ranked.append((-(tpr + tnr) / 2, to_text(expr)))
        ranked.sort()
        self.ranking = [text for _, text in ranked]

    def complete(self, prompt: str) -> str:
        return "```\n" + "\n".join(self.ranking[: self.k]) + "\n```\n"


class HttpProvider:
    """Chat-completion client (OpenAI-compatible ``/chat/completions`` body)."""

    def __init__(self, endpoint: str, model: str, api_key: Optional[str] = None,
                 timeout_s: float = DEFAULT_TIMEOUT_S, retries: int = 1, transport=None,
                 temperature: float = 0.2):
        if not endpoint:
            raise GuidanceError("http provider needs an endpoint URL")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_s
        self.retries = retries
        self.temperature = temperature
        self._transport = transport

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        last = None
        for attempt in range(self.retries + 1):
            try:
                with httpx.Client(timeout=self.timeout_s, transport=self._transport) as client:
                    r = client.post(self.endpoint, json=body, headers=headers)
                    r.raise_for_status()
                    data = r.json()
                return data["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.info("llm request attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(1.0, self.timeout_s / 10))
        raise GuidanceError(f"llm request failed after {self.retries + 1} attempt(s): {last}")
