"""Command line entry point.

    symsearch synth  --rule "count.person > count.helmet" --categories person,helmet,head --output data.jsonl
    symsearch search --input data.jsonl --report out/report.json
    symsearch eval   --rule-file rule.txt --input data.jsonl
    symsearch split  --input data.jsonl --report out/split.json

Settings come from, lowest precedence first: built-in defaults, ``--config``
(flat ``key=value`` file using the flag names), explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .detections import SplitSpec, load_dataset, split, write_dataset
from .errors import SymSearchError
from .harness import PlantedSpec, RunConfig, evaluate_rule, generate_planted, parse_config_text, run_pipeline

log = logging.getLogger("symsearch")


def _add_common(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    g = p.add_argument_group("common")
    g.add_argument("--config", default=S, help="flat key=value config file")
    g.add_argument("--report", default=S, help="write the JSON report here")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--input", default=S, help="JSON-lines detection records")
    g.add_argument("--score-threshold", dest="score_threshold", type=float, default=S)
    g.add_argument("--iou-threshold", dest="iou_threshold", type=float, default=S)
    g.add_argument("--lambda", dest="lam", type=float, default=S)
    g.add_argument("--event", default=S)
    g.add_argument("-v", "--verbose", action="store_true", default=S)


def _add_split(p):
    S = argparse.SUPPRESS
    p.add_argument("--search-scale", dest="search_scale", type=float, default=S)


def _add_search(p):
    S = argparse.SUPPRESS
    g = p.add_argument_group("search")
    g.add_argument("--population", type=int, default=S)
    g.add_argument("--crossover", type=float, default=S)
    g.add_argument("--mutation", type=float, default=S)
    g.add_argument("--iterations", type=int, default=S)
    g.add_argument("--top-k", dest="top_k", type=int, default=S)
    g.add_argument("--max-depth", dest="max_depth", type=int, default=S)
    g.add_argument("--patience", type=int, default=S)
    g.add_argument("--guidance-period", dest="guidance_period", type=int, default=S)
    g.add_argument("--trace", default=S, help="fitness trace CSV (default: next to the report)")
    g = p.add_argument_group("guidance")
    g.add_argument("--llm-mode", dest="llm_mode", choices=("off", "mock", "http"), default=S)
    g.add_argument("--llm-endpoint", dest="llm_endpoint", default=S)
    g.add_argument("--llm-model", dest="llm_model", default=S)
    g.add_argument("--max-suggestions", dest="max_suggestions", type=int, default=S)
    g.add_argument("--llm-timeout-s", dest="llm_timeout_s", type=float, default=S)
    g.add_argument("--cot-template", dest="cot_template", default=S)
    g.add_argument("--scene", default=S)
    g.add_argument("--run-log", dest="run_log", default=S, help="append prompts and replies here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symsearch", description="Discover event rules from detection records.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="split, search for a rule, report held-out metrics")
    _add_common(p)
    _add_split(p)
    _add_search(p)

    p = sub.add_parser("eval", help="apply a rule file to a dataset")
    _add_common(p)
    p.add_argument("--rule-file", dest="rule_file", required=True)

    p = sub.add_parser("split", help="write the search/eval split manifest")
    _add_common(p)
    _add_split(p)
    p.add_argument("--write-parts", dest="write_parts", default=None, help="also write search.jsonl / eval.jsonl here")

    p = sub.add_parser("synth", help="generate a planted-rule dataset")
    _add_common(p)
    p.add_argument("--rule", required=True)
    p.add_argument("--categories", required=True, help="comma separated")
    p.add_argument("--n-pos", dest="n_pos", type=int, default=500)
    p.add_argument("--n-neg", dest="n_neg", type=int, default=500)
    p.add_argument("--label-noise", dest="label_noise", type=float, default=0.0)
    p.add_argument("--detection-noise", dest="detection_noise", type=float, default=0.0)
    p.add_argument("--max-count", dest="max_count", type=int, default=4)
    p.add_argument("--output", required=True)
    return parser


_CONFIG_ATTRS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    values.update({k: v for k, v in vars(args).items() if k in _CONFIG_ATTRS})
    return RunConfig(**values)


def _cmd_search(args, config):
    report = run_pipeline(config)
    sys.stdout.write(report.summary())
    return 0


def _cmd_eval(args, config):
    report = evaluate_rule(args.rule_file, config.input, config)
    sys.stdout.write(report.summary())
    return 0


def _cmd_split(args, config):
    dataset = load_dataset(config.input, config.score_threshold, config.event)
    search_ds, eval_ds = split(dataset, SplitSpec(config.search_scale, config.seed))
    manifest = {
        "search_scale": config.search_scale,
        "seed": config.seed,
        "search": search_ds.image_ids,
        "eval": eval_ds.image_ids,
    }
    text = json.dumps(manifest, indent=2) + "\n"
    if config.report:
        Path(config.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.write_parts:
        out = Path(args.write_parts)
        out.mkdir(parents=True, exist_ok=True)
        write_dataset(search_ds, out / "search.jsonl")
        write_dataset(eval_ds, out / "eval.jsonl")
    return 0


def _cmd_synth(args, config):
    spec = PlantedSpec(
        categories=[c.strip() for c in args.categories.split(",") if c.strip()],
        rule_text=args.rule,
        n_pos=args.n_pos,
        n_neg=args.n_neg,
        label_noise=args.label_noise,
        detection_noise=args.detection_noise,
        seed=config.seed,
        max_count=args.max_count,
        iou_threshold=config.iou_threshold,
    )
    write_dataset(generate_planted(spec), args.output)
    return 0


COMMANDS = {"search": _cmd_search, "eval": _cmd_eval, "split": _cmd_split, "synth": _cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except SymSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: [harness] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
