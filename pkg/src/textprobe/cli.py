"""Command-line interface.

Subcommands: ``run`` executes a campaign, ``validate`` pre-flights a
configuration, ``report`` recomputes statistics from persisted results,
and ``wir`` prints the word-importance ranking for one input.

Exit codes: 0 on success, 2 on configuration problems, 3 on runtime
failures (such as an unreachable endpoint).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .campaign import (
    build_campaign_config,
    load_config_file,
    prepare,
    run_repeated_campaign,
)
from .errors import ConfigError, EndpointUnreachable, TextProbeError
from .lexicon import default_stop_words
from .metrics import aggregate, result_from_record, write_results_csv, write_stats_json
from .models import BagOfWordsModel, CachingSession, load_mock_weights
from .search import compute_wir
from .text import join_prompt_example
from .transforms import GoalFunction

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_campaign_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML campaign configuration file")
    parser.add_argument("--dataset", help="dataset file (csv or jsonl)")
    parser.add_argument("--prompt", help="classification prompt prefixed to every example")
    parser.add_argument("--labels", nargs="+", help="label set (overrides config)")
    parser.add_argument("--mock-weights", help="bag-of-words mock weights TSV")
    parser.add_argument("--endpoint", help="base URL of an OpenAI-compatible endpoint")
    parser.add_argument("--seed", type=int, help="sampling seed")
    parser.add_argument("--sample-size", type=int, help="number of examples to test")
    parser.add_argument(
        "--search-variant",
        choices=["abs", "no-aw", "no-bt", "standard"],
        help="search flag combination",
    )
    parser.add_argument("--b-min", type=int, help="minimum beam width")
    parser.add_argument("--b-max", type=int, help="maximum beam width")
    parser.add_argument("--fixed-width", type=int, help="beam width for fixed-width variants")
    parser.add_argument("--workers", type=int, help="parallel example workers")
    parser.add_argument("--repeat", type=int, help="repetitions with derived seeds")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--set",
        dest="set_values",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config value, e.g. --set constraints.max_edits=2",
    )


def _overrides_from_args(args: argparse.Namespace) -> dict:
    return {
        "dataset": args.dataset,
        "prompt": args.prompt,
        "labels": tuple(args.labels) if args.labels else None,
        "mock_weights": args.mock_weights,
        "endpoint_url": args.endpoint,
        "model_kind": "openai-chat" if args.endpoint else None,
        "seed": args.seed,
        "sample_size": args.sample_size,
        "variant": args.search_variant,
        "b_min": args.b_min,
        "b_max": args.b_max,
        "fixed_width": args.fixed_width,
        "workers": args.workers,
        "repeat": args.repeat,
        "out": args.out,
    }


def _apply_dotted_overrides(data: dict, assignments: list[str]) -> None:
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {assignment!r}")
        dotted, _, raw = assignment.partition("=")
        parts = dotted.strip().split(".")
        if len(parts) != 2 or not all(parts):
            raise ConfigError(f"--set key must be SECTION.KEY, got {dotted!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data.setdefault(parts[0], {})[parts[1]] = value


def _load_config(args: argparse.Namespace):
    data = load_config_file(args.config) if args.config else {}
    _apply_dotted_overrides(data, args.set_values)
    return build_campaign_config(data, _overrides_from_args(args))


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    summary = run_repeated_campaign(config)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    prepare(config)
    print("configuration OK")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    results_path = Path(args.results)
    if not results_path.exists():
        raise ConfigError(f"results file not found: {results_path}")
    records = []
    with results_path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    results = [result_from_record(r) for r in records]
    stats = aggregate(results, c_rate_scope=args.c_rate_scope)
    out_dir = Path(args.out) if args.out else results_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_stats_json(out_dir / "stats.json", stats.to_record())
    write_results_csv(out_dir / "results.csv", records)
    print(json.dumps(stats.to_record(), indent=2))
    return EXIT_OK


def _cmd_wir(args: argparse.Namespace) -> int:
    if not args.mock_weights:
        raise ConfigError("wir needs --mock-weights (remote ranking: use a campaign trace)")
    labels, weights = load_mock_weights(args.mock_weights)
    if args.ground_truth not in labels:
        raise ConfigError(f"ground truth {args.ground_truth!r} not in labels {list(labels)}")
    model = CachingSession(BagOfWordsModel(labels, weights))
    seq = join_prompt_example(args.prompt or "", args.text)
    stop_words = None if args.no_stop_words else default_stop_words()
    ranking = compute_wir(
        seq,
        GoalFunction(ground_truth=args.ground_truth),
        model,
        stop_words=stop_words,
    )
    for rank, (position, importance) in enumerate(ranking, start=1):
        print(f"{rank:>3}  pos={position:<4} token={seq.tokens[position]!r:<20} importance={importance:+.6f}")
    if not ranking:
        print("no rankable positions")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textprobe",
        description="Robustness testing for LLM-based text classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a testing campaign")
    _add_campaign_flags(run_p)
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="pre-flight a configuration")
    _add_campaign_flags(val_p)
    val_p.set_defaults(func=_cmd_validate)

    rep_p = sub.add_parser("report", help="recompute stats from persisted results")
    rep_p.add_argument("--results", required=True, help="path to results.jsonl")
    rep_p.add_argument("--out", help="output directory (defaults beside results)")
    rep_p.add_argument("--c-rate-scope", choices=["full", "example"], default="full")
    rep_p.set_defaults(func=_cmd_report)

    wir_p = sub.add_parser("wir", help="print the word-importance ranking for one input")
    wir_p.add_argument("--text", required=True, help="example text")
    wir_p.add_argument("--prompt", help="prompt to join in front of the example")
    wir_p.add_argument("--ground-truth", required=True, help="ground-truth label")
    wir_p.add_argument("--mock-weights", help="bag-of-words mock weights TSV")
    wir_p.add_argument("--no-stop-words", action="store_true", help="rank stop words too")
    wir_p.set_defaults(func=_cmd_wir)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EndpointUnreachable as exc:
        print(f"endpoint unreachable: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except TextProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
