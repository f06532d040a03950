"""Campaign orchestration: dataset ingestion, configuration, execution.

A campaign samples examples from a dataset with a seeded RNG, probes each
one (skipping those the model already misclassifies unperturbed), and
persists per-case results, search traces, and aggregate indicators.
Results are flushed incrementally in sample order, so an aborted run keeps
everything completed up to the crash, and reruns with the same config,
seed, and mock model are byte-identical outside of wall-clock fields.
"""

from __future__ import annotations

import csv
import json
import logging
import random
import re
import sys
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import CheckerUnavailable, ConfigError, ParseError, UnknownLabel
from .lexicon import (
    StopWordList,
    default_stop_words,
    load_lexicon,
    load_pos_tsv,
    load_stop_words,
    load_wordnet_pos,
)
from .metrics import (
    CampaignStats,
    NgramPerplexityScorer,
    TestResult,
    aggregate,
    grammar_error_count,
    result_to_record,
    write_results_csv,
    write_stats_json,
)
from .models import (
    BagOfWordsModel,
    CachingSession,
    EndpointConfig,
    ThreatModel,
    load_mock_weights,
    remote_model,
)
from .search import SearchConfig, config_for_variant, run_search
from .text import EditList, TestCase, join_prompt_example
from .transforms import (
    Blacklist,
    Constraint,
    GoalFunction,
    MaxChangeRate,
    MaxEdits,
    Perturbation,
    PosMatch,
    StopWordFilter,
    goal_eval,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataRecord:
    id: str
    text: str
    label: str


@dataclass(frozen=True)
class Dataset:
    records: tuple[DataRecord, ...]
    labels: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.records)


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    raise ConfigError(f"cannot infer dataset format from {path.name!r}")


def load_dataset(
    path: str | Path,
    format: str | None = None,
    labels: tuple[str, ...] | None = None,
) -> Dataset:
    """Read `(id, text, label)` records from a CSV or JSONL file.

    Records keep file order; an optional `id` column is honored, otherwise
    the row index becomes the id.  When ``labels`` is given, every record's
    label must belong to it.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    records: list[DataRecord] = []
    if fmt == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            missing = {"text", "label"} - set(fields)
            if missing:
                raise ParseError(f"missing columns {sorted(missing)}", source=str(path), line=1)
            for i, row in enumerate(reader):
                if row.get("text") is None or row.get("label") is None:
                    raise ParseError("short row", source=str(path), line=reader.line_num)
                records.append(
                    DataRecord(id=row.get("id") or str(i), text=row["text"], label=row["label"])
                )
    elif fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"bad JSON: {exc.msg}", source=str(path), line=lineno) from exc
                if not isinstance(row, dict) or "text" not in row or "label" not in row:
                    raise ParseError("record needs text and label", source=str(path), line=lineno)
                records.append(
                    DataRecord(
                        id=str(row.get("id", len(records))),
                        text=str(row["text"]),
                        label=str(row["label"]),
                    )
                )
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")

    ids = [r.id for r in records]
    if len(ids) != len(set(ids)):
        raise ParseError("duplicate record ids", source=str(path))
    if labels is not None:
        for record in records:
            if record.label not in labels:
                raise UnknownLabel(
                    f"{path}: record {record.id!r} has label {record.label!r}, expected one of {list(labels)}"
                )
        label_set = tuple(labels)
    else:
        label_set = tuple(dict.fromkeys(r.label for r in records))
    return Dataset(records=tuple(records), labels=label_set)


@dataclass(frozen=True)
class CampaignConfig:
    """Everything a campaign run needs, resolved and ready to validate."""

    dataset_path: str
    prompt: str
    out_dir: str
    labels: tuple[str, ...] = ()
    dataset_format: str | None = None
    sample_size: int = 1000
    seed: int = 0
    workers: int = 1
    repeat: int = 1

    model_kind: str = "mock"  # mock | openai-chat
    mock_weights_path: str | None = None
    endpoint: EndpointConfig | None = None
    cache_enabled: bool = True

    search: SearchConfig = field(default_factory=SearchConfig)

    perturbation_kind: str = "synonym-swap"
    lexicon_path: str | None = None
    lexicon_format: str = "tsv"
    replacement_words: tuple[str, ...] = ()

    stop_word_filter: bool = True
    stop_words_path: str | None = None
    max_change_rate: float | None = 0.25
    max_edits: int | None = None
    blacklist: tuple[str, ...] = ()
    pos_match: bool = False
    pos_lexicon_path: str | None = None
    pos_lexicon_format: str = "tsv"
    protected_spans: tuple[str, ...] = ()

    ppl_corpus_path: str | None = None
    ppl_order: int = 2
    grammar_endpoint: str | None = None
    c_rate_scope: str = "full"

    def to_record(self) -> dict:
        record = asdict(self)
        record["search"] = asdict(self.search)
        record["endpoint"] = asdict(self.endpoint) if self.endpoint else None
        return record


def load_config_file(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def build_campaign_config(data: dict, overrides: dict | None = None) -> CampaignConfig:
    """Merge a parsed config file with CLI overrides (overrides win)."""
    overrides = overrides or {}
    camp = dict(data.get("campaign", {}))
    model = dict(data.get("model", {}))
    search = dict(data.get("search", {}))
    pert = dict(data.get("perturbation", {}))
    cons = dict(data.get("constraints", {}))
    metr = dict(data.get("metrics", {}))

    def pick(name: str, section: dict, key: str, default):
        if overrides.get(name) is not None:
            return overrides[name]
        return section.get(key, default)

    labels = tuple(pick("labels", camp, "labels", ()))
    model_kind = pick("model_kind", model, "kind", "mock")
    endpoint = None
    if model_kind == "openai-chat":
        base_url = pick("endpoint_url", model, "base_url", "")
        if not base_url:
            raise ConfigError("openai-chat model requires a base_url")
        if len(labels) < 2:
            raise ConfigError("openai-chat model requires an explicit label set")
        endpoint = EndpointConfig(
            base_url=base_url,
            model=model.get("name", ""),
            labels=labels,
            api_key_env=model.get("api_key_env", "TEXTPROBE_API_KEY"),
            prompt_template=model.get("request_template", "{example}"),
            timeout_seconds=float(model.get("timeout_seconds", 30.0)),
            retries=int(model.get("retries", 2)),
            temperature=float(model.get("temperature", 0.0)),
        )

    variant = pick("variant", search, "variant", "abs")
    fixed_width = pick("fixed_width", search, "fixed_width", None)
    max_queries = search.get("max_queries")
    search_config = config_for_variant(
        variant,
        b_min=int(pick("b_min", search, "b_min", 1)),
        b_max=int(pick("b_max", search, "b_max", 6)),
        fixed_width=int(fixed_width) if fixed_width is not None else None,
        max_queries=int(max_queries) if max_queries else None,
        rng_seed=int(pick("seed", camp, "seed", 0)),
        wir_weighting=search.get("wir_weighting", "softmax"),
    )

    dataset_path = pick("dataset", camp, "dataset", None)
    if not dataset_path:
        raise ConfigError("a dataset path is required")
    out_dir = pick("out", camp, "out", None)
    if not out_dir:
        raise ConfigError("an output directory is required")
    prompt = pick("prompt", camp, "prompt", "")

    raw_rate = cons.get("max_change_rate", 0.25)
    raw_edits = cons.get("max_edits")
    return CampaignConfig(
        dataset_path=str(dataset_path),
        dataset_format=camp.get("dataset_format"),
        prompt=str(prompt),
        labels=labels,
        out_dir=str(out_dir),
        sample_size=int(pick("sample_size", camp, "sample_size", 1000)),
        seed=int(pick("seed", camp, "seed", 0)),
        workers=int(pick("workers", camp, "workers", 1)),
        repeat=int(pick("repeat", camp, "repeat", 1)),
        model_kind=str(model_kind),
        mock_weights_path=pick("mock_weights", model, "weights", None),
        endpoint=endpoint,
        cache_enabled=bool(model.get("cache", True)),
        search=search_config,
        perturbation_kind=str(pert.get("kind", "synonym-swap")),
        lexicon_path=pert.get("lexicon"),
        lexicon_format=str(pert.get("lexicon_format", "tsv")),
        replacement_words=tuple(pert.get("replacement_words", ())),
        stop_word_filter=bool(cons.get("stop_word_filter", True)),
        stop_words_path=cons.get("stop_words"),
        max_change_rate=float(raw_rate) if raw_rate else None,
        max_edits=int(raw_edits) if raw_edits else None,
        blacklist=tuple(cons.get("blacklist", ())),
        pos_match=bool(cons.get("pos_match", False)),
        pos_lexicon_path=cons.get("pos_lexicon"),
        pos_lexicon_format=str(cons.get("pos_lexicon_format", "tsv")),
        protected_spans=tuple(cons.get("protected_spans", ())),
        ppl_corpus_path=metr.get("ppl_corpus"),
        ppl_order=int(metr.get("ppl_order", 2)),
        grammar_endpoint=metr.get("grammar_endpoint") or None,
        c_rate_scope=str(metr.get("c_rate_scope", "full")),
    )


@dataclass
class _Runtime:
    """Loaded resources shared by every case of one campaign run."""

    dataset: Dataset
    model: ThreatModel
    perturbation: Perturbation
    constraints: tuple[Constraint, ...]
    stop_words: StopWordList | None
    scorer: NgramPerplexityScorer | None


def prepare(config: CampaignConfig) -> _Runtime:
    """Load and validate everything; raises ConfigError on any problem."""
    if config.sample_size < 1:
        raise ConfigError(f"sample_size must be >= 1, got {config.sample_size}")
    if config.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {config.workers}")
    if config.repeat < 1:
        raise ConfigError(f"repeat must be >= 1, got {config.repeat}")
    if config.c_rate_scope not in ("full", "example"):
        raise ConfigError(f"unknown c_rate_scope {config.c_rate_scope!r}")

    dataset_path = Path(config.dataset_path)
    if not dataset_path.exists():
        raise ConfigError(f"dataset not found: {dataset_path}")

    if config.model_kind == "mock":
        if not config.mock_weights_path:
            raise ConfigError("mock model requires a weights file")
        weights_path = Path(config.mock_weights_path)
        if not weights_path.exists():
            raise ConfigError(f"mock weights not found: {weights_path}")
        try:
            file_labels, weights = load_mock_weights(weights_path)
        except ParseError as exc:
            raise ConfigError(str(exc)) from exc
        labels = config.labels or file_labels
        model: ThreatModel = BagOfWordsModel(labels, weights)
    elif config.model_kind == "openai-chat":
        if config.endpoint is None:
            raise ConfigError("openai-chat model requires endpoint settings")
        labels = config.endpoint.labels
        model = remote_model(config.endpoint)
    else:
        raise ConfigError(f"unknown model kind {config.model_kind!r}")

    try:
        dataset = load_dataset(dataset_path, config.dataset_format, labels)
    except (ParseError, UnknownLabel) as exc:
        raise ConfigError(str(exc)) from exc

    lexicon = None
    if config.perturbation_kind == "synonym-swap":
        if not config.lexicon_path:
            raise ConfigError("synonym-swap requires a lexicon path")
        lexicon_path = Path(config.lexicon_path)
        if not lexicon_path.exists():
            raise ConfigError(f"lexicon not found: {lexicon_path}")
        lexicon = load_lexicon(lexicon_path, config.lexicon_format)
    perturbation = Perturbation(
        kind=config.perturbation_kind,
        lexicon=lexicon,
        replacement_words=config.replacement_words,
    )

    stop_words: StopWordList | None = None
    if config.stop_word_filter:
        if config.stop_words_path:
            stop_path = Path(config.stop_words_path)
            if not stop_path.exists():
                raise ConfigError(f"stop-word file not found: {stop_path}")
            stop_words = load_stop_words(stop_path)
        else:
            stop_words = default_stop_words()

    constraints: list[Constraint] = []
    if stop_words is not None:
        constraints.append(StopWordFilter(stop_words))
    if config.max_change_rate is not None:
        constraints.append(MaxChangeRate(config.max_change_rate))
    if config.max_edits is not None:
        constraints.append(MaxEdits(config.max_edits))
    if config.blacklist:
        constraints.append(Blacklist(config.blacklist))
    if config.pos_match:
        if not config.pos_lexicon_path:
            raise ConfigError("pos-match requires a pos lexicon path")
        pos_path = Path(config.pos_lexicon_path)
        if not pos_path.exists():
            raise ConfigError(f"pos lexicon not found: {pos_path}")
        pos_lexicon = (
            load_wordnet_pos(pos_path)
            if config.pos_lexicon_format == "wordnet-db"
            else load_pos_tsv(pos_path)
        )
        constraints.append(PosMatch(pos_lexicon))

    scorer = None
    if config.ppl_corpus_path:
        corpus_path = Path(config.ppl_corpus_path)
        if not corpus_path.exists():
            raise ConfigError(f"perplexity corpus not found: {corpus_path}")
        scorer = NgramPerplexityScorer.from_file(corpus_path, order=config.ppl_order)

    return _Runtime(
        dataset=dataset,
        model=model,
        perturbation=perturbation,
        constraints=tuple(constraints),
        stop_words=stop_words,
        scorer=scorer,
    )


def _sample_records(dataset: Dataset, sample_size: int, seed: int) -> list[DataRecord]:
    if len(dataset.records) <= sample_size:
        return list(dataset.records)
    rng = random.Random(seed)
    return rng.sample(list(dataset.records), sample_size)


def _safe_name(case_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", case_id) or "case"


def _probe_case(config: CampaignConfig, runtime: _Runtime, record: DataRecord) -> TestResult:
    session = CachingSession(runtime.model, enabled=config.cache_enabled)
    case = TestCase(
        prompt=config.prompt, example=record.text, ground_truth=record.label, id=record.id
    )
    joint = join_prompt_example(config.prompt, record.text, config.protected_spans)
    goal = GoalFunction(ground_truth=record.label)
    original_prediction = session.predict(joint)
    original_score = goal_eval(goal, original_prediction)

    if original_score.succeeded:
        # already misclassified unperturbed: excluded from the S-rate
        example_len = len(joint.tokens) - joint.prompt_len
        result = TestResult(
            case_id=record.id,
            succeeded=False,
            skipped=True,
            original_text=joint.text,
            adversarial_text=joint.text,
            edits=EditList(),
            confidence_before=original_score.value,
            confidence_after=original_score.value,
            queries_issued=session.ledger.issued,
            wall_seconds=0.0,
            perturbable_len=len(joint.tokens) - len(joint.protected),
            example_perturbable_len=example_len
            - sum(1 for i in joint.protected if i >= joint.prompt_len),
        )
        return result

    result = run_search(
        case,
        session,
        config.search,
        runtime.perturbation,
        constraints=runtime.constraints,
        goal=goal,
        stop_words=runtime.stop_words,
        protected_spans=config.protected_spans,
        original_prediction=original_prediction,
    )
    result = replace(result, queries_issued=session.ledger.issued)

    if result.succeeded and runtime.scorer is not None:
        result = replace(result, perplexity=runtime.scorer.perplexity(result.adversarial_text))
    if result.succeeded and config.grammar_endpoint:
        try:
            count = grammar_error_count(result.adversarial_text, config.grammar_endpoint)
            result = replace(result, grammar_errors=count)
        except CheckerUnavailable as exc:
            logger.warning("grammar checker unavailable for %s: %s", record.id, exc)
    return result


def run_campaign(config: CampaignConfig, runtime: _Runtime | None = None) -> CampaignStats:
    """Execute one campaign run and persist its artifacts.

    Writes ``results.jsonl`` (incrementally, in sample order), ``stats.json``,
    ``results.csv``, ``run-config.resolved.json``, and one trace file per
    searched case under ``traces/``.
    """
    runtime = runtime or prepare(config)
    out_dir = Path(config.out_dir)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)

    write_stats_json(out_dir / "run-config.resolved.json", config.to_record())

    sampled = _sample_records(runtime.dataset, config.sample_size, config.seed)
    results: list[TestResult] = []
    records_out: list[dict] = []

    def finish(index: int, result: TestResult) -> dict:
        trace_ref = None
        if result.trace is not None:
            trace_name = f"{index:05d}-{_safe_name(result.case_id)}.jsonl"
            result.trace.write_jsonl(traces_dir / trace_name)
            trace_ref = f"traces/{trace_name}"
        return result_to_record(result, trace_ref=trace_ref)

    results_path = out_dir / "results.jsonl"
    with results_path.open("w", encoding="utf-8") as fh:

        def flush(record: dict) -> None:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            fh.flush()

        if config.workers == 1:
            for index, record in enumerate(sampled):
                result = _probe_case(config, runtime, record)
                results.append(result)
                out_record = finish(index, result)
                records_out.append(out_record)
                flush(out_record)
        else:
            pending: dict[int, TestResult] = {}
            next_index = 0
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = {
                    pool.submit(_probe_case, config, runtime, record): index
                    for index, record in enumerate(sampled)
                }
                try:
                    remaining = set(futures)
                    while remaining:
                        done, remaining = wait(remaining, return_when=FIRST_COMPLETED)
                        for future in done:
                            pending[futures[future]] = future.result()
                        while next_index in pending:
                            result = pending.pop(next_index)
                            results.append(result)
                            out_record = finish(next_index, result)
                            records_out.append(out_record)
                            flush(out_record)
                            next_index += 1
                except BaseException:
                    for future in futures:
                        future.cancel()
                    raise

    stats = aggregate(results, c_rate_scope=config.c_rate_scope)
    write_stats_json(out_dir / "stats.json", stats.to_record())
    write_results_csv(out_dir / "results.csv", records_out)
    return stats


def _mean_of(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def run_repeated_campaign(config: CampaignConfig) -> dict:
    """Run the campaign ``repeat`` times with derived seeds.

    Repetition ``i`` uses ``seed + i`` and writes into ``rep-<i>/``; the
    top-level ``stats.json`` reports per-repetition stats plus their mean.
    """
    runtime = prepare(config)
    if config.repeat == 1:
        stats = run_campaign(config, runtime)
        return stats.to_record()

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_rep = []
    for rep in range(config.repeat):
        rep_config = replace(
            config,
            seed=config.seed + rep,
            out_dir=str(out_dir / f"rep-{rep:03d}"),
            repeat=1,
        )
        stats = run_campaign(rep_config, runtime)
        per_rep.append(stats.to_record())

    keys = ["s_rate", "c_rate", "mean_ppl", "mean_ge", "mean_time_seconds", "mean_queries"]
    summary = {
        "schema_version": per_rep[0]["schema_version"],
        "repetitions": per_rep,
        "mean": {key: _mean_of([rep[key] for rep in per_rep]) for key in keys},
    }
    write_stats_json(out_dir / "stats.json", summary)
    return summary
