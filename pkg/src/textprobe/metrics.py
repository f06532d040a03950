"""Per-case results and campaign-level evaluation indicators.

Success rate is computed over attempted (non-skipped) cases; change rate,
perplexity, grammatical errors, time overhead, and query count are averaged
over successful cases only.  Examples the model already misclassifies
unperturbed are skipped and excluded from the success-rate denominator.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .errors import CheckerUnavailable, EmptyText
from .text import Edit, EditList

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TestResult:
    """Outcome of probing one example."""

    __test__ = False  # not a pytest class, despite the name

    case_id: str
    succeeded: bool
    skipped: bool
    original_text: str
    adversarial_text: str
    edits: EditList
    confidence_before: float
    confidence_after: float
    queries_issued: int
    wall_seconds: float
    perturbable_len: int
    example_perturbable_len: int
    perplexity: float | None = None
    grammar_errors: int | None = None
    trace: object | None = None

    def __post_init__(self) -> None:
        if self.skipped and self.succeeded:
            raise ValueError("a skipped case cannot be a success")
        # the skip rule guarantees the unperturbed original never succeeds
        if self.succeeded and len(self.edits) == 0:
            raise ValueError("a success needs at least one edit")


def result_to_record(result: TestResult, trace_ref: str | None = None) -> dict:
    """JSON-ready form of a result; wall-clock time stays in wall_seconds."""
    return {
        "schema_version": SCHEMA_VERSION,
        "case_id": result.case_id,
        "skipped": result.skipped,
        "succeeded": result.succeeded,
        "original_text": result.original_text,
        "adversarial_text": result.adversarial_text,
        "edits": result.edits.to_records(),
        "confidence_before": result.confidence_before,
        "confidence_after": result.confidence_after,
        "queries_issued": result.queries_issued,
        "wall_seconds": result.wall_seconds,
        "perturbable_len": result.perturbable_len,
        "example_perturbable_len": result.example_perturbable_len,
        "perplexity": result.perplexity,
        "grammar_errors": result.grammar_errors,
        "trace": trace_ref,
    }


def result_from_record(record: dict) -> TestResult:
    edits = EditList(
        tuple(
            Edit(e["position"], e["original"], e["replacement"], e["kind"])
            for e in record.get("edits", [])
        )
    )
    return TestResult(
        case_id=record["case_id"],
        succeeded=record["succeeded"],
        skipped=record["skipped"],
        original_text=record["original_text"],
        adversarial_text=record["adversarial_text"],
        edits=edits,
        confidence_before=record["confidence_before"],
        confidence_after=record["confidence_after"],
        queries_issued=record["queries_issued"],
        wall_seconds=record["wall_seconds"],
        perturbable_len=record["perturbable_len"],
        example_perturbable_len=record["example_perturbable_len"],
        perplexity=record.get("perplexity"),
        grammar_errors=record.get("grammar_errors"),
    )


@dataclass(frozen=True)
class CampaignStats:
    """Aggregate indicators; means that have no defining cases are None."""

    attempted: int
    succeeded: int
    skipped: int
    s_rate: float | None
    c_rate: float | None
    mean_ppl: float | None
    mean_ge: float | None
    mean_time_seconds: float | None
    mean_queries: float | None

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "attempted": self.attempted,
            "succeeded": self.succeeded,
            "skipped": self.skipped,
            "s_rate": self.s_rate,
            "c_rate": self.c_rate,
            "mean_ppl": self.mean_ppl,
            "mean_ge": self.mean_ge,
            "mean_time_seconds": self.mean_time_seconds,
            "mean_queries": self.mean_queries,
        }


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def s_rate(results: Sequence[TestResult]) -> float | None:
    """Percentage of attempted (non-skipped) cases that succeeded."""
    attempted = [r for r in results if not r.skipped]
    if not attempted:
        return None
    return 100.0 * sum(r.succeeded for r in attempted) / len(attempted)


def c_rate(results: Sequence[TestResult], scope: str = "full") -> float | None:
    """Mean percentage of changed words over successful cases.

    ``scope`` picks the denominator: "full" counts every perturbable token
    of the joint prompt+example input, "example" only the example's.
    """
    if scope not in ("full", "example"):
        raise ValueError(f"unknown c-rate scope {scope!r}")
    rates = []
    for r in results:
        if not r.succeeded:
            continue
        denom = r.perturbable_len if scope == "full" else r.example_perturbable_len
        if denom <= 0:
            raise ValueError(f"case {r.case_id}: no perturbable tokens")
        rates.append(100.0 * len(r.edits) / denom)
    return _mean(rates)


def aggregate(results: Sequence[TestResult], c_rate_scope: str = "full") -> CampaignStats:
    """Compute all six indicators from a result list."""
    attempted = [r for r in results if not r.skipped]
    successes = [r for r in attempted if r.succeeded]
    return CampaignStats(
        attempted=len(attempted),
        succeeded=len(successes),
        skipped=len(results) - len(attempted),
        s_rate=s_rate(results),
        c_rate=c_rate(results, scope=c_rate_scope),
        mean_ppl=_mean([r.perplexity for r in successes if r.perplexity is not None]),
        mean_ge=_mean([float(r.grammar_errors) for r in successes if r.grammar_errors is not None]),
        mean_time_seconds=_mean([r.wall_seconds for r in successes]),
        mean_queries=_mean([float(r.queries_issued) for r in successes]),
    )


class NgramPerplexityScorer:
    """Add-one-smoothed n-gram model trained on a plain-text corpus.

    Perplexity is exp of the mean negative log-probability of the text's
    tokens, each conditioned on the preceding ``order - 1`` tokens.
    Smoothing guarantees a nonzero probability for unseen words.
    """

    _WORD_RE = re.compile(r"\w+(?:['’]\w+)*", re.UNICODE)
    _START = "<s>"

    def __init__(self, corpus_lines: Iterable[str], order: int = 2):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        self.order = order
        self._ngram_counts: dict[tuple[str, ...], int] = {}
        self._context_counts: dict[tuple[str, ...], int] = {}
        vocab: set[str] = set()
        for line in corpus_lines:
            tokens = self._tokenize(line)
            if not tokens:
                continue
            vocab.update(tokens)
            padded = [self._START] * (order - 1) + tokens
            for i in range(order - 1, len(padded)):
                context = tuple(padded[i - order + 1 : i])
                gram = context + (padded[i],)
                self._ngram_counts[gram] = self._ngram_counts.get(gram, 0) + 1
                self._context_counts[context] = self._context_counts.get(context, 0) + 1
        if not vocab:
            raise EmptyText("perplexity corpus contains no tokens")
        self.vocab_size = len(vocab)

    @classmethod
    def from_file(cls, path: str | Path, order: int = 2) -> "NgramPerplexityScorer":
        with Path(path).open(encoding="utf-8") as fh:
            return cls(fh, order=order)

    def _tokenize(self, text: str) -> list[str]:
        return self._WORD_RE.findall(text.lower())

    def log_prob(self, token: str, context: tuple[str, ...]) -> float:
        numer = self._ngram_counts.get(context + (token,), 0) + 1
        denom = self._context_counts.get(context, 0) + self.vocab_size
        return math.log(numer / denom)

    def perplexity(self, text: str) -> float:
        tokens = self._tokenize(text)
        if not tokens:
            raise EmptyText("cannot score an empty text")
        padded = [self._START] * (self.order - 1) + tokens
        total = 0.0
        for i in range(self.order - 1, len(padded)):
            total += self.log_prob(padded[i], tuple(padded[i - self.order + 1 : i]))
        return math.exp(-total / len(tokens))


class RemotePerplexityScorer:
    """Scores via an HTTP endpoint: POST {"text": ...} -> {"perplexity": x}."""

    def __init__(self, url: str, timeout_seconds: float = 30.0):
        self.url = url
        self.timeout_seconds = timeout_seconds

    def perplexity(self, text: str) -> float:
        if not text.strip():
            raise EmptyText("cannot score an empty text")
        resp = requests.post(self.url, json={"text": text}, timeout=self.timeout_seconds)
        resp.raise_for_status()
        return float(resp.json()["perplexity"])


def grammar_error_count(
    text: str,
    base_url: str,
    language: str = "en-US",
    timeout_seconds: float = 30.0,
) -> int:
    """Count matches reported by a LanguageTool-protocol /v2/check service."""
    if not text:
        return 0
    try:
        resp = requests.post(
            base_url.rstrip("/") + "/v2/check",
            data={"text": text, "language": language},
            timeout=timeout_seconds,
        )
        resp.raise_for_status()
        return len(resp.json().get("matches", []))
    except (requests.exceptions.RequestException, ValueError) as exc:
        raise CheckerUnavailable(str(exc)) from exc


def write_results_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_stats_json(path: str | Path, stats_record: dict) -> None:
    Path(path).write_text(
        json.dumps(stats_record, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


_CSV_COLUMNS = [
    "case_id",
    "skipped",
    "succeeded",
    "edits",
    "confidence_before",
    "confidence_after",
    "queries_issued",
    "wall_seconds",
    "perplexity",
    "grammar_errors",
    "original_text",
    "adversarial_text",
]


def write_results_csv(path: str | Path, records: Iterable[dict]) -> None:
    """One row per case, scalar fields only (edits collapses to a count)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for record in records:
            row = dict(record)
            row["edits"] = len(record.get("edits", []))
            writer.writerow({k: row.get(k) for k in _CSV_COLUMNS})
