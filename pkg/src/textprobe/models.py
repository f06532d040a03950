"""The black-box classifier contract.

A threat model maps text to a label→confidence distribution.  Concrete
backends: a deterministic bag-of-words mock for testing, and remote
OpenAI-compatible chat endpoints that answer in the structured
``[label]+[score]`` format.  A :class:`CachingSession` wraps any backend
with response caching and query accounting.
"""

from __future__ import annotations

import math
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import requests

from .errors import (
    EndpointUnreachable,
    MalformedResponse,
    ParseError,
    Timeout,
)
from .text import TextSequence, tokenize

# A structured response may round each score to three decimals, so the sum
# can drift from 1 by up to one unit in the last place per label.
SCORE_SUM_TOLERANCE = 0.02

_ENTRY_RE = re.compile(r"\[\s*([^\[\]]+?)\s*\]\s*\+\s*([0-9]+(?:\.[0-9]+)?)")


@dataclass(frozen=True)
class Prediction:
    """A label→confidence map plus the verbatim response it came from."""

    scores: Mapping[str, float]
    raw: str = ""
    degraded: bool = False

    def __post_init__(self) -> None:
        if not self.scores:
            raise ValueError("prediction needs at least one label")
        total = sum(self.scores.values())
        if not (1 - SCORE_SUM_TOLERANCE <= total <= 1 + SCORE_SUM_TOLERANCE):
            raise ValueError(f"confidences sum to {total}, not ~1")
        if any(not 0 <= v <= 1 for v in self.scores.values()):
            raise ValueError("confidence outside [0, 1]")

    def top_label(self) -> str:
        return max(self.scores, key=lambda lab: self.scores[lab])


class QueryLedger:
    """Thread-safe accounting of model lookups.

    ``issued`` counts real backend invocations, ``cache_hits`` counts
    lookups served from cache; their sum is the total number of lookups.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.issued = 0
        self.cache_hits = 0
        self.wall_time = 0.0

    def record_issued(self, seconds: float) -> None:
        with self._lock:
            self.issued += 1
            self.wall_time += seconds

    def record_hit(self) -> None:
        with self._lock:
            self.cache_hits += 1

    @property
    def total(self) -> int:
        return self.issued + self.cache_hits


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for an OpenAI-compatible chat endpoint."""

    base_url: str
    model: str
    labels: tuple[str, ...]
    api_key_env: str = "TEXTPROBE_API_KEY"
    prompt_template: str = "{example}"
    timeout_seconds: float = 30.0
    retries: int = 2
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if len(self.labels) < 2:
            raise ValueError("label set needs at least 2 labels")
        if self.prompt_template.count("{example}") != 1:
            raise ValueError("prompt_template must contain {example} exactly once")


def uniform_prediction(labels: tuple[str, ...], raw: str = "", degraded: bool = False) -> Prediction:
    share = 1.0 / len(labels)
    return Prediction(scores={lab: share for lab in labels}, raw=raw, degraded=degraded)


def parse_structured_confidence(raw: str, labels: tuple[str, ...]) -> Prediction:
    """Parse the ``[label]+[score],...`` format, order-insensitive.

    Raises :class:`MalformedResponse` on a missing or unknown label, a
    duplicate label, or confidences that do not sum to ~1.
    """
    by_lower = {lab.lower(): lab for lab in labels}
    scores: dict[str, float] = {}
    for match in _ENTRY_RE.finditer(raw):
        label = by_lower.get(match.group(1).lower())
        if label is None:
            raise MalformedResponse(f"unknown label {match.group(1)!r} in {raw!r}")
        if label in scores:
            raise MalformedResponse(f"duplicate label {label!r} in {raw!r}")
        value = float(match.group(2))
        if value > 1:
            raise MalformedResponse(f"confidence {value} outside [0, 1] in {raw!r}")
        scores[label] = value
    missing = [lab for lab in labels if lab not in scores]
    if missing:
        raise MalformedResponse(f"missing labels {missing} in {raw!r}")
    total = sum(scores.values())
    if not (1 - SCORE_SUM_TOLERANCE <= total <= 1 + SCORE_SUM_TOLERANCE):
        raise MalformedResponse(f"confidences sum to {total} in {raw!r}")
    return Prediction(scores={lab: scores[lab] for lab in labels}, raw=raw)


class ThreatModel(ABC):
    """A black-box classifier over raw text."""

    labels: tuple[str, ...]

    @abstractmethod
    def invoke(self, text: str) -> Prediction:
        """Issue one real classification call."""

    def predict(self, seq: TextSequence | str) -> Prediction:
        text = seq.text if isinstance(seq, TextSequence) else seq
        return self.invoke(text)


def _softmax(values: list[float]) -> list[float]:
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


class BagOfWordsModel(ThreatModel):
    """Deterministic mock: softmax over per-label sums of word weights.

    Words are matched case-insensitively; unknown words weigh 0, so an
    all-unknown (or empty) text scores uniformly.  Invocations are counted.
    """

    def __init__(self, labels: tuple[str, ...], weights: Mapping[tuple[str, str], float]):
        if len(labels) < 2:
            raise ValueError("label set needs at least 2 labels")
        self.labels = tuple(labels)
        self.weights = {(lab, word.lower()): w for (lab, word), w in weights.items()}
        self.invocations = 0
        self._lock = threading.Lock()

    def invoke(self, text: str) -> Prediction:
        with self._lock:
            self.invocations += 1
        words = [t.lower() for t in tokenize(text).tokens]
        sums = [
            sum(self.weights.get((lab, w), 0.0) for w in words) for lab in self.labels
        ]
        probs = _softmax(sums)
        return Prediction(scores=dict(zip(self.labels, probs)))


def load_mock_weights(path: str | Path) -> tuple[tuple[str, ...], dict[tuple[str, str], float]]:
    """Read a `label<TAB>word<TAB>weight` fixture; labels in file order."""
    path = Path(path)
    labels: dict[str, None] = {}
    weights: dict[tuple[str, str], float] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected label<TAB>word<TAB>weight", source=str(path), line=lineno)
            label, word, weight = parts
            try:
                value = float(weight)
            except ValueError as exc:
                raise ParseError(f"bad weight {weight!r}", source=str(path), line=lineno) from exc
            labels.setdefault(label.strip())
            weights[(label.strip(), word.strip().lower())] = value
    if len(labels) < 2:
        raise ParseError("mock weights must cover at least 2 labels", source=str(path))
    return tuple(labels), weights


class StructuredResponseModel(ThreatModel):
    """A model whose backend answers in the structured confidence format.

    ``transport`` performs one request and returns the raw response string;
    it may raise Timeout/EndpointUnreachable (retried) or MalformedResponse.
    After ``retries`` extra attempts, a malformed response degrades to a
    uniform distribution instead of aborting the caller's search.
    """

    def __init__(
        self,
        labels: tuple[str, ...],
        transport: Callable[[str], str],
        retries: int = 2,
        name: str = "",
    ):
        self.labels = tuple(labels)
        self.transport = transport
        self.retries = retries
        self.name = name

    def invoke(self, text: str) -> Prediction:
        transport_error: Exception | None = None
        last_raw: str | None = None
        for _ in range(self.retries + 1):
            try:
                raw = self.transport(text)
            except (Timeout, EndpointUnreachable) as exc:
                transport_error = exc
                continue
            except MalformedResponse:
                last_raw = ""
                continue
            last_raw = raw
            try:
                return parse_structured_confidence(raw, self.labels)
            except MalformedResponse:
                continue
        if last_raw is None:
            assert transport_error is not None
            raise transport_error
        return uniform_prediction(self.labels, raw=last_raw, degraded=True)


def openai_chat_transport(config: EndpointConfig) -> Callable[[str], str]:
    """One-shot POST to ``{base_url}/chat/completions`` per classification."""

    def send(text: str) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": config.model,
            "messages": [
                {"role": "user", "content": config.prompt_template.format(example=text)}
            ],
            "temperature": config.temperature,
        }
        try:
            resp = requests.post(
                config.base_url.rstrip("/") + "/chat/completions",
                json=body,
                headers=headers,
                timeout=config.timeout_seconds,
            )
        except requests.exceptions.Timeout as exc:
            raise Timeout(f"no response within {config.timeout_seconds}s") from exc
        except requests.exceptions.RequestException as exc:
            raise EndpointUnreachable(str(exc)) from exc
        if resp.status_code != 200:
            raise EndpointUnreachable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from exc

    return send


def remote_model(config: EndpointConfig) -> StructuredResponseModel:
    return StructuredResponseModel(
        labels=config.labels,
        transport=openai_chat_transport(config),
        retries=config.retries,
        name=config.model,
    )


class CachingSession:
    """Caches predictions keyed on the exact detokenized string.

    With caching enabled (the default), repeated lookups of the same text
    are served from cache and only ``cache_hits`` grows; disable it to
    reproduce raw query counting.
    """

    def __init__(self, model: ThreatModel, enabled: bool = True):
        self.model = model
        self.enabled = enabled
        self.ledger = QueryLedger()
        self._cache: dict[str, Prediction] = {}
        self._lock = threading.Lock()

    @property
    def labels(self) -> tuple[str, ...]:
        return self.model.labels

    def predict(self, seq: TextSequence | str) -> Prediction:
        text = seq.text if isinstance(seq, TextSequence) else seq
        if self.enabled:
            with self._lock:
                hit = self._cache.get(text)
            if hit is not None:
                self.ledger.record_hit()
                return hit
        start = time.perf_counter()
        pred = self.model.invoke(text)
        self.ledger.record_issued(time.perf_counter() - start)
        if self.enabled:
            with self._lock:
                self._cache[text] = pred
        return pred
