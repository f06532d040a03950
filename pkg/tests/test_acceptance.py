"""Acceptance suite: one test per release criterion, with pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion; a pytest failure marks the criterion failed.
"""

import itertools
import json
import math
import random
import time
from fractions import Fraction

import pytest

from textprobe.campaign import build_campaign_config, prepare, run_campaign
from textprobe.errors import MalformedResponse
from textprobe.lexicon import SynonymLexicon
from textprobe.metrics import (
    NgramPerplexityScorer,
    TestResult,
    aggregate,
    s_rate,
)
from textprobe.models import (
    BagOfWordsModel,
    CachingSession,
    StructuredResponseModel,
    parse_structured_confidence,
)
from textprobe.search import (
    BeamCandidate,
    SearchConfig,
    adaptive_beam_width,
    config_for_variant,
    run_search,
)
from textprobe.text import Edit, EditList, TestCase, tokenize
from textprobe.transforms import GoalFunction, GoalScore, MaxEdits, Perturbation, goal_eval


def _report(criterion: str, message: str) -> None:
    print(f"\n[{criterion}] PASS: {message}")


def softmax2(a, b=0.0):
    ea, eb = math.exp(a), math.exp(b)
    return ea / (ea + eb)


# ---------------------------------------------------------------------------
# Criterion 1: brute-force equivalence on a small product space
# ---------------------------------------------------------------------------


def test_criterion_1_brute_force_equivalence():
    words = ["alpha", "bravo", "charlie", "delta", "echo"]
    synonyms = {
        "alpha": ("a1", "a2"),
        "bravo": ("b1", "b2", "b3"),
        "charlie": ("c1",),
        "delta": ("d1", "d2", "d3"),
        "echo": ("e1", "e2"),
    }
    weights = {
        ("neg", "alpha"): 1.2,
        ("neg", "a1"): 0.7,
        ("neg", "a2"): 1.9,
        ("neg", "bravo"): 0.8,
        ("neg", "b1"): -0.4,
        ("neg", "b2"): 1.1,
        ("neg", "b3"): 0.3,
        ("neg", "charlie"): 1.5,
        ("neg", "c1"): 0.9,
        ("neg", "delta"): 0.6,
        ("neg", "d1"): 1.4,
        ("neg", "d2"): -0.2,
        ("neg", "d3"): 0.5,
        ("neg", "echo"): 1.0,
        ("neg", "e1"): 0.2,
        ("neg", "e2"): 1.3,
    }
    product_width = 1
    for word in words:
        product_width *= 1 + len(synonyms[word])
    assert product_width == 288

    model = BagOfWordsModel(("neg", "pos"), weights)
    case = TestCase(prompt="", example=" ".join(words), ground_truth="neg", id="brute")
    config = SearchConfig(b_min=product_width, b_max=product_width)

    started = time.perf_counter()
    result = run_search(
        case, model, config, Perturbation("synonym-swap", lexicon=SynonymLexicon(synonyms))
    )
    elapsed = time.perf_counter() - started

    # independent exhaustive oracle over the per-position product space
    choices = [(word,) + synonyms[word] for word in words]
    brute_min = min(
        softmax2(sum(weights.get(("neg", w), 0.0) for w in combo))
        for combo in itertools.product(*choices)
    )

    assert abs(result.confidence_after - brute_min) < 1e-9
    assert elapsed < 1.0
    _report(
        "criterion-1",
        f"beam minimum {result.confidence_after:.12f} equals brute-force minimum "
        f"over {product_width} combinations in {elapsed:.3f}s",
    )


# ---------------------------------------------------------------------------
# Criterion 2: adaptive-width boundary behavior and exact rounding
# ---------------------------------------------------------------------------


def _width_candidate(value, parent_value):
    return BeamCandidate(
        seq=tokenize("x"),
        edits=EditList(),
        score=GoalScore(value=value, succeeded=False),
        parent_score=GoalScore(value=parent_value, succeeded=False),
    )


def test_criterion_2_adaptive_width_boundaries():
    checked = 0
    for b_min, b_max in [(1, 6), (1, 10), (2, 8)]:
        for n in range(1, 8):
            improved_all = [_width_candidate(0.1, 0.9)] * n
            assert adaptive_beam_width(improved_all, b_min, b_max) == b_max
            improved_none = [_width_candidate(0.9, 0.1)] * n
            assert adaptive_beam_width(improved_none, b_min, b_max) == b_min
            for improved in range(n + 1):
                beam = [_width_candidate(0.1, 0.9)] * improved + [
                    _width_candidate(0.9, 0.1)
                ] * (n - improved)
                # independent oracle: direct formula + round half up, clamped
                exact = Fraction(b_max - b_min, n) * improved + b_min
                expected = math.floor(exact + Fraction(1, 2))
                expected = max(b_min, min(b_max, expected))
                assert adaptive_beam_width(beam, b_min, b_max) == expected
                checked += 1
    _report("criterion-2", f"{checked} (b_min, b_max, n, improved) cases match exactly")


# ---------------------------------------------------------------------------
# Criterion 3: backtracking invariants over 100 seeded random searches
# ---------------------------------------------------------------------------


def _random_search_fixture(rng: random.Random):
    vocab = [f"w{i}" for i in range(10)]
    weights = {("neg", w): rng.uniform(-2.0, 2.0) for w in vocab}
    text_words = rng.sample(vocab, rng.randint(4, 7))
    if sum(weights[("neg", w)] for w in text_words) <= 0:
        # mirror the weights so the unperturbed text starts on-label
        weights = {key: -value for key, value in weights.items()}
    synonyms = {}
    for word in vocab:
        count = rng.randint(0, 3)
        pool = [w for w in vocab if w != word]
        synonyms[word] = tuple(rng.sample(pool, count))
    case = TestCase("", " ".join(text_words), "neg", f"rand-{rng.random():.8f}")
    model = BagOfWordsModel(("neg", "pos"), weights)
    perturbation = Perturbation("synonym-swap", lexicon=SynonymLexicon(synonyms))
    return case, model, perturbation


def test_criterion_3_backtracking_invariants():
    started = time.perf_counter()
    rng = random.Random(20240810)
    runs = 0
    for _ in range(100):
        case, model, perturbation = _random_search_fixture(rng)
        result = run_search(
            case, model, config_for_variant("abs", b_min=1, b_max=4), perturbation
        )
        history = [record.historical_best for record in result.trace.records]
        for earlier, later in zip(history, history[1:]):
            assert later <= earlier
        scored_minimum = min(
            [result.confidence_before]
            + [record.iteration_best for record in result.trace.records]
        )
        assert result.confidence_after == scored_minimum  # exact
        runs += 1
    elapsed = time.perf_counter() - started
    assert runs == 100
    assert elapsed < 10.0
    _report(
        "criterion-3",
        f"historical best non-increasing and returned score exactly minimal "
        f"in {runs} seeded searches ({elapsed:.2f}s)",
    )


# ---------------------------------------------------------------------------
# Criterion 4: ablation differential on deceptive fixtures
# ---------------------------------------------------------------------------


def _deceptive_suite(count=20):
    """Fixtures where a 1-edit budget traps a width-1 beam.

    The first-ranked word offers a small improvement that spends the only
    allowed edit; the label flips only through the second word's synonym,
    reachable solely from the unedited original.  A worse-than-original
    decoy keeps the original off the refill slot.
    """
    fixtures = []
    for i in range(count):
        scale = 1.0 + 0.1 * i
        first, second = f"acme{i}", f"bravo{i}"
        improve, decoy, flip = f"almost{i}", f"apex{i}", f"broke{i}"
        weights = {
            ("neg", first): 2.0 * scale,
            ("neg", second): 2.0 * scale,
            ("neg", improve): 1.0 * scale,
            ("neg", decoy): 3.0 * scale,
            ("neg", flip): -3.0 * scale,
        }
        synonyms = {first: (improve, decoy), second: (flip,)}
        text = f"{first} {second}" if i % 2 == 0 else f"{first} {second} filler{i}"
        fixtures.append((text, weights, synonyms, f"trap-{i}"))
    return fixtures


def _oracle_confidence(weights, words):
    return softmax2(sum(weights.get(("neg", w), 0.0) for w in words))


def _oracle_wir_order(weights, words):
    base = _oracle_confidence(weights, words)
    deltas = []
    for i, word in enumerate(words):
        masked = list(words)
        masked[i] = "[UNK]"
        deltas.append(base - _oracle_confidence(weights, masked))
    shares = [math.exp(d) for d in deltas]
    total = sum(shares)
    importances = [s / total * d for s, d in zip(shares, deltas)]
    return sorted(range(len(words)), key=lambda i: (-importances[i], i))


def _oracle_greedy_fails(weights, synonyms, words, max_edits=1):
    """Exhaustively follow the width-1, no-backtracking path."""
    current = list(words)
    edited = 0
    for position in _oracle_wir_order(weights, words):
        candidates = [(list(current), edited)]
        if edited < max_edits:
            for synonym in synonyms.get(words[position], ()):
                child = list(current)
                child[position] = synonym
                candidates.append((child, edited + 1))
        confidences = [_oracle_confidence(weights, cand) for cand, _ in candidates]
        if any(conf < 0.5 for conf in confidences):
            return False  # greedy would actually succeed: not a trap
        best = min(range(len(candidates)), key=lambda k: confidences[k])
        current, edited = candidates[best]
    return True


def _oracle_single_edit_flip_exists(weights, synonyms, words):
    for i, word in enumerate(words):
        for synonym in synonyms.get(word, ()):
            child = list(words)
            child[i] = synonym
            if _oracle_confidence(weights, child) < 0.5:
                return True
    return False


def test_criterion_4_ablation_differential():
    started = time.perf_counter()
    fixtures = _deceptive_suite(20)
    standard_successes = 0
    abs_successes = 0
    for text, weights, synonyms, case_id in fixtures:
        words = text.split()
        # the trap is proven by enumeration before any search runs
        assert _oracle_greedy_fails(weights, synonyms, words)
        assert _oracle_single_edit_flip_exists(weights, synonyms, words)

        def run(variant_config):
            case = TestCase("", text, "neg", case_id)
            model = BagOfWordsModel(("neg", "pos"), weights)
            return run_search(
                case,
                model,
                variant_config,
                Perturbation("synonym-swap", lexicon=SynonymLexicon(synonyms)),
                constraints=(MaxEdits(1),),
            )

        standard = run(config_for_variant("standard", fixed_width=1))
        full = run(config_for_variant("abs", b_min=1, b_max=4))
        standard_successes += standard.succeeded
        abs_successes += full.succeeded

    elapsed = time.perf_counter() - started
    assert standard_successes == 0
    assert abs_successes > standard_successes
    assert abs_successes == len(fixtures)
    assert elapsed < 30.0
    _report(
        "criterion-4",
        f"full search flipped {abs_successes}/20 deceptive fixtures, "
        f"width-1 standard beam flipped {standard_successes} ({elapsed:.2f}s)",
    )


# ---------------------------------------------------------------------------
# Criterion 5: metric exactness on a hand-computed fixture
# ---------------------------------------------------------------------------


def _fixture_result(case_id, *, skipped=False, succeeded=False, edit_count=0, length=8,
                    seconds=0.0, queries=1):
    edits = EditList(
        tuple(Edit(i, f"o{i}", f"r{i}", "synonym") for i in range(edit_count))
    )
    return TestResult(
        case_id=case_id,
        succeeded=succeeded,
        skipped=skipped,
        original_text="o",
        adversarial_text="a",
        edits=edits,
        confidence_before=0.75,
        confidence_after=0.25 if succeeded else 0.75,
        queries_issued=queries,
        wall_seconds=seconds,
        perturbable_len=length,
        example_perturbable_len=length,
    )


def test_criterion_5_metric_exactness():
    results = [
        _fixture_result("skip-1", skipped=True),
        _fixture_result("skip-2", skipped=True),
        _fixture_result("win-1", succeeded=True, edit_count=1, length=8,
                        seconds=10.0, queries=100),
        _fixture_result("win-2", succeeded=True, edit_count=3, length=16,
                        seconds=20.0, queries=200),
        _fixture_result("lose-1", edit_count=2, length=8, seconds=5.0, queries=50),
        _fixture_result("lose-2", edit_count=0, length=8, seconds=5.0, queries=50),
    ]
    stats = aggregate(results)

    # rational-arithmetic oracles
    expected_s_rate = float(Fraction(2, 4) * 100)
    expected_c_rate = float((Fraction(100, 8) + Fraction(300, 16)) / 2)
    expected_time = float(Fraction(10) + Fraction(20)) / 2
    expected_queries = float(Fraction(100 + 200, 2))

    assert stats.attempted == 4
    assert stats.s_rate == expected_s_rate == 50.0
    assert stats.c_rate == expected_c_rate == 15.625
    assert stats.mean_time_seconds == expected_time == 15.0
    assert stats.mean_queries == expected_queries == 150.0

    # the skip rule keeps misclassified originals out of the denominator
    assert s_rate(results) == 50.0
    assert s_rate([r for r in results if not r.skipped]) == 50.0

    # uniform unigram perplexity equals the vocabulary size
    corpus = [" ".join(f"word{i}" for i in range(100))]
    scorer = NgramPerplexityScorer(corpus, order=1)
    ppl = scorer.perplexity("word0 word50 word99")
    assert abs(ppl - 100.0) < 1e-9

    _report(
        "criterion-5",
        "S-rate 50.0, C-rate 15.625, T-O 15.0, Q-N 150.0 exact; uniform PPL 100.0",
    )


# ---------------------------------------------------------------------------
# Criterion 6: structured-response parser conformance
# ---------------------------------------------------------------------------


def test_criterion_6_parser_conformance():
    labels = ("negative", "positive")
    goal = GoalFunction(ground_truth="negative")

    original = parse_structured_confidence("[negative]+0.910,[positive]+0.090", labels)
    assert original.scores == {"negative": 0.910, "positive": 0.090}
    assert not goal_eval(goal, original).succeeded

    flipped = parse_structured_confidence("[negative]+0.040,[positive]+0.960", labels)
    assert flipped.scores["positive"] == 0.960
    assert goal_eval(goal, flipped).succeeded

    with pytest.raises(MalformedResponse):
        parse_structured_confidence("I think it's positive", labels)

    attempts = []

    def hallucinating_transport(text):
        attempts.append(text)
        return "As an AI, I believe the sentiment is positive!"

    model = StructuredResponseModel(labels, hallucinating_transport, retries=2)
    degraded = model.predict("whatever input")
    assert len(attempts) == 3
    assert degraded.degraded
    assert degraded.scores == {"negative": 0.5, "positive": 0.5}

    _report(
        "criterion-6",
        "structured format round-trips, the 0.91->0.96 flip is a success, and "
        "free text degrades to uniform after retries",
    )


# ---------------------------------------------------------------------------
# Criterion 7: query accounting against the mock's own counter
# ---------------------------------------------------------------------------


def test_criterion_7_query_accounting(tmp_path):
    (tmp_path / "data.csv").write_text(
        "id,text,label\nc1,a bearish market report,neg\n", encoding="utf-8"
    )
    (tmp_path / "weights.tsv").write_text(
        "neg\tbearish\t1.0\npos\tsunny\t0.0\nneg\tsunny\t-1.0\n", encoding="utf-8"
    )
    (tmp_path / "synonyms.tsv").write_text("bearish\tsunny\n", encoding="utf-8")
    config = build_campaign_config(
        {
            "campaign": {
                "dataset": str(tmp_path / "data.csv"),
                "prompt": "Classify the sentiment:",
                "labels": ["neg", "pos"],
                "sample_size": 1,
                "seed": 3,
                "out": str(tmp_path / "out"),
            },
            "model": {"kind": "mock", "weights": str(tmp_path / "weights.tsv")},
            "perturbation": {
                "kind": "synonym-swap",
                "lexicon": str(tmp_path / "synonyms.tsv"),
            },
        }
    )
    runtime = prepare(config)
    mock = runtime.model
    stats = run_campaign(config, runtime)
    assert stats.succeeded == 1
    assert stats.mean_queries == float(mock.invocations)

    # caching: re-scoring an identical candidate never re-invokes the model
    session = CachingSession(BagOfWordsModel(("neg", "pos"), {}))
    session.predict("identical candidate")
    session.predict("identical candidate")
    assert session.ledger.issued == 1
    assert session.ledger.cache_hits == 1

    _report(
        "criterion-7",
        f"campaign Q-N {stats.mean_queries} equals the mock's invocation counter "
        f"({mock.invocations}); cache hits do not issue queries",
    )


# ---------------------------------------------------------------------------
# Criterion 8: end-to-end determinism
# ---------------------------------------------------------------------------


def _campaign_config(tmp_path, out_name):
    return build_campaign_config(
        {
            "campaign": {
                "dataset": str(tmp_path / "data.csv"),
                "prompt": "Classify the sentiment:",
                "labels": ["neg", "pos"],
                "sample_size": 6,
                "seed": 11,
                "workers": 2,
                "out": str(tmp_path / out_name),
            },
            "model": {"kind": "mock", "weights": str(tmp_path / "weights.tsv")},
            "search": {"variant": "abs", "b_min": 1, "b_max": 4},
            "perturbation": {
                "kind": "synonym-swap",
                "lexicon": str(tmp_path / "synonyms.tsv"),
            },
        }
    )


def _strip_wall_clock_jsonl(path):
    lines = []
    for line in path.read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        assert "wall_seconds" in record
        record["wall_seconds"] = 0.0
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    return "\n".join(lines)


def _strip_wall_clock_stats(path):
    record = json.loads(path.read_text(encoding="utf-8"))
    assert "mean_time_seconds" in record
    record["mean_time_seconds"] = 0.0
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def test_criterion_8_end_to_end_determinism(tmp_path):
    (tmp_path / "data.csv").write_text(
        "id,text,label\n"
        "r1,a bearish market report,neg\n"
        "r2,analysts turned bearish overnight,neg\n"
        "r3,a bullish market report,pos\n"
        "r4,investors stay bullish today,pos\n"
        "r5,bearish chart patterns emerge,pos\n"
        "r6,bullish forecasts abound here,neg\n",
        encoding="utf-8",
    )
    (tmp_path / "weights.tsv").write_text(
        "neg\tbearish\t1.0\npos\tbullish\t1.0\nneg\tsunny\t-1.0\npos\tgloomy\t-1.0\n",
        encoding="utf-8",
    )
    (tmp_path / "synonyms.tsv").write_text(
        "bearish\tsunny\nbullish\tgloomy\n", encoding="utf-8"
    )

    run_campaign(_campaign_config(tmp_path, "first"))
    run_campaign(_campaign_config(tmp_path, "second"))

    first, second = tmp_path / "first", tmp_path / "second"
    assert _strip_wall_clock_jsonl(first / "results.jsonl") == _strip_wall_clock_jsonl(
        second / "results.jsonl"
    )
    assert _strip_wall_clock_stats(first / "stats.json") == _strip_wall_clock_stats(
        second / "stats.json"
    )
    # traces carry no wall-clock fields and must match byte for byte
    first_traces = sorted(p.name for p in (first / "traces").iterdir())
    second_traces = sorted(p.name for p in (second / "traces").iterdir())
    assert first_traces == second_traces
    for name in first_traces:
        assert (first / "traces" / name).read_bytes() == (
            second / "traces" / name
        ).read_bytes()

    _report(
        "criterion-8",
        "two runs with identical config, seed, and mock are byte-identical "
        "outside wall-clock fields",
    )
