"""Word importance ranking and beam search with adaptive width and backtracking.

The search perturbs one token position per iteration, visiting positions in
order of importance (confidence drop under ``[UNK]`` masking, computed once
up front).  Each iteration expands every beam member, scores the surviving
candidates, keeps the lowest-confidence ones, and — depending on the
configured variant — widens or narrows the beam based on how many retained
candidates improved on their parents, and re-inserts the historically best
candidate when the current beam has drifted above it.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .errors import ConfigError
from .lexicon import StopWordList
from .metrics import TestResult
from .models import CachingSession, Prediction, ThreatModel
from .text import Edit, EditList, TestCase, TextSequence, join_prompt_example
from .transforms import (
    Constraint,
    GoalFunction,
    GoalScore,
    Perturbation,
    check_constraints,
    goal_eval,
    neighbors,
)

MASK_TOKEN = "[UNK]"

WIR_WEIGHTINGS = ("softmax", "raw-delta")

# variant name -> (adaptive width, backtracking)
SEARCH_VARIANTS = {
    "abs": (True, True),
    "no-aw": (False, True),
    "no-bt": (True, False),
    "standard": (False, False),
}


@dataclass(frozen=True)
class SearchConfig:
    """Beam-search knobs; ``fixed_width`` only applies with adaptive off."""

    b_min: int = 1
    b_max: int = 6
    enable_adaptive_width: bool = True
    enable_backtracking: bool = True
    fixed_width: int | None = None
    max_queries: int | None = None
    rng_seed: int = 0
    wir_weighting: str = "softmax"

    def __post_init__(self) -> None:
        if self.b_min < 1:
            raise ConfigError(f"b_min must be >= 1, got {self.b_min}")
        if self.b_max < self.b_min:
            raise ConfigError(f"b_max {self.b_max} < b_min {self.b_min}")
        if self.enable_adaptive_width and self.fixed_width is not None:
            raise ConfigError("fixed_width set while adaptive width is enabled")
        if not self.enable_adaptive_width:
            if self.fixed_width is None:
                raise ConfigError("fixed_width required when adaptive width is disabled")
            if not self.b_min <= self.fixed_width <= self.b_max:
                raise ConfigError(
                    f"fixed_width {self.fixed_width} outside [{self.b_min}, {self.b_max}]"
                )
        if self.max_queries is not None and self.max_queries < 1:
            raise ConfigError(f"max_queries must be >= 1, got {self.max_queries}")
        if self.wir_weighting not in WIR_WEIGHTINGS:
            raise ConfigError(f"wir_weighting must be one of {WIR_WEIGHTINGS}")

    @property
    def variant(self) -> str:
        for name, flags in SEARCH_VARIANTS.items():
            if flags == (self.enable_adaptive_width, self.enable_backtracking):
                return name
        raise AssertionError("unreachable")


def config_for_variant(
    name: str,
    b_min: int = 1,
    b_max: int = 6,
    fixed_width: int | None = None,
    **kwargs,
) -> SearchConfig:
    """Build the flag combination for a named variant.

    Fixed-width variants default their width to ``b_max``; passing
    ``fixed_width`` together with an adaptive variant is a ConfigError.
    """
    if name not in SEARCH_VARIANTS:
        raise ConfigError(f"unknown search variant {name!r}")
    adaptive, backtracking = SEARCH_VARIANTS[name]
    if not adaptive and fixed_width is None:
        fixed_width = b_max
    return SearchConfig(
        b_min=b_min,
        b_max=b_max,
        enable_adaptive_width=adaptive,
        enable_backtracking=backtracking,
        fixed_width=fixed_width,
        **kwargs,
    )


@dataclass(frozen=True)
class BeamCandidate:
    """A perturbed sequence, its score, and the score of its parent."""

    seq: TextSequence
    edits: EditList
    score: GoalScore
    parent_score: GoalScore


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    position: int
    width: int
    indicator_sum: int
    iteration_best: float
    historical_best: float
    queries: int

    def to_record(self) -> dict:
        return {
            "iteration": self.iteration,
            "position": self.position,
            "width": self.width,
            "indicator_sum": self.indicator_sum,
            "iteration_best": self.iteration_best,
            "historical_best": self.historical_best,
            "queries": self.queries,
        }


@dataclass(frozen=True)
class SearchTrace:
    records: tuple[IterationRecord, ...] = ()
    stop_reason: str = ""
    wir: tuple[tuple[int, float], ...] = ()

    def write_jsonl(self, path: str | Path) -> None:
        """One JSON record per iteration."""
        with Path(path).open("w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_record(), ensure_ascii=False) + "\n")


def _softmax(values: Sequence[float]) -> list[float]:
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def compute_wir(
    seq: TextSequence,
    goal: GoalFunction,
    model: ThreatModel | CachingSession,
    stop_words: StopWordList | None = None,
    base_prediction: Prediction | None = None,
    weighting: str = "softmax",
) -> list[tuple[int, float]]:
    """Rank perturbable positions by importance, most important first.

    A position's raw saliency is the drop in ground-truth confidence when
    its token is replaced by the literal ``[UNK]``.  With "softmax"
    weighting each drop is scaled by its softmax share over all rankable
    positions; "raw-delta" uses the drop unscaled.  Stop-word and protected
    positions are excluded.  Ties order by ascending position.
    """
    if weighting not in WIR_WEIGHTINGS:
        raise ConfigError(f"weighting must be one of {WIR_WEIGHTINGS}")
    rankable = [
        i
        for i in range(len(seq.tokens))
        if i not in seq.protected
        and not (stop_words is not None and stop_words.contains(seq.tokens[i]))
    ]
    if not rankable:
        return []
    base = base_prediction if base_prediction is not None else model.predict(seq)
    base_value = goal_eval(goal, base).value
    deltas = []
    for i in rankable:
        masked = seq.replace_token(i, MASK_TOKEN)
        deltas.append(base_value - goal_eval(goal, model.predict(masked)).value)
    if weighting == "softmax":
        shares = _softmax(deltas)
        importances = [s * d for s, d in zip(shares, deltas)]
    else:
        importances = list(deltas)
    ranked = sorted(zip(rankable, importances), key=lambda item: (-item[1], item[0]))
    return ranked


def _round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def adaptive_beam_width(beam: Sequence[BeamCandidate], b_min: int, b_max: int) -> int:
    """Next width from the share of retained candidates that improved.

    A candidate counts as improved when its ground-truth confidence dropped
    strictly below its parent's.  The width interpolates linearly between
    ``b_min`` (no improvements) and ``b_max`` (all improved), rounded half
    up and clamped.
    """
    if not beam:
        raise ValueError("beam must be non-empty")
    improved = sum(1 for c in beam if c.score.value < c.parent_score.value)
    width = Fraction(b_max - b_min, len(beam)) * improved + b_min
    return max(b_min, min(b_max, _round_half_up(width)))


def update_historical_best(
    current_best: BeamCandidate, beam: Sequence[BeamCandidate]
) -> BeamCandidate:
    """Lowest ground-truth confidence wins; ties keep the incumbent."""
    best = current_best
    for candidate in beam:
        if candidate.score.value < best.score.value:
            best = candidate
    return best


def backtrack_refill(
    beam: list[BeamCandidate], historical_best: BeamCandidate
) -> list[BeamCandidate]:
    """Swap the historical best in for the beam's worst member.

    Fires only when the historical best is strictly better than the worst
    (highest-confidence) member; ties on the worst pick the highest index.
    Beam size is preserved.
    """
    if not beam:
        return beam
    worst = 0
    for i in range(1, len(beam)):
        if beam[i].score.value >= beam[worst].score.value:
            worst = i
    if historical_best.score.value < beam[worst].score.value:
        return beam[:worst] + [historical_best] + beam[worst + 1 :]
    return list(beam)


class _QueryWindow:
    """Issued-query counting relative to the start of one search."""

    def __init__(self, session: CachingSession):
        self.session = session
        self.start = session.ledger.issued

    @property
    def used(self) -> int:
        return self.session.ledger.issued - self.start

    def exhausted(self, limit: int | None) -> bool:
        return limit is not None and self.used >= limit


def run_search(
    case: TestCase,
    model: ThreatModel | CachingSession,
    config: SearchConfig,
    perturbation: Perturbation,
    constraints: Sequence[Constraint] = (),
    goal: GoalFunction | None = None,
    stop_words: StopWordList | None = None,
    protected_spans: tuple[str, ...] = (),
    original_prediction: Prediction | None = None,
) -> TestResult:
    """Search for a label-flipping perturbation of one test case.

    The caller is expected to have applied the skip rule (the unperturbed
    prediction matches the ground truth).  Returns the historically best
    candidate found, as soon as any scored candidate succeeds or once the
    position order is exhausted or the query budget is hit.
    """
    started = time.perf_counter()
    if not isinstance(model, CachingSession):
        model = CachingSession(model)
    if goal is None:
        goal = GoalFunction(ground_truth=case.ground_truth)
    window = _QueryWindow(model)

    original = join_prompt_example(case.prompt, case.example, protected_spans)
    base_pred = original_prediction if original_prediction is not None else model.predict(original)
    base_score = goal_eval(goal, base_pred)

    ranking = compute_wir(
        original,
        goal,
        model,
        stop_words=stop_words,
        base_prediction=base_pred,
        weighting=config.wir_weighting,
    )
    order = [position for position, _ in ranking]

    start_candidate = BeamCandidate(
        seq=original, edits=EditList(), score=base_score, parent_score=base_score
    )
    beam: list[BeamCandidate] = [start_candidate]
    best = start_candidate
    records: list[IterationRecord] = []
    stop_reason = "positions-exhausted"

    for iteration, position in enumerate(order):
        if window.exhausted(config.max_queries):
            stop_reason = "query-budget"
            break

        scored: list[BeamCandidate] = []
        budget_hit = False
        for member in beam:
            for child_seq in neighbors(perturbation, member.seq, position, stop_words):
                if child_seq.tokens == member.seq.tokens:
                    child_edits = member.edits
                else:
                    child_edits = member.edits.add(
                        Edit(
                            position=position,
                            original=member.seq.tokens[position],
                            replacement=child_seq.tokens[position],
                            kind=perturbation.edit_kind,
                        )
                    )
                ok, _ = check_constraints(constraints, original, child_seq)
                if not ok:
                    continue
                if window.exhausted(config.max_queries):
                    budget_hit = True
                    break
                pred = model.predict(child_seq)
                scored.append(
                    BeamCandidate(
                        seq=child_seq,
                        edits=child_edits,
                        score=goal_eval(goal, pred),
                        parent_score=member.score,
                    )
                )
            if budget_hit:
                break

        best = update_historical_best(best, scored)

        if config.enable_adaptive_width:
            width = config.b_max if iteration == 0 else adaptive_beam_width(
                beam, config.b_min, config.b_max
            )
        else:
            width = config.fixed_width
        indicator_sum = sum(1 for c in beam if c.score.value < c.parent_score.value)
        iteration_best = min((c.score.value for c in scored), default=best.score.value)
        records.append(
            IterationRecord(
                iteration=iteration,
                position=position,
                width=width,
                indicator_sum=indicator_sum,
                iteration_best=iteration_best,
                historical_best=best.score.value,
                queries=window.used,
            )
        )

        if any(candidate.score.succeeded for candidate in scored):
            stop_reason = "success"
            break
        if budget_hit:
            stop_reason = "query-budget"
            break

        ordered = sorted(scored, key=lambda c: c.score.value)
        beam = ordered[:width]
        if config.enable_backtracking:
            beam = backtrack_refill(beam, best)

    trace = SearchTrace(
        records=tuple(records), stop_reason=stop_reason, wir=tuple(ranking)
    )
    example_len = len(original.tokens) - original.prompt_len
    return TestResult(
        case_id=case.id,
        succeeded=best.score.succeeded,
        skipped=False,
        original_text=original.text,
        adversarial_text=best.seq.text,
        edits=best.edits,
        confidence_before=base_score.value,
        confidence_after=best.score.value,
        queries_issued=window.used,
        wall_seconds=time.perf_counter() - started,
        perturbable_len=len(original.tokens) - len(original.protected),
        example_perturbable_len=example_len
        - sum(1 for i in original.protected if i >= original.prompt_len),
        trace=trace,
    )
