"""Goal function, perturbations, and linguistic constraints.

The goal is untargeted: a candidate succeeds as soon as the threat model's
top label moves away from the ground truth (ties count as unchanged).
Perturbations enumerate single-position token substitutions; constraints
filter candidates that drift too far from the original text.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, LabelMismatch
from .lexicon import PosLexicon, StopWordList, SynonymLexicon
from .models import Prediction
from .text import TextSequence

PERTURBATION_KINDS = frozenset(
    {
        "synonym-swap",
        "char-insert",
        "char-delete",
        "char-swap",
        "word-insert",
        "word-delete",
        "word-swap",
    }
)

# Perturbation kind -> EditList kind.
EDIT_KIND = {kind: kind for kind in PERTURBATION_KINDS} | {"synonym-swap": "synonym"}


@dataclass(frozen=True)
class GoalFunction:
    ground_truth: str
    mode: str = "untargeted"

    def __post_init__(self) -> None:
        if self.mode != "untargeted":
            raise ConfigError(f"unsupported goal mode {self.mode!r}")


@dataclass(frozen=True)
class GoalScore:
    """Ground-truth confidence of a candidate, and whether it misleads."""

    value: float
    succeeded: bool


def goal_eval(goal: GoalFunction, pred: Prediction) -> GoalScore:
    """Score a prediction: lower ground-truth confidence is better.

    ``succeeded`` means some other label strictly outranks the ground
    truth; an exact tie is conservatively treated as unchanged.
    """
    if goal.ground_truth not in pred.scores:
        raise LabelMismatch(f"label {goal.ground_truth!r} absent from prediction")
    value = pred.scores[goal.ground_truth]
    succeeded = any(
        score > value for label, score in pred.scores.items() if label != goal.ground_truth
    )
    return GoalScore(value=value, succeeded=succeeded)


def _diff_positions(original: TextSequence, candidate: TextSequence) -> list[int]:
    return [
        i for i, (a, b) in enumerate(zip(original.tokens, candidate.tokens)) if a != b
    ]


class Constraint:
    """Base: check a candidate against the original it was derived from."""

    name = "constraint"

    def violation(self, original: TextSequence, candidate: TextSequence) -> str | None:
        raise NotImplementedError


class StopWordFilter(Constraint):
    name = "stop-word-filter"

    def __init__(self, stop_words: StopWordList):
        if not stop_words.words:
            raise ConfigError("stop-word filtering enabled with an empty list")
        self.stop_words = stop_words

    def violation(self, original, candidate):
        for pos in _diff_positions(original, candidate):
            if self.stop_words.contains(original.tokens[pos]):
                return f"{self.name}: edited stop word {original.tokens[pos]!r} at {pos}"
        return None


class MaxChangeRate(Constraint):
    name = "max-change-rate"

    def __init__(self, rate: float):
        if not 0 < rate <= 1:
            raise ConfigError(f"max change rate must be in (0, 1], got {rate}")
        self.rate = rate

    def violation(self, original, candidate):
        if not original.tokens:
            return None
        changed = len(_diff_positions(original, candidate))
        if changed / len(original.tokens) > self.rate:
            return f"{self.name}: {changed}/{len(original.tokens)} > {self.rate}"
        return None


class MaxEdits(Constraint):
    name = "max-edits"

    def __init__(self, limit: int):
        if limit < 1:
            raise ConfigError(f"max edits must be >= 1, got {limit}")
        self.limit = limit

    def violation(self, original, candidate):
        changed = len(_diff_positions(original, candidate))
        if changed > self.limit:
            return f"{self.name}: {changed} > {self.limit}"
        return None


class Blacklist(Constraint):
    name = "blacklist"

    def __init__(self, words: set[str] | frozenset[str] | tuple[str, ...]):
        self.words = frozenset(w.lower() for w in words)

    def violation(self, original, candidate):
        for pos in _diff_positions(original, candidate):
            if candidate.tokens[pos].lower() in self.words:
                return f"{self.name}: introduced {candidate.tokens[pos]!r} at {pos}"
        return None


class PosMatch(Constraint):
    """Replacement must share a coarse POS tag with the original word.

    Lookup-only tagging cannot constrain words absent from the lexicon, so
    an edit passes when either side has no known tags.
    """

    name = "pos-match"

    def __init__(self, pos_lexicon: PosLexicon):
        self.pos_lexicon = pos_lexicon

    def violation(self, original, candidate):
        for pos in _diff_positions(original, candidate):
            before = self.pos_lexicon.tags(original.tokens[pos])
            after = self.pos_lexicon.tags(candidate.tokens[pos])
            if before and after and not (before & after):
                return (
                    f"{self.name}: {original.tokens[pos]!r}{sorted(before)} vs "
                    f"{candidate.tokens[pos]!r}{sorted(after)}"
                )
        return None


def check_constraints(
    constraints: list[Constraint] | tuple[Constraint, ...],
    original: TextSequence,
    candidate: TextSequence,
) -> tuple[bool, list[str]]:
    """Evaluate every constraint; collect the names of the ones violated."""
    violations = []
    for constraint in constraints:
        message = constraint.violation(original, candidate)
        if message is not None:
            violations.append(message)
    return not violations, violations


@dataclass(frozen=True)
class Perturbation:
    """A single-position token substitution family."""

    kind: str
    lexicon: SynonymLexicon | None = None
    replacement_words: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "synonym-swap" and self.lexicon is None:
            raise ConfigError("synonym-swap requires a loaded lexicon")

    @property
    def edit_kind(self) -> str:
        return EDIT_KIND[self.kind]


def _token_variants(perturbation: Perturbation, token: str) -> list[str]:
    kind = perturbation.kind
    if kind == "synonym-swap":
        variants = perturbation.lexicon.synonyms(token)
    elif kind == "char-insert":
        # duplicate each character once
        variants = [token[:i] + token[i] + token[i:] for i in range(len(token))]
    elif kind == "char-delete":
        variants = [token[:i] + token[i + 1 :] for i in range(len(token))]
        variants = [v for v in variants if v]
    elif kind == "char-swap":
        variants = [
            token[:i] + token[i + 1] + token[i] + token[i + 2 :]
            for i in range(len(token) - 1)
        ]
    elif kind == "word-insert":
        variants = [f"{token} {token}"]
    elif kind == "word-delete":
        variants = [""]
    else:  # word-swap
        variants = list(perturbation.replacement_words)
    deduped = dict.fromkeys(v for v in variants if v != token)
    return list(deduped)


def neighbors(
    perturbation: Perturbation,
    seq: TextSequence,
    position: int,
    stop_words: StopWordList | None = None,
) -> list[TextSequence]:
    """All single-edit variants of ``seq`` at ``position``, parent first.

    The unchanged parent is always a member, so a wide enough beam covers
    the full per-position product space.  Protected positions and (when a
    list is supplied) stop-word positions yield the parent alone.
    """
    if position in seq.protected:
        return [seq]
    token = seq.tokens[position]
    if stop_words is not None and stop_words.contains(token):
        return [seq]
    return [seq] + [
        seq.replace_token(position, variant)
        for variant in _token_variants(perturbation, token)
    ]
