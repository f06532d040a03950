"""Tokenization and the joint prompt+example sequence representation.

A :class:`TextSequence` keeps word tokens and the inter-token separators
side by side so that ``detokenize(tokenize(s)) == s`` holds for any input
string.  Tokens are what perturbations operate on; separators (whitespace
and sentence punctuation) are carried along untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import EditOnProtected, PositionOutOfRange

# Sentence/bracket/quote punctuation is peeled off into separators.  Other
# non-word characters (%, $, =, ...) carry meaning and stay as tokens.
_SEPARATOR_PUNCT = set(".,;:!?¡¿\"'`()[]{}«»“”‘’…‚„‹›—–-")
# Characters that stay inside a token when flanked by word characters on
# both sides: apostrophes ("don't") and hyphens ("state-of-the-art").
_JOINERS = {"'", "’", "-"}

EDIT_KINDS = frozenset(
    {
        "synonym",
        "char-insert",
        "char-delete",
        "char-swap",
        "word-insert",
        "word-delete",
        "word-swap",
    }
)


def _is_word_char(c: str) -> bool:
    return c.isalnum() or c == "_"


@dataclass(frozen=True)
class TextSequence:
    """An immutable tokenized text with lossless detokenization.

    ``separators`` always has ``len(tokens) + 1`` entries; entry ``i`` is the
    text between token ``i-1`` and token ``i`` (entry 0 is the leading text,
    the last entry is the trailing text).
    """

    tokens: tuple[str, ...]
    separators: tuple[str, ...]
    prompt_len: int = 0
    protected: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if len(self.separators) != len(self.tokens) + 1:
            raise ValueError(
                f"need {len(self.tokens) + 1} separators, got {len(self.separators)}"
            )
        if not 0 <= self.prompt_len <= len(self.tokens):
            raise ValueError(f"prompt_len {self.prompt_len} out of range")
        if any(not 0 <= i < len(self.tokens) for i in self.protected):
            raise ValueError("protected index out of range")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return detokenize(self)

    def replace_token(self, position: int, token: str) -> "TextSequence":
        """Return a copy with ``tokens[position]`` substituted."""
        if not 0 <= position < len(self.tokens):
            raise PositionOutOfRange(f"position {position} not in [0, {len(self.tokens)})")
        tokens = self.tokens[:position] + (token,) + self.tokens[position + 1 :]
        return replace(self, tokens=tokens)


@dataclass(frozen=True)
class Edit:
    """A single token-level substitution at a fixed position."""

    position: int
    original: str
    replacement: str
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in EDIT_KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")


@dataclass(frozen=True)
class EditList:
    """An ordered set of edits, at most one per token position."""

    edits: tuple[Edit, ...] = ()

    def __post_init__(self) -> None:
        positions = [e.position for e in self.edits]
        if len(positions) != len(set(positions)):
            raise ValueError("more than one edit at the same position")

    def __len__(self) -> int:
        return len(self.edits)

    def __iter__(self):
        return iter(self.edits)

    def add(self, edit: Edit) -> "EditList":
        return EditList(self.edits + (edit,))

    def to_records(self) -> list[dict]:
        return [
            {
                "position": e.position,
                "original": e.original,
                "replacement": e.replacement,
                "kind": e.kind,
            }
            for e in self.edits
        ]


@dataclass(frozen=True)
class TestCase:
    """One dataset record to probe: a prompt, an example, and its label."""

    __test__ = False  # not a pytest class, despite the name

    prompt: str
    example: str
    ground_truth: str
    id: str


def tokenize(text: str) -> TextSequence:
    """Split ``text`` into word tokens and lossless separators.

    Tokens are maximal runs of word characters (letters, digits, underscore)
    with internal apostrophes/hyphens kept; whitespace and sentence
    punctuation go into separators; any other symbol character becomes a
    single-character token of its own.
    """
    tokens: list[str] = []
    separators: list[str] = [""]
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if _is_word_char(c):
            j = i + 1
            while j < n:
                if _is_word_char(text[j]):
                    j += 1
                elif text[j] in _JOINERS and j + 1 < n and _is_word_char(text[j + 1]):
                    j += 2
                else:
                    break
            tokens.append(text[i:j])
            separators.append("")
            i = j
        elif c.isspace() or c in _SEPARATOR_PUNCT:
            separators[-1] += c
            i += 1
        else:
            tokens.append(c)
            separators.append("")
            i += 1
    return TextSequence(tokens=tuple(tokens), separators=tuple(separators))


def detokenize(seq: TextSequence) -> str:
    parts = [seq.separators[0]]
    for token, sep in zip(seq.tokens, seq.separators[1:]):
        parts.append(token)
        parts.append(sep)
    return "".join(parts)


def _token_char_spans(seq: TextSequence) -> list[tuple[int, int]]:
    """Character span of every token within ``detokenize(seq)``."""
    spans = []
    offset = len(seq.separators[0])
    for token, sep in zip(seq.tokens, seq.separators[1:]):
        spans.append((offset, offset + len(token)))
        offset += len(token) + len(sep)
    return spans


def join_prompt_example(
    prompt: str,
    example: str,
    protected_spans: tuple[str, ...] = (),
) -> TextSequence:
    """Concatenate prompt and example into one perturbable sequence.

    ``prompt_len`` records how many leading tokens belong to the prompt.
    Every occurrence of each ``protected_spans`` literal inside the prompt
    marks the overlapped prompt tokens as protected.
    """
    p = tokenize(prompt)
    e = tokenize(example)
    glue = ""
    if prompt and example and not prompt[-1].isspace() and not example[0].isspace():
        glue = " "
    middle = p.separators[-1] + glue + e.separators[0]
    tokens = p.tokens + e.tokens
    separators = p.separators[:-1] + (middle,) + e.separators[1:]

    protected: set[int] = set()
    if protected_spans:
        spans = _token_char_spans(p)
        for literal in protected_spans:
            if not literal:
                continue
            start = prompt.find(literal)
            while start != -1:
                end = start + len(literal)
                for idx, (t0, t1) in enumerate(spans):
                    if t0 < end and start < t1:
                        protected.add(idx)
                start = prompt.find(literal, start + 1)

    return TextSequence(
        tokens=tokens,
        separators=separators,
        prompt_len=len(p.tokens),
        protected=frozenset(protected),
    )


def apply_edits(seq: TextSequence, edits: EditList) -> TextSequence:
    """Replay ``edits`` onto ``seq``; separators and protection are kept."""
    tokens = list(seq.tokens)
    for edit in edits:
        if not 0 <= edit.position < len(tokens):
            raise PositionOutOfRange(
                f"edit position {edit.position} not in [0, {len(tokens)})"
            )
        if edit.position in seq.protected:
            raise EditOnProtected(f"position {edit.position} is protected")
        tokens[edit.position] = edit.replacement
    return replace(seq, tokens=tuple(tokens))


def change_count(original: TextSequence, perturbed: TextSequence) -> int:
    """Number of token positions at which the two sequences differ."""
    if len(original.tokens) != len(perturbed.tokens):
        raise ValueError("sequences differ in length")
    return sum(a != b for a, b in zip(original.tokens, perturbed.tokens))
