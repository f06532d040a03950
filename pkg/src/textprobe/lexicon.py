"""Synonym, stop-word, and part-of-speech lexicons.

Two synonym sources are supported: a plain TSV (`word<TAB>syn1,syn2,...`)
so tests can run with tiny fixtures, and read-only WordNet database files
(the WNDB `data.noun` / `data.adj` / ... layout), where the synonyms of a
word are all lemmas sharing a synset with it.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyLexicon, ParseError

COARSE_POS_TAGS = frozenset({"noun", "verb", "adj", "adv", "other"})

_WNDB_SS_TYPE_TO_POS = {
    "n": "noun",
    "v": "verb",
    "a": "adj",
    "s": "adj",  # adjective satellite
    "r": "adv",
}


@dataclass(frozen=True)
class SynonymLexicon:
    """Map from lowercase lemma to an ordered, deduplicated synonym list."""

    entries: Mapping[str, tuple[str, ...]]
    source: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def synonyms(self, word: str) -> list[str]:
        """Case-insensitive lookup; mirrors the first letter's casing.

        Missing words yield an empty list.
        """
        found = self.entries.get(word.lower(), ())
        if word[:1].isupper():
            return [s[:1].upper() + s[1:] for s in found]
        return list(found)


@dataclass(frozen=True)
class StopWordList:
    words: frozenset[str] = field(default_factory=frozenset)
    source: str = ""

    def __len__(self) -> int:
        return len(self.words)

    def contains(self, word: str) -> bool:
        return word.lower() in self.words

    __contains__ = contains


@dataclass(frozen=True)
class PosLexicon:
    """Lookup-only part-of-speech tags, coarse tag set."""

    entries: Mapping[str, frozenset[str]]
    source: str = ""

    def tags(self, word: str) -> frozenset[str]:
        return self.entries.get(word.lower(), frozenset())


def _dedup_synonyms(word: str, candidates: Iterable[str]) -> tuple[str, ...]:
    """Normalize a synonym list: lowercase, drop self and duplicates."""
    out: dict[str, None] = {}
    for cand in candidates:
        low = cand.strip().lower()
        if low and low != word:
            out.setdefault(low)
    return tuple(out)


def load_synonym_tsv(path: str | Path) -> SynonymLexicon:
    """Parse a `word<TAB>syn1,syn2,...` file; `#` starts a comment line."""
    path = Path(path)
    entries: dict[str, tuple[str, ...]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise ParseError("expected word<TAB>synonyms", source=str(path), line=lineno)
            word, _, rest = line.partition("\t")
            word = word.strip().lower()
            if not word:
                raise ParseError("empty word field", source=str(path), line=lineno)
            syns = _dedup_synonyms(word, rest.split(","))
            if word in entries:
                syns = entries[word] + tuple(s for s in syns if s not in entries[word])
            entries[word] = syns
    if not entries:
        raise EmptyLexicon(f"no entries in {path}")
    return SynonymLexicon(entries=entries, source=str(path))


def _parse_wndb_line(line: str, path: str, lineno: int) -> list[str] | None:
    """Extract the lemma list of one WNDB data-file synset line."""
    if line.startswith(" ") or not line.strip():
        return None  # license header or blank
    fields = line.split(" ")
    if len(fields) < 5:
        raise ParseError("truncated synset line", source=path, line=lineno)
    try:
        word_count = int(fields[3], 16)
    except ValueError as exc:
        raise ParseError(f"bad word count {fields[3]!r}", source=path, line=lineno) from exc
    lemmas = []
    for k in range(word_count):
        idx = 4 + 2 * k
        if idx >= len(fields):
            raise ParseError("word count exceeds fields", source=path, line=lineno)
        lemma = fields[idx]
        # strip adjective syntax markers like "wet(a)"
        if lemma.endswith(")") and "(" in lemma:
            lemma = lemma[: lemma.index("(")]
        lemmas.append(lemma.lower())
    return lemmas


def _iter_wndb_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.name.startswith("data."))
        if not files:
            raise ParseError("no data.* files in directory", source=str(path))
        return files
    return [path]


def load_wordnet_synonyms(path: str | Path) -> SynonymLexicon:
    """Load synonyms from WNDB data files (a single file or a directory).

    Multi-word collocations (lemmas containing underscores) are skipped.
    """
    path = Path(path)
    raw: dict[str, list[str]] = {}
    for data_file in _iter_wndb_files(path):
        with data_file.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                lemmas = _parse_wndb_line(line, str(data_file), lineno)
                if lemmas is None:
                    continue
                lemmas = [w for w in lemmas if "_" not in w]
                for word in lemmas:
                    raw.setdefault(word, []).extend(w for w in lemmas if w != word)
    entries = {w: _dedup_synonyms(w, syns) for w, syns in raw.items()}
    entries = {w: syns for w, syns in entries.items() if syns}
    if not entries:
        raise EmptyLexicon(f"no synsets with usable lemmas in {path}")
    return SynonymLexicon(entries=entries, source=str(path))


def load_lexicon(path: str | Path, format: str = "tsv") -> SynonymLexicon:
    if format == "tsv":
        return load_synonym_tsv(path)
    if format == "wordnet-db":
        return load_wordnet_synonyms(path)
    raise ValueError(f"unknown lexicon format {format!r}")


def load_wordnet_pos(path: str | Path) -> PosLexicon:
    """Tag every lemma by the WNDB files it appears in."""
    path = Path(path)
    entries: dict[str, set[str]] = {}
    for data_file in _iter_wndb_files(path):
        with data_file.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.startswith(" ") or not line.strip():
                    continue
                fields = line.split(" ")
                tag = _WNDB_SS_TYPE_TO_POS.get(fields[2] if len(fields) > 2 else "", "other")
                lemmas = _parse_wndb_line(line, str(data_file), lineno) or []
                for word in lemmas:
                    if "_" not in word:
                        entries.setdefault(word, set()).add(tag)
    return PosLexicon(
        entries={w: frozenset(tags) for w, tags in entries.items()}, source=str(path)
    )


def load_pos_tsv(path: str | Path) -> PosLexicon:
    """Parse a `word<TAB>tag1,tag2` file with tags from the coarse tag set."""
    path = Path(path)
    entries: dict[str, frozenset[str]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            word, _, rest = line.partition("\t")
            tags = {t.strip().lower() for t in rest.split(",") if t.strip()}
            bad = tags - COARSE_POS_TAGS
            if bad:
                raise ParseError(f"unknown tags {sorted(bad)}", source=str(path), line=lineno)
            entries[word.strip().lower()] = frozenset(tags)
    return PosLexicon(entries=entries, source=str(path))


def load_stop_words(path: str | Path) -> StopWordList:
    """One word per line, UTF-8, `#` comments."""
    path = Path(path)
    words = set()
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word and not word.startswith("#"):
                words.add(word.lower())
    return StopWordList(words=frozenset(words), source=str(path))


def default_stop_words() -> StopWordList:
    """The packaged English stop-word list (NLTK corpus list)."""
    ref = importlib.resources.files("textprobe").joinpath("data/stopwords_en.txt")
    words = {
        w.strip().lower()
        for w in ref.read_text(encoding="utf-8").splitlines()
        if w.strip() and not w.startswith("#")
    }
    return StopWordList(words=frozenset(words), source="builtin:stopwords_en")
