"""Valence/arousal/dominance profiles of reviews by reviewer type.

Sentences containing a keyword are pooled per reviewer type, adjectives
are extracted with a pluggable tagger (default: membership in a bundled
adjective list), and each group's profile is the arithmetic mean of the
lexicon triples of its adjectives. Duplicates are kept so frequent
adjectives weigh more.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import Review
from .errors import IngestError, ValidationError
from .keywords import KeywordSet, matches_text

_WORD_RE = re.compile(r"[a-z]+")
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")


@dataclass(frozen=True)
class VADLexicon:
    """word -> (valence, arousal, dominance), each in [0, 1]."""

    entries: Mapping[str, tuple[float, float, float]]

    def __post_init__(self):
        for word, triple in self.entries.items():
            if word != word.lower() or not word:
                raise ValidationError(f"lexicon words must be lowercase, got {word!r}")
            if len(triple) != 3 or any(not (0.0 <= v <= 1.0) for v in triple):
                raise ValidationError(f"VAD values for {word!r} must lie in [0, 1]")

    def lookup(self, word: str) -> tuple[float, float, float] | None:
        return self.entries.get(word)

    def __len__(self):
        return len(self.entries)


def _parse_lexicon_lines(lines: Iterable[str], source: str) -> VADLexicon:
    entries = {}
    seen_data = False
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise IngestError(f"{source}:{lineno}: expected 4 tab-separated columns")
        word = parts[0].strip().lower()
        try:
            triple = tuple(float(p) for p in parts[1:])
        except ValueError:
            if not seen_data:
                continue  # header row
            raise IngestError(f"{source}:{lineno}: non-numeric VAD values")
        entries[word] = triple
        seen_data = True
    if not entries:
        raise IngestError(f"lexicon {source} has no entries")
    return VADLexicon(entries)


def load_vad_lexicon(path) -> VADLexicon:
    """TSV columns word, valence, arousal, dominance; # comments allowed.

    A header row is skipped when its value columns are not numeric.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read lexicon {path}: {exc}") from exc
    return _parse_lexicon_lines(lines, str(path))


@lru_cache(maxsize=1)
def bundled_vad_lexicon() -> VADLexicon:
    """Small demonstration lexicon covering the bundled adjective list's
    most review-typical words; real runs should load a full lexicon."""
    text = resources.files("misuseaudit.data").joinpath("vad_demo.tsv").read_text("utf-8")
    return _parse_lexicon_lines(text.splitlines(), "vad_demo.tsv")


class AdjectiveTagger(Protocol):
    def adjectives(self, tokens: Sequence[str]) -> list[str]:
        """Subsequence of tokens judged to be adjectives, duplicates kept."""
        ...


@dataclass(frozen=True)
class LexiconTagger:
    """Tags a token as an adjective iff it appears in a fixed word list."""

    words: frozenset[str]

    def adjectives(self, tokens: Sequence[str]) -> list[str]:
        return [t for t in tokens if t in self.words]


@lru_cache(maxsize=1)
def bundled_adjectives() -> frozenset[str]:
    text = resources.files("misuseaudit.data").joinpath("adjectives.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.split() if w.strip())


def default_tagger() -> LexiconTagger:
    return LexiconTagger(bundled_adjectives())


def split_sentences(title: str, body: str) -> list[str]:
    """Body split on .!? runs, with the whole title as one leading sentence."""
    sentences = []
    if title.strip():
        sentences.append(title.strip())
    sentences.extend(s.strip() for s in _SENTENCE_SPLIT_RE.split(body) if s.strip())
    return sentences


def relevant_sentences(review: Review, keywords: KeywordSet) -> list[str]:
    return [s for s in split_sentences(review.title, review.body)
            if matches_text(s, keywords)]


def extract_adjectives(sentences: Iterable[str], tagger: AdjectiveTagger) -> list[str]:
    tokens = [m.group(0) for s in sentences for m in _WORD_RE.finditer(s.lower())]
    return tagger.adjectives(tokens)


@dataclass(frozen=True)
class VADProfile:
    reviewer_type: str
    adjective_count: int
    mean_valence: float | None
    mean_arousal: float | None
    mean_dominance: float | None

    @property
    def empty(self) -> bool:
        return self.adjective_count == 0

    def to_row(self) -> dict:
        return {
            "reviewer_type": self.reviewer_type,
            "adjective_count": self.adjective_count,
            "mean_valence": self.mean_valence,
            "mean_arousal": self.mean_arousal,
            "mean_dominance": self.mean_dominance,
        }


def vad_profiles(
    reviews: Iterable[Review],
    lexicon: VADLexicon,
    keywords: KeywordSet,
    tagger: AdjectiveTagger | None = None,
) -> list[VADProfile]:
    """One profile per reviewer type present, sorted by type name.

    Adjectives are pooled across the group's relevant sentences before
    averaging; adjective_count counts only lexicon-covered occurrences.
    """
    tagger = tagger or default_tagger()
    pooled: dict[str, list[tuple[float, float, float]]] = {}
    for review in reviews:
        group = review.reviewer_type.value
        triples = pooled.setdefault(group, [])
        for adjective in extract_adjectives(relevant_sentences(review, keywords), tagger):
            triple = lexicon.lookup(adjective)
            if triple is not None:
                triples.append(triple)
    profiles = []
    for group in sorted(pooled):
        triples = pooled[group]
        if triples:
            n = len(triples)
            profiles.append(VADProfile(
                reviewer_type=group,
                adjective_count=n,
                mean_valence=sum(t[0] for t in triples) / n,
                mean_arousal=sum(t[1] for t in triples) / n,
                mean_dominance=sum(t[2] for t in triples) / n,
            ))
        else:
            profiles.append(VADProfile(group, 0, None, None, None))
    return profiles


def write_profiles_json(profiles: Sequence[VADProfile], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([p.to_row() for p in profiles], fh, indent=2, sort_keys=True)
        fh.write("\n")
