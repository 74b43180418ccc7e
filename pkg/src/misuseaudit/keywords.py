"""Keyword sets used to sample, strip, and baseline-match reviews.

The seed set is {spy, stalk, stealth}. It can be expanded to a fixpoint
through a bundled synonym table, and a curated extended set adds six
description-oriented verbs for the baselines. Matching is substring-stem
on lowercased text, so "spying" and "stalker" match their stems; every
module that needs keyword matching goes through :func:`matches_text` /
:func:`token_has_keyword` so the rule stays identical everywhere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ValidationError

SEED_TERMS = frozenset({"spy", "stalk", "stealth"})

# Curated description verbs added on top of the seed set for baselines.
EXTENDED_EXTRA_TERMS = frozenset(
    {"track", "monitor", "locate", "control", "stolen", "lost"}
)

# Expansion terms that manual scrutiny discards; applying these as the
# exclusion list reduces the expanded set back to the seed terms.
DEFAULT_PRUNED_TERMS = frozenset({"descry", "chaff", "haunt"})


class KeywordOrigin(enum.Enum):
    SEED = "seed"
    EXPANDED = "expanded"
    EXTENDED = "extended"
    CUSTOM = "custom"


@dataclass(frozen=True)
class KeywordSet:
    """A non-empty set of lowercase, whitespace-free stems."""

    terms: frozenset[str]
    origin: KeywordOrigin = KeywordOrigin.CUSTOM

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValidationError("keyword set must be non-empty")
        for term in self.terms:
            if term != term.lower() or any(ch.isspace() for ch in term) or not term:
                raise ValidationError(f"bad keyword term: {term!r}")

    def __contains__(self, term: str) -> bool:
        return term in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(sorted(self.terms))


def seed_keywords() -> KeywordSet:
    """The three-term seed set used for sampling reviews."""
    return KeywordSet(SEED_TERMS, KeywordOrigin.SEED)


def extended_keywords() -> KeywordSet:
    """Seed terms plus the six curated description verbs (9 terms)."""
    return KeywordSet(SEED_TERMS | EXTENDED_EXTRA_TERMS, KeywordOrigin.EXTENDED)


def custom_keywords(terms: Iterable[str]) -> KeywordSet:
    return KeywordSet(frozenset(t.strip().lower() for t in terms if t.strip()),
                      KeywordOrigin.CUSTOM)


def expand_synonyms(
    keyword_set: KeywordSet,
    synonym_table: Mapping[str, Iterable[str]],
    exclude: Iterable[str] = (),
) -> KeywordSet:
    """Close the keyword set under synonym lookup.

    Repeatedly queries the table with every term in the set until no new
    word appears (least fixpoint). Lookup is case-insensitive; multiword
    synonyms are skipped, matching the stem-based matching rule. Terms in
    ``exclude`` are dropped from the result (``DEFAULT_PRUNED_TERMS``
    reproduces the manually pruned final set).
    """
    table = {
        word.lower(): {s.lower() for s in syns}
        for word, syns in synonym_table.items()
    }
    excluded = {t.lower() for t in exclude}
    terms = set(keyword_set.terms)
    frontier = set(terms)
    while frontier:
        discovered: set[str] = set()
        for term in frontier:
            for syn in table.get(term, ()):
                syn = syn.strip()
                if not syn or any(ch.isspace() for ch in syn):
                    continue
                if syn not in terms:
                    discovered.add(syn)
        terms |= discovered
        frontier = discovered
    terms -= excluded
    if not terms:
        raise ValidationError("exclusion list removed every keyword")
    return KeywordSet(frozenset(terms), KeywordOrigin.EXPANDED)


def load_synonym_table(path: str | Path) -> dict[str, set[str]]:
    """Parse a TSV synonym table: word TAB comma-separated synonyms."""
    table: dict[str, set[str]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        word, _, rest = line.partition("\t")
        syns = {s.strip().lower() for s in rest.split(",") if s.strip()}
        table.setdefault(word.strip().lower(), set()).update(syns)
    return table


def bundled_synonym_table() -> dict[str, set[str]]:
    with resources.as_file(
        resources.files("misuseaudit.data").joinpath("synonyms.tsv")
    ) as path:
        return load_synonym_table(path)


def matches_text(text: str, keyword_set: KeywordSet) -> bool:
    """True when any keyword occurs as a substring stem of the text."""
    lowered = text.lower()
    return any(term in lowered for term in keyword_set.terms)


def token_has_keyword(token: str, keyword_set: KeywordSet) -> bool:
    """True when a single token carries any keyword stem."""
    lowered = token.lower()
    return any(term in lowered for term in keyword_set.terms)
