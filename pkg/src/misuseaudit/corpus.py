"""App and review corpora: ingestion, dedup, keyword filtering, sampling.

A corpus is immutable after ingest; every operation here is a pure read
that returns new values, so corpora can be shared freely across readers.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import keywords as kw
from .errors import CorruptInputError, IngestError, ValidationError

logger = logging.getLogger(__name__)

REVIEW_FIELDS = ("review_id", "app_id", "title", "body", "rating", "date",
                 "reviewer_type", "story_type")
APP_FIELDS = ("app_id", "name", "description", "category", "source_dataset")


class SourceDataset(enum.Enum):
    SEED = "seed"
    SNOWBALL = "snowball"
    UTILITY = "utility"
    CUSTOM = "custom"


class ReviewerType(enum.Enum):
    ABUSER = "abuser"
    VICTIM = "victim"
    THIRD_PERSON = "third_person"
    UNKNOWN = "unknown"


class StoryType(enum.Enum):
    EXPLOITABLE_ACT = "exploitable_act"
    POTENTIAL = "potential"
    NONE = "none"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class App:
    app_id: str
    name: str
    description: str = ""
    category: str | None = None
    source_dataset: SourceDataset = SourceDataset.CUSTOM

    def to_row(self) -> dict:
        return {
            "app_id": self.app_id,
            "name": self.name,
            "description": self.description,
            "category": self.category,
            "source_dataset": self.source_dataset.value,
        }


@dataclass(frozen=True)
class Review:
    review_id: str
    app_id: str
    title: str = ""
    body: str = ""
    rating: int | None = None
    date: dt.date | None = None
    reviewer_type: ReviewerType = ReviewerType.UNKNOWN
    story_type: StoryType = StoryType.UNKNOWN

    @property
    def text(self) -> str:
        """Title and body joined, title first."""
        return f"{self.title} {self.body}".strip() if self.title else self.body

    def to_row(self) -> dict:
        return {
            "review_id": self.review_id,
            "app_id": self.app_id,
            "title": self.title,
            "body": self.body,
            "rating": self.rating,
            "date": self.date.isoformat() if self.date else None,
            "reviewer_type": self.reviewer_type.value,
            "story_type": self.story_type.value,
        }


@dataclass(frozen=True)
class FileReport:
    """Per-file ingestion accounting."""

    path: str
    kind: str  # "apps" | "reviews"
    rows_read: int
    rows_ingested: int
    rows_malformed: int
    rows_unknown_app: int
    rows_duplicate_id: int


@dataclass(frozen=True)
class Provenance:
    files: tuple[FileReport, ...] = ()
    ingested_at: str = ""

    @property
    def skipped_unknown_app(self) -> int:
        return sum(f.rows_unknown_app for f in self.files)

    @property
    def skipped_malformed(self) -> int:
        return sum(f.rows_malformed for f in self.files)


@dataclass(frozen=True)
class Corpus:
    apps: dict[str, App]
    reviews: dict[str, Review]
    provenance: Provenance = field(default_factory=Provenance)

    def reviews_by_app(self) -> dict[str, list[Review]]:
        grouped: dict[str, list[Review]] = {app_id: [] for app_id in self.apps}
        for review in self.reviews.values():
            grouped[review.app_id].append(review)
        return grouped


def normalize_body(text: str) -> str:
    """Duplicate criterion: lowercase and collapse all whitespace runs."""
    return " ".join(text.lower().split())


def _parse_date(value) -> dt.date | None:
    if value is None or value == "":
        return None
    if isinstance(value, dt.date):
        return value
    text = str(value).strip()
    try:
        return dt.date.fromisoformat(text[:10]) if "T" in text else dt.date.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"bad date {value!r}") from exc


def _parse_rating(value) -> int | None:
    if value is None or value == "":
        return None
    rating = int(str(value).strip())
    if not 1 <= rating <= 5:
        raise ValueError(f"rating out of range: {value!r}")
    return rating


def _app_from_row(row: Mapping) -> App:
    app_id = str(row.get("app_id") or "").strip()
    name = str(row.get("name") or "").strip()
    if not app_id or not name:
        raise ValueError("app row missing app_id or name")
    source = row.get("source_dataset")
    dataset = SourceDataset(source) if source not in (None, "") else SourceDataset.CUSTOM
    category = row.get("category")
    return App(
        app_id=app_id,
        name=name,
        description=str(row.get("description") or ""),
        category=str(category) if category not in (None, "") else None,
        source_dataset=dataset,
    )


def _review_from_row(row: Mapping) -> Review:
    review_id = str(row.get("review_id") or "").strip()
    app_id = str(row.get("app_id") or "").strip()
    body = str(row.get("body") or "")
    if not review_id or not app_id:
        raise ValueError("review row missing review_id or app_id")
    if not body.strip():
        raise ValueError("review body empty")
    reviewer = row.get("reviewer_type")
    story = row.get("story_type")
    return Review(
        review_id=review_id,
        app_id=app_id,
        title=str(row.get("title") or ""),
        body=body,
        rating=_parse_rating(row.get("rating")),
        date=_parse_date(row.get("date")),
        reviewer_type=ReviewerType(reviewer) if reviewer not in (None, "") else ReviewerType.UNKNOWN,
        story_type=StoryType(story) if story not in (None, "") else StoryType.UNKNOWN,
    )


def _read_rows(path: Path, file_format: str) -> list[tuple[dict | None, str | None]]:
    """Yield (row, error) pairs; row is None when the line failed to parse."""
    rows: list[tuple[dict | None, str | None]] = []
    try:
        if file_format == "jsonl":
            with path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        if not isinstance(obj, dict):
                            raise ValueError("line is not an object")
                        rows.append((obj, None))
                    except ValueError as exc:
                        rows.append((None, str(exc)))
        elif file_format == "csv":
            with path.open(encoding="utf-8", newline="") as handle:
                for record in csv.DictReader(handle):
                    rows.append((dict(record), None))
        else:
            raise IngestError(f"unknown ingest format: {file_format!r}")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise IngestError(f"cannot parse {path}: {exc}") from exc
    return rows


def _classify_file(rows: Sequence[tuple[dict | None, str | None]], path: Path) -> str:
    saw_parsed = False
    for row, _err in rows:
        if row is None:
            continue
        saw_parsed = True
        if "review_id" in row:
            return "reviews"
        if "app_id" in row and "name" in row:
            return "apps"
    if rows and not saw_parsed:
        raise CorruptInputError(f"{path}: no row parsed")
    raise IngestError(f"cannot tell whether {path} holds apps or reviews")


def ingest(paths: Sequence[str | Path], file_format: str = "jsonl") -> Corpus:
    """Read app and review files into a corpus.

    File kind (apps vs reviews) is detected from the row keys, and app
    files are applied before review files regardless of argument order so
    referential integrity holds. Malformed rows are skipped and counted;
    a file where more than half the rows are malformed raises
    CorruptInputError, and an unreadable file raises IngestError.
    """
    parsed: list[tuple[Path, str, list[tuple[dict | None, str | None]]]] = []
    for raw_path in paths:
        path = Path(raw_path)
        rows = _read_rows(path, file_format)
        kind = _classify_file(rows, path) if rows else "reviews"
        parsed.append((path, kind, rows))

    apps: dict[str, App] = {}
    reviews: dict[str, Review] = {}
    reports: list[FileReport] = []
    # Apps first so reviews can resolve their app ids.
    for kind_wanted in ("apps", "reviews"):
        for path, kind, rows in parsed:
            if kind != kind_wanted:
                continue
            ingested = malformed = unknown_app = duplicate = 0
            for row, parse_error in rows:
                if row is None:
                    malformed += 1
                    continue
                try:
                    if kind == "apps":
                        app = _app_from_row(row)
                        if app.app_id in apps:
                            duplicate += 1
                            continue
                        apps[app.app_id] = app
                    else:
                        review = _review_from_row(row)
                        if review.app_id not in apps:
                            unknown_app += 1
                            continue
                        if review.review_id in reviews:
                            duplicate += 1
                            continue
                        reviews[review.review_id] = review
                    ingested += 1
                except ValueError:
                    malformed += 1
            rows_read = len(rows)
            if rows_read and malformed * 2 > rows_read:
                raise CorruptInputError(
                    f"{path}: {malformed} of {rows_read} rows malformed"
                )
            if malformed or unknown_app:
                logger.warning(
                    "%s: skipped %d malformed, %d unknown-app rows",
                    path, malformed, unknown_app,
                )
            reports.append(FileReport(
                path=str(path), kind=kind, rows_read=rows_read,
                rows_ingested=ingested, rows_malformed=malformed,
                rows_unknown_app=unknown_app, rows_duplicate_id=duplicate,
            ))

    provenance = Provenance(
        files=tuple(reports),
        ingested_at=dt.datetime.now(dt.timezone.utc).isoformat(),
    )
    return Corpus(apps=apps, reviews=reviews, provenance=provenance)


def _survivor_key(review: Review) -> tuple:
    # Earliest date wins; undated reviews sort after dated ones; review_id
    # breaks remaining ties.
    return (review.date is None, review.date or dt.date.max, review.review_id)


def deduplicate(corpus: Corpus) -> tuple[Corpus, int]:
    """Collapse reviews with identical normalized bodies.

    The survivor of each duplicate group is the earliest-dated review
    (undated ones lose), with review_id as the final tie-break. Returns
    the deduplicated corpus and the number of removed reviews.
    """
    survivors: dict[str, Review] = {}
    for review in corpus.reviews.values():
        key = normalize_body(review.body)
        incumbent = survivors.get(key)
        if incumbent is None or _survivor_key(review) < _survivor_key(incumbent):
            survivors[key] = review
    keep = {r.review_id for r in survivors.values()}
    deduped = {rid: r for rid, r in corpus.reviews.items() if rid in keep}
    removed = len(corpus.reviews) - len(deduped)
    return Corpus(apps=corpus.apps, reviews=deduped, provenance=corpus.provenance), removed


def filter_by_keywords(corpus: Corpus, keyword_set: kw.KeywordSet) -> list[str]:
    """Ids of reviews whose lowercased title+body carries any keyword stem."""
    return [
        review.review_id
        for review in corpus.reviews.values()
        if kw.matches_text(f"{review.title} {review.body}", keyword_set)
    ]


def sample(review_ids: Iterable[str], n: int, seed: int) -> list[str]:
    """Uniform sample without replacement, a pure function of
    (population, n, seed): the population is sorted before drawing."""
    population = sorted(set(review_ids))
    if n < 0:
        raise ValidationError("sample size must be nonnegative")
    if n > len(population):
        raise ValidationError(
            f"sample size {n} exceeds population {len(population)}"
        )
    return random.Random(seed).sample(population, n)


def build_training_pool(
    corpus: Corpus,
    keyword_set: kw.KeywordSet,
    n_match: int,
    n_nonmatch: int,
    seed: int,
) -> list[str]:
    """Union of a matching and a nonmatching sample, deduplicated afterwards.

    Balancing matching and nonmatching reviews keeps the downstream
    training corpus from keying on the keywords themselves.
    """
    matching = set(filter_by_keywords(corpus, keyword_set))
    nonmatching = [rid for rid in corpus.reviews if rid not in matching]
    if n_match > len(matching):
        raise ValidationError(
            f"need {n_match} matching reviews, corpus has {len(matching)}"
        )
    if n_nonmatch > len(nonmatching):
        raise ValidationError(
            f"need {n_nonmatch} nonmatching reviews, corpus has {len(nonmatching)}"
        )
    rng = random.Random(seed)
    picked = rng.sample(sorted(matching), n_match)
    picked += rng.sample(sorted(nonmatching), n_nonmatch)

    pool = Corpus(
        apps=corpus.apps,
        reviews={rid: corpus.reviews[rid] for rid in picked},
    )
    deduped, _removed = deduplicate(pool)
    return sorted(deduped.reviews)


def load_similar_map(path: str | Path) -> dict[str, list[str]]:
    """Parse a similar-apps file: JSONL of {app_id, similar: [app_id, ...]}."""
    similar: dict[str, list[str]] = {}
    try:
        with Path(path).open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                similar[str(row["app_id"])] = [str(s) for s in row.get("similar", [])]
    except OSError as exc:
        raise IngestError(f"cannot read similar-apps file {path}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise IngestError(f"cannot parse similar-apps file {path}: {exc}") from exc
    return similar


def snowball(
    confirmed_app_ids: Iterable[str],
    similar_map: Mapping[str, Sequence[str]],
) -> list[str]:
    """Similar apps of all confirmed apps, minus the confirmed set itself,
    sorted by app_id."""
    confirmed = set(confirmed_app_ids)
    found: set[str] = set()
    for app_id in confirmed:
        found.update(similar_map.get(app_id, ()))
    return sorted(found - confirmed)


def save_corpus(corpus: Corpus, apps_path: str | Path, reviews_path: str | Path) -> None:
    """Write the corpus back out as canonical JSONL files."""
    with Path(apps_path).open("w", encoding="utf-8") as handle:
        for app in corpus.apps.values():
            handle.write(json.dumps(app.to_row(), ensure_ascii=False) + "\n")
    with Path(reviews_path).open("w", encoding="utf-8") as handle:
        for review in corpus.reviews.values():
            handle.write(json.dumps(review.to_row(), ensure_ascii=False) + "\n")
