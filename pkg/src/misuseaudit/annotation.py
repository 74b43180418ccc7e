"""Human Likert ratings: storage, merging, reliability, training export.

Two annotators rate reviews for convincingness and severity on a 1..4
scale. Ratings for the same review are averaged; when the two raters'
alarmingness values land on opposite sides of 3 the review is flagged
for discussion and a recorded resolution overrides the average.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus
from .errors import ValidationError

LIKERT_VALUES = (1, 2, 3, 4)


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _check_likert(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{name} must be a number in {{1,2,3,4}}")
    if float(value) not in (1.0, 2.0, 3.0, 4.0):
        raise ValidationError(f"{name} must be one of {{1,2,3,4}}, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class AnnotationRecord:
    review_id: str
    annotator_id: str
    convincingness: int
    severity: int
    timestamp: str = ""

    def __post_init__(self):
        object.__setattr__(self, "convincingness",
                           _check_likert("convincingness", self.convincingness))
        object.__setattr__(self, "severity",
                           _check_likert("severity", self.severity))
        if not self.review_id or not self.annotator_id:
            raise ValidationError("review_id and annotator_id are required")

    @property
    def alarmingness(self) -> float:
        """Geometric mean of this rater's two scores."""
        return math.sqrt(self.convincingness * self.severity)


@dataclass(frozen=True)
class Resolution:
    """Outcome of a discussion; overrides the averaged scores."""

    review_id: str
    convincingness: int
    severity: int
    timestamp: str = ""


@dataclass(frozen=True)
class MergedAnnotation:
    review_id: str
    convincingness: float
    severity: float
    alarmingness: float
    needs_discussion: bool
    resolved: bool


def straddles_median(alarmingness_a: float, alarmingness_b: float) -> bool:
    """True when the raters disagree about the >= 3 boundary."""
    return (alarmingness_a >= 3.0) != (alarmingness_b >= 3.0)


def merge_annotations(
    records: Sequence[AnnotationRecord],
    resolution: Resolution | None = None,
) -> MergedAnnotation:
    """Average 1 or 2 annotator records for one review.

    A straddle disagreement (one rater's alarmingness >= 3, the other's
    < 3) sets needs_discussion; the merged annotation stays unresolved
    until a resolution is supplied, which replaces the averaged scores.
    """
    if not records:
        raise ValidationError("cannot merge zero annotation records")
    if len(records) > 2:
        raise ValidationError("at most two annotators per review")
    review_ids = {r.review_id for r in records}
    if len(review_ids) != 1:
        raise ValidationError(f"records span multiple reviews: {sorted(review_ids)}")
    if len(records) == 2 and records[0].annotator_id == records[1].annotator_id:
        raise ValidationError("two records from the same annotator")

    review_id = records[0].review_id
    needs_discussion = (
        len(records) == 2
        and straddles_median(records[0].alarmingness, records[1].alarmingness)
    )
    if resolution is not None:
        conv = float(_check_likert("convincingness", resolution.convincingness))
        sev = float(_check_likert("severity", resolution.severity))
        resolved = True
    else:
        conv = sum(r.convincingness for r in records) / len(records)
        sev = sum(r.severity for r in records) / len(records)
        resolved = not needs_discussion
    return MergedAnnotation(
        review_id=review_id,
        convincingness=conv,
        severity=sev,
        alarmingness=math.sqrt(conv * sev),
        needs_discussion=needs_discussion,
        resolved=resolved,
    )


class AnnotationStore:
    """Append-friendly JSONL store of annotations and resolutions.

    Upserts by (review_id, annotator_id): later lines for the same key
    win on load, and every write appends. Writers must be serialized by
    the caller (the service holds a lock); reads see a snapshot.
    """

    def __init__(self, path: str | Path | None = None,
                 valid_review_ids: Iterable[str] | None = None):
        self.path = Path(path) if path is not None else None
        self._valid_ids = set(valid_review_ids) if valid_review_ids is not None else None
        self._records: dict[tuple[str, str], AnnotationRecord] = {}
        self._resolutions: dict[str, Resolution] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                if row.get("kind") == "resolution":
                    res = Resolution(
                        review_id=row["review_id"],
                        convincingness=int(row["convincingness"]),
                        severity=int(row["severity"]),
                        timestamp=row.get("timestamp", ""),
                    )
                    self._resolutions[res.review_id] = res
                else:
                    rec = AnnotationRecord(
                        review_id=row["review_id"],
                        annotator_id=row["annotator_id"],
                        convincingness=row["convincingness"],
                        severity=row["severity"],
                        timestamp=row.get("timestamp", ""),
                    )
                    self._records[(rec.review_id, rec.annotator_id)] = rec

    def _append(self, row: dict) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")

    def _check_review(self, review_id: str) -> None:
        if self._valid_ids is not None and review_id not in self._valid_ids:
            raise ValidationError(f"unknown review: {review_id}")

    def record(self, record: AnnotationRecord) -> AnnotationRecord:
        """Upsert one annotator's rating for one review."""
        self._check_review(record.review_id)
        # A third rater would make the review unmergeable downstream.
        raters = {aid for rid, aid in self._records if rid == record.review_id}
        if record.annotator_id not in raters and len(raters) >= 2:
            raise ValidationError(
                f"review {record.review_id} already has two annotators")
        if not record.timestamp:
            record = AnnotationRecord(
                record.review_id, record.annotator_id,
                record.convincingness, record.severity, _now(),
            )
        self._records[(record.review_id, record.annotator_id)] = record
        self._append({
            "kind": "annotation",
            "review_id": record.review_id,
            "annotator_id": record.annotator_id,
            "convincingness": record.convincingness,
            "severity": record.severity,
            "timestamp": record.timestamp,
        })
        return record

    def record_resolution(self, review_id: str, convincingness: int,
                          severity: int) -> Resolution:
        self._check_review(review_id)
        if not self.records_for(review_id):
            raise ValidationError(f"no annotations to resolve for {review_id}")
        resolution = Resolution(review_id, _check_likert("convincingness", convincingness),
                                _check_likert("severity", severity), _now())
        self._resolutions[review_id] = resolution
        self._append({
            "kind": "resolution",
            "review_id": review_id,
            "convincingness": resolution.convincingness,
            "severity": resolution.severity,
            "timestamp": resolution.timestamp,
        })
        return resolution

    def records_for(self, review_id: str) -> list[AnnotationRecord]:
        return [rec for (rid, _aid), rec in self._records.items() if rid == review_id]

    def annotated_review_ids(self, annotator_id: str | None = None) -> set[str]:
        if annotator_id is None:
            return {rid for rid, _aid in self._records}
        return {rid for rid, aid in self._records if aid == annotator_id}

    def annotator_ids(self) -> list[str]:
        return sorted({aid for _rid, aid in self._records})

    def merged(self, review_id: str) -> MergedAnnotation:
        return merge_annotations(self.records_for(review_id),
                                 self._resolutions.get(review_id))

    def merge_all(self) -> dict[str, MergedAnnotation]:
        return {rid: self.merged(rid) for rid in sorted(self.annotated_review_ids())}

    def needs_discussion(self) -> list[MergedAnnotation]:
        """Straddle cases, resolved or not, newest-unresolved first order
        left to the caller; sorted by review_id here."""
        return [m for m in self.merge_all().values() if m.needs_discussion]

    def rating_matrix(self, target: str = "convincingness",
                      annotator_ids: Sequence[str] | None = None):
        """Targets-by-raters matrix over reviews rated by every annotator.

        Returns (matrix, review_ids, annotator_ids).
        """
        if target not in ("convincingness", "severity", "alarmingness"):
            raise ValidationError(f"unknown rating target: {target!r}")
        raters = list(annotator_ids) if annotator_ids else self.annotator_ids()
        complete = sorted(
            rid for rid in self.annotated_review_ids()
            if all((rid, aid) in self._records for aid in raters)
        )
        matrix = np.array(
            [[getattr(self._records[(rid, aid)], target) for aid in raters]
             for rid in complete],
            dtype=float,
        )
        return matrix, complete, raters


def icc3k(matrix) -> float:
    """Two-way mixed, consistency, average-measures intraclass correlation.

    Computed as (MS_rows - MS_error) / MS_rows from the two-way ANOVA
    decomposition without interaction, on a complete targets x raters
    matrix.
    """
    data = np.asarray(matrix, dtype=float)
    if data.ndim != 2:
        raise ValidationError("ratings must form a 2-D matrix")
    n_targets, n_raters = data.shape
    if n_targets < 2 or n_raters < 2:
        raise ValidationError("need at least 2 targets and 2 raters")
    if not np.isfinite(data).all():
        raise ValidationError("rating matrix must be complete and finite")

    grand = data.mean()
    row_means = data.mean(axis=1)
    col_means = data.mean(axis=0)
    ss_rows = n_raters * float(((row_means - grand) ** 2).sum())
    ss_cols = n_targets * float(((col_means - grand) ** 2).sum())
    ss_total = float(((data - grand) ** 2).sum())
    ss_error = ss_total - ss_rows - ss_cols

    ms_rows = ss_rows / (n_targets - 1)
    ms_error = ss_error / ((n_targets - 1) * (n_raters - 1))
    if ms_rows <= 0.0:
        raise ValidationError("zero between-target variance; ICC undefined")
    return (ms_rows - ms_error) / ms_rows


def export_training_set(
    merged: dict[str, MergedAnnotation] | Iterable[MergedAnnotation],
    corpus: Corpus,
    path: str | Path,
) -> int:
    """Write the (text, convincingness, severity) training CSV.

    Review text is title + body; no annotator or reviewer identifiers
    leave this function. Unresolved discussion cases abort the export.
    """
    annotations = list(merged.values()) if isinstance(merged, dict) else list(merged)
    pending = sorted(m.review_id for m in annotations
                     if m.needs_discussion and not m.resolved)
    if pending:
        raise ValidationError(
            "unresolved discussion cases block export: " + ", ".join(pending)
        )
    missing = sorted(m.review_id for m in annotations
                     if m.review_id not in corpus.reviews)
    if missing:
        raise ValidationError("annotations for unknown reviews: " + ", ".join(missing))

    annotations.sort(key=lambda m: m.review_id)
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["text", "convincingness", "severity"])
        for item in annotations:
            review = corpus.reviews[item.review_id]
            writer.writerow([review.text, repr(item.convincingness),
                             repr(item.severity)])
    return len(annotations)


def load_training_set(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a training CSV back into (texts, targets[n, 2])."""
    texts: list[str] = []
    rows: list[tuple[float, float]] = []
    with Path(path).open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"text", "convincingness", "severity"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns text, convincingness, severity")
        for row in reader:
            texts.append(row["text"])
            rows.append((float(row["convincingness"]), float(row["severity"])))
    return texts, np.array(rows, dtype=float)
