"""Per-review alarmingness and per-app exploitable scores.

Alarmingness is the geometric mean of convincingness and severity. App
scores combine a bucket-weighted alarmingness mean with a min-max
normalized count of top-bucket reviews; their geometric mean is the
exploitable score used for ranking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus, Review
from .errors import ValidationError

logger = logging.getLogger(__name__)

SCORE_MIN = 1.0
SCORE_MAX = 4.0
_RANGE_SLACK = 1e-12

# Bucket weights reported for the original 11.57M-review run; kept as the
# fallback when the current corpus leaves a bucket empty. They are rounded
# to three digits so they sum to 0.99909, not 1; normalize before use.
REFERENCE_TABLE_WEIGHTS = (2.29e-3, 6.08e-2, 9.36e-1)

# Default audit scrutiny window: the 50 most alarming reviews with at
# least slightly-alarming scores.
TOP_ALARMING_K = 50
TOP_ALARMING_MIN_SCORE = 2.0


def _check_range(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or not (SCORE_MIN - _RANGE_SLACK <= value <= SCORE_MAX + _RANGE_SLACK):
        raise ValidationError(f"{name} must lie in [1, 4], got {value!r}")
    return min(max(value, SCORE_MIN), SCORE_MAX)


def alarmingness(convincingness: float, severity: float) -> float:
    """Geometric mean of convincingness and severity, both in [1, 4]."""
    c = _check_range("convincingness", convincingness)
    s = _check_range("severity", severity)
    return math.sqrt(c * s)


@dataclass(frozen=True)
class AlarmingnessScore:
    """Per-review rating triple; alarmingness is derived, not free."""

    convincingness: float
    severity: float
    alarmingness: float

    def __post_init__(self):
        c = _check_range("convincingness", self.convincingness)
        s = _check_range("severity", self.severity)
        if abs(self.alarmingness - math.sqrt(c * s)) > 1e-12:
            raise ValidationError(
                "alarmingness must equal sqrt(convincingness * severity)")

    @classmethod
    def from_ratings(cls, convincingness: float, severity: float) -> "AlarmingnessScore":
        return cls(convincingness, severity, alarmingness(convincingness, severity))


def bucket_of(score: float) -> int:
    """Bucket index 1..3 for an alarmingness score.

    Half-open ranges [1,2), [2,3), [3,4]: a boundary score belongs to the
    upper bucket.
    """
    score = _check_range("alarmingness", score)
    if score < 2.0:
        return 1
    if score < 3.0:
        return 2
    return 3


@dataclass(frozen=True)
class BucketSpec:
    """Three alarmingness buckets with weights summing to 1."""

    weights: tuple[float, float, float]

    def __post_init__(self):
        if len(self.weights) != 3:
            raise ValidationError("bucket spec needs exactly three weights")
        if any(w < 0 for w in self.weights):
            raise ValidationError("bucket weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValidationError(f"bucket weights must sum to 1, got {sum(self.weights)!r}")

    def weight_of(self, score: float) -> float:
        return self.weights[bucket_of(score) - 1]


def compute_bucket_weights(probabilities: Sequence[float]) -> tuple[float, float, float]:
    """Normalized inverse probabilities: w_i = (1/p_i) / sum_j (1/p_j).

    Rare buckets get large weights, which is what lets a handful of
    highly alarming reviews dominate an app's weighted mean.
    """
    if len(probabilities) != 3:
        raise ValidationError("need one probability per bucket")
    for p in probabilities:
        if not (isinstance(p, (int, float)) and math.isfinite(p) and p > 0):
            raise ValidationError(f"bucket probabilities must be positive, got {p!r}")
    inverses = [1.0 / float(p) for p in probabilities]
    total = sum(inverses)
    w1, w2, w3 = (inv / total for inv in inverses)
    return (w1, w2, w3)


def reference_bucket_spec() -> BucketSpec:
    """Fallback spec from the bundled table weights, normalized to sum 1."""
    total = sum(REFERENCE_TABLE_WEIGHTS)
    return BucketSpec(tuple(w / total for w in REFERENCE_TABLE_WEIGHTS))


def empirical_bucket_probabilities(scores: Iterable[float]) -> tuple[float, float, float]:
    counts = [0, 0, 0]
    n = 0
    for score in scores:
        counts[bucket_of(score) - 1] += 1
        n += 1
    if n == 0:
        raise ValidationError("no scores to bucket")
    return tuple(c / n for c in counts)


def bucket_spec_from_scores(scores: Iterable[float],
                            fallback: BucketSpec | None = None) -> BucketSpec:
    """Weights from the current corpus's empirical bucket probabilities.

    Weights are corpus-dependent by construction; when any bucket is
    empty the inverse is undefined, so the bundled reference spec (or the
    given fallback) is used instead.
    """
    probabilities = empirical_bucket_probabilities(scores)
    if min(probabilities) <= 0.0:
        logger.warning("empty alarmingness bucket %s; using fallback weights",
                       [i + 1 for i, p in enumerate(probabilities) if p == 0.0])
        return fallback or reference_bucket_spec()
    return BucketSpec(compute_bucket_weights(probabilities))


def weighted_alarmingness_mean(scores: Sequence[float], spec: BucketSpec) -> float:
    """Bucket-weighted mean: sum(a_i * w(a_i)) / sum(w(a_i))."""
    if not scores:
        raise ValidationError("an app with zero scored reviews has no weighted mean")
    numerator = 0.0
    denominator = 0.0
    for score in scores:
        score = _check_range("alarmingness", score)
        weight = spec.weight_of(score)
        numerator += score * weight
        denominator += weight
    if denominator == 0.0:
        raise ValidationError("all bucket weights are zero")
    return numerator / denominator


def normalize_counts(counts: Mapping[str, float]) -> dict[str, float]:
    """Min-max map of counts onto [1, 4].

    1 + 3 * (c - min) / (max - min); when every count is equal there is
    nothing to differentiate, so all apps map to 1.
    """
    if not counts:
        raise ValidationError("need at least one app to normalize counts")
    values = list(counts.values())
    lo, hi = min(values), max(values)
    if hi == lo:
        return {app_id: 1.0 for app_id in counts}
    span = hi - lo
    return {app_id: 1.0 + 3.0 * (c - lo) / span for app_id, c in counts.items()}


def exploitable_score(weighted_mean: float, normalized_count: float) -> float:
    """Geometric mean of the weighted alarmingness mean and the
    normalized top-bucket count."""
    wm = _check_range("weighted_mean", weighted_mean)
    nc = _check_range("normalized_count", normalized_count)
    return math.sqrt(wm * nc)


@dataclass(frozen=True)
class AppScore:
    app_id: str
    weighted_mean: float
    bucket3_count: int
    normalized_count: float
    exploitable_score: float
    rank: int | None = None

    def to_row(self) -> dict:
        return {
            "app_id": self.app_id,
            "weighted_mean": self.weighted_mean,
            "bucket3_count": self.bucket3_count,
            "normalized_count": self.normalized_count,
            "exploitable_score": self.exploitable_score,
            "rank": self.rank,
        }


def score_apps(
    corpus: Corpus,
    review_alarmingness: Mapping[str, float],
    spec: BucketSpec,
) -> tuple[list[AppScore], list[str]]:
    """Aggregate per-review alarmingness into ranked per-app scores.

    Returns (ranked scores, app ids excluded for having no scored
    reviews). Ranking is by exploitable score descending, ties broken by
    bucket-3 count descending then app_id ascending.
    """
    unknown = sorted(rid for rid in review_alarmingness if rid not in corpus.reviews)
    if unknown:
        raise ValidationError("scored reviews not in corpus: " + ", ".join(unknown))

    per_app: dict[str, list[float]] = {}
    for rid, score in review_alarmingness.items():
        per_app.setdefault(corpus.reviews[rid].app_id, []).append(
            _check_range("alarmingness", score))

    excluded = sorted(app_id for app_id in corpus.apps if app_id not in per_app)
    if not per_app:
        return [], excluded

    bucket3 = {
        app_id: sum(1 for a in scores if bucket_of(a) == 3)
        for app_id, scores in per_app.items()
    }
    normalized = normalize_counts(bucket3)

    results = []
    for app_id, scores in per_app.items():
        wm = weighted_alarmingness_mean(scores, spec)
        results.append(AppScore(
            app_id=app_id,
            weighted_mean=wm,
            bucket3_count=bucket3[app_id],
            normalized_count=normalized[app_id],
            exploitable_score=exploitable_score(wm, normalized[app_id]),
        ))
    results.sort(key=lambda s: (-s.exploitable_score, -s.bucket3_count, s.app_id))
    ranked = [replace(score, rank=i + 1) for i, score in enumerate(results)]
    return ranked, excluded


def top_alarming_reviews(
    corpus: Corpus,
    review_alarmingness: Mapping[str, float],
    app_id: str,
    k: int = TOP_ALARMING_K,
    min_score: float = TOP_ALARMING_MIN_SCORE,
) -> list[tuple[Review, float]]:
    """Up to k most alarming reviews of an app with scores >= min_score,
    descending, ties broken by review_id."""
    if app_id not in corpus.apps:
        raise ValidationError(f"unknown app: {app_id}")
    qualifying = [
        (corpus.reviews[rid], score)
        for rid, score in review_alarmingness.items()
        if rid in corpus.reviews
        and corpus.reviews[rid].app_id == app_id
        and score >= min_score
    ]
    qualifying.sort(key=lambda pair: (-pair[1], pair[0].review_id))
    return qualifying[:k]
