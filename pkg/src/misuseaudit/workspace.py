"""Shared on-disk workspace so the CLI and the HTTP service see one state.

A workspace is a directory with fixed file names per pipeline artifact.
Stage functions read their inputs from the workspace and write their
outputs back; given the same inputs, config, and seed they produce
byte-identical artifacts (manifest timings aside).
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import annotation, corpus as corpus_mod, evaluation, features, keywords, regressor, scoring
from .affect import bundled_vad_lexicon, load_vad_lexicon, vad_profiles, write_profiles_json
from .errors import DataIOError, ValidationError

logger = logging.getLogger(__name__)

VERDICT_STATES = ("confirmed_exploitable", "rejected", "pending")


class Workspace:
    """Directory layout shared by every pipeline stage."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def ensure(self) -> "Workspace":
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifests_dir.mkdir(exist_ok=True)
        return self

    @property
    def apps_path(self) -> Path:
        return self.root / "apps.jsonl"

    @property
    def reviews_path(self) -> Path:
        return self.root / "reviews.jsonl"

    @property
    def annotations_path(self) -> Path:
        return self.root / "annotations.jsonl"

    @property
    def embeddings_path(self) -> Path:
        return self.root / "embeddings.jsonl"

    @property
    def training_path(self) -> Path:
        return self.root / "training.csv"

    @property
    def model_path(self) -> Path:
        return self.root / "model.npz"

    @property
    def review_scores_path(self) -> Path:
        return self.root / "review_scores.jsonl"

    @property
    def app_scores_path(self) -> Path:
        return self.root / "app_scores.jsonl"

    @property
    def sweep_path(self) -> Path:
        return self.root / "sweep.csv"

    @property
    def ground_truth_path(self) -> Path:
        return self.root / "ground_truth.jsonl"

    @property
    def verdicts_path(self) -> Path:
        return self.root / "verdicts.jsonl"

    @property
    def profiles_path(self) -> Path:
        return self.root / "profiles.json"

    @property
    def manifests_dir(self) -> Path:
        return self.root / "manifests"

    def has_corpus(self) -> bool:
        return self.apps_path.exists() and self.reviews_path.exists()

    def load_corpus(self) -> corpus_mod.Corpus:
        if not self.has_corpus():
            raise DataIOError(
                f"no corpus in workspace {self.root}; run ingest first")
        return corpus_mod.ingest([self.apps_path, self.reviews_path])

    def save_corpus(self, corpus: corpus_mod.Corpus) -> None:
        self.ensure()
        corpus_mod.save_corpus(corpus, self.apps_path, self.reviews_path)

    def annotation_store(self) -> annotation.AnnotationStore:
        self.ensure()
        return annotation.AnnotationStore(self.annotations_path)


# ---------------------------------------------------------------------------
# per-review score file

def save_review_scores(scores: Mapping[str, scoring.AlarmingnessScore], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for review_id in sorted(scores):
            s = scores[review_id]
            fh.write(json.dumps({
                "review_id": review_id,
                "convincingness": s.convincingness,
                "severity": s.severity,
                "alarmingness": s.alarmingness,
            }, sort_keys=True) + "\n")


def load_review_scores(path) -> dict[str, scoring.AlarmingnessScore]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataIOError(f"cannot read review scores {path}: {exc}") from exc
    scores = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            scores[row["review_id"]] = scoring.AlarmingnessScore(
                convincingness=row["convincingness"],
                severity=row["severity"],
                alarmingness=row["alarmingness"],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            raise DataIOError(f"{path}:{lineno}: bad review-score row: {exc}") from exc
    return scores


def save_app_scores(ranked: Sequence[scoring.AppScore], excluded: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for score in ranked:
            fh.write(json.dumps(score.to_row(), sort_keys=True) + "\n")
        for app_id in excluded:
            fh.write(json.dumps({"app_id": app_id, "excluded": True}, sort_keys=True) + "\n")


def load_app_scores(path) -> tuple[list[scoring.AppScore], list[str]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataIOError(f"cannot read app scores {path}: {exc}") from exc
    ranked, excluded = [], []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if row.get("excluded"):
                excluded.append(row["app_id"])
            else:
                ranked.append(scoring.AppScore(
                    app_id=row["app_id"],
                    weighted_mean=row["weighted_mean"],
                    bucket3_count=row["bucket3_count"],
                    normalized_count=row["normalized_count"],
                    exploitable_score=row["exploitable_score"],
                    rank=row.get("rank"),
                ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataIOError(f"{path}:{lineno}: bad app-score row: {exc}") from exc
    ranked.sort(key=lambda s: s.rank if s.rank is not None else 0)
    return ranked, excluded


# ---------------------------------------------------------------------------
# audit verdicts (append-only log; latest verdict per app wins)

@dataclass(frozen=True)
class AuditVerdict:
    app_id: str
    verdict: str
    auditor_id: str
    notes: str = ""
    evidence_review_ids: tuple[str, ...] = ()
    timestamp: str = ""

    def __post_init__(self):
        if self.verdict not in VERDICT_STATES:
            raise ValidationError(f"unknown verdict {self.verdict!r}")
        if not self.app_id or not self.auditor_id:
            raise ValidationError("verdict needs app_id and auditor_id")
        if self.verdict == "confirmed_exploitable" and not self.evidence_review_ids:
            raise ValidationError(
                "confirming an app requires at least one evidence review id")

    def to_row(self) -> dict:
        return {
            "app_id": self.app_id,
            "verdict": self.verdict,
            "auditor_id": self.auditor_id,
            "notes": self.notes,
            "evidence_review_ids": list(self.evidence_review_ids),
            "timestamp": self.timestamp,
        }


class VerdictLog:
    """Append-only JSONL verdict log; safe for concurrent appenders."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, verdict: AuditVerdict) -> AuditVerdict:
        if not verdict.timestamp:
            stamp = dt.datetime.now(dt.timezone.utc).isoformat()
            verdict = AuditVerdict(
                app_id=verdict.app_id, verdict=verdict.verdict,
                auditor_id=verdict.auditor_id, notes=verdict.notes,
                evidence_review_ids=verdict.evidence_review_ids, timestamp=stamp)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(verdict.to_row(), sort_keys=True) + "\n")
        return verdict

    def all(self) -> list[AuditVerdict]:
        if not self.path.exists():
            return []
        entries = []
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                entries.append(AuditVerdict(
                    app_id=row["app_id"], verdict=row["verdict"],
                    auditor_id=row["auditor_id"], notes=row.get("notes", ""),
                    evidence_review_ids=tuple(row.get("evidence_review_ids", ())),
                    timestamp=row.get("timestamp", "")))
            except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
                raise DataIOError(f"{self.path}:{lineno}: bad verdict row: {exc}") from exc
        return entries

    def latest_by_app(self) -> dict[str, AuditVerdict]:
        latest = {}
        for verdict in self.all():
            latest[verdict.app_id] = verdict
        return latest

    def confirmed_app_ids(self) -> list[str]:
        return sorted(app_id for app_id, v in self.latest_by_app().items()
                      if v.verdict == "confirmed_exploitable")


# ---------------------------------------------------------------------------
# pipeline stages

def default_provider(dimension: int = 512) -> features.HashingEmbedder:
    return features.HashingEmbedder(dimension=dimension)


def stage_embed(ws: Workspace, config: features.PreprocessConfig | None = None,
                provider: features.EmbeddingProvider | None = None,
                chunk_size: int = 64) -> int:
    """Embed every corpus review into the workspace cache."""
    config = config or features.PreprocessConfig()
    provider = provider or default_provider()
    corpus = ws.load_corpus()
    cache = features.EmbeddingCache(ws.embeddings_path)
    review_ids = sorted(corpus.reviews)
    features.embed_batch(review_ids, corpus, config, provider, cache, chunk_size)
    return len(review_ids)


def build_training_csv(ws: Workspace) -> int:
    """Merge resolved annotations into the training CSV."""
    corpus = ws.load_corpus()
    store = ws.annotation_store()
    merged = store.merge_all()
    annotation.export_training_set(merged, corpus, ws.training_path)
    return len(merged)


def stage_train(ws: Workspace, kernel_config: regressor.KernelConfig | None = None,
                config: features.PreprocessConfig | None = None,
                provider: features.EmbeddingProvider | None = None,
                seed: int = 0) -> regressor.RegressionModel:
    """Fit the regressor from the training CSV (built if absent)."""
    config = config or features.PreprocessConfig()
    provider = provider or default_provider()
    if not ws.training_path.exists():
        build_training_csv(ws)
    texts, targets = annotation.load_training_set(ws.training_path)
    X = features.embed_texts(texts, config, provider)
    model = regressor.train(X, targets, kernel_config,
                            provider_id=provider.provider_id, seed=seed)
    regressor.save_model(model, ws.model_path)
    return model


def stage_cv(ws: Workspace, folds: int = 10,
             kernel_config: regressor.KernelConfig | None = None,
             config: features.PreprocessConfig | None = None,
             provider: features.EmbeddingProvider | None = None,
             seed: int = 0) -> regressor.CVReport:
    config = config or features.PreprocessConfig()
    provider = provider or default_provider()
    if not ws.training_path.exists():
        build_training_csv(ws)
    texts, targets = annotation.load_training_set(ws.training_path)
    X = features.embed_texts(texts, config, provider)
    return regressor.cross_validate(X, targets, folds, kernel_config, seed,
                                    provider_id=provider.provider_id)


def stage_predict(ws: Workspace, config: features.PreprocessConfig | None = None,
                  provider: features.EmbeddingProvider | None = None,
                  allow_provider_mismatch: bool = False) -> int:
    """Score every corpus review with the trained model."""
    config = config or features.PreprocessConfig()
    provider = provider or default_provider()
    corpus = ws.load_corpus()
    if not ws.model_path.exists():
        raise DataIOError(f"no model at {ws.model_path}; run train first")
    model = regressor.load_model(ws.model_path)
    cache = features.EmbeddingCache(ws.embeddings_path)
    review_ids = sorted(corpus.reviews)
    X = features.embed_batch(review_ids, corpus, config, provider, cache)
    predictions = regressor.predict(model, X, provider_id=provider.provider_id,
                                    allow_provider_mismatch=allow_provider_mismatch)
    scores = {
        rid: scoring.AlarmingnessScore.from_ratings(float(c), float(s))
        for rid, (c, s) in zip(review_ids, predictions)
    }
    save_review_scores(scores, ws.review_scores_path)
    return len(scores)


def stage_score(ws: Workspace, spec: scoring.BucketSpec | None = None
                ) -> tuple[list[scoring.AppScore], list[str], scoring.BucketSpec]:
    """Aggregate review scores into the ranked app-score file."""
    corpus = ws.load_corpus()
    if not ws.review_scores_path.exists():
        raise DataIOError(f"no review scores at {ws.review_scores_path}; run predict first")
    review_scores = load_review_scores(ws.review_scores_path)
    alarmingness = {rid: s.alarmingness for rid, s in review_scores.items()}
    if spec is None:
        spec = scoring.bucket_spec_from_scores(alarmingness.values()) \
            if alarmingness else scoring.reference_bucket_spec()
    ranked, excluded = scoring.score_apps(corpus, alarmingness, spec)
    save_app_scores(ranked, excluded, ws.app_scores_path)
    return ranked, excluded, spec


def stage_sweep(ws: Workspace, start: float = evaluation.DEFAULT_SWEEP_START,
                stop: float = evaluation.DEFAULT_SWEEP_STOP,
                step: float = evaluation.DEFAULT_SWEEP_STEP
                ) -> tuple[list[evaluation.SweepRow], float]:
    """Sweep classification thresholds against the ground-truth labels."""
    if not ws.app_scores_path.exists():
        raise DataIOError(f"no app scores at {ws.app_scores_path}; run score first")
    if not ws.ground_truth_path.exists():
        raise DataIOError(f"no ground truth at {ws.ground_truth_path}")
    ranked, _ = load_app_scores(ws.app_scores_path)
    ground_truth = evaluation.load_ground_truth(ws.ground_truth_path)
    app_scores = {s.app_id: s.exploitable_score for s in ranked}
    missing = sorted(set(app_scores) - set(ground_truth))
    if missing:
        raise ValidationError(
            "apps lacking ground-truth labels: " + ", ".join(missing))
    rows, best = evaluation.sweep(app_scores, ground_truth, start, stop, step)
    evaluation.write_sweep_csv(rows, ws.sweep_path)
    return rows, best


def stage_affect(ws: Workspace, lexicon_path: str | Path | None = None,
                 keyword_set: keywords.KeywordSet | None = None) -> list:
    corpus = ws.load_corpus()
    lexicon = load_vad_lexicon(lexicon_path) if lexicon_path else bundled_vad_lexicon()
    keyword_set = keyword_set or keywords.seed_keywords()
    profiles = vad_profiles(corpus.reviews.values(), lexicon, keyword_set)
    write_profiles_json(profiles, ws.profiles_path)
    return profiles


def stage_recheck(ws: Workspace, app_ids: Sequence[str],
                  new_review_paths: Sequence[str | Path],
                  config: features.PreprocessConfig | None = None,
                  provider: features.EmbeddingProvider | None = None,
                  allow_provider_mismatch: bool = False) -> dict[str, str]:
    """Re-score flagged apps against a fresh review corpus only."""
    config = config or features.PreprocessConfig()
    provider = provider or default_provider()
    if not ws.model_path.exists():
        raise DataIOError(f"no model at {ws.model_path}; run train first")
    model = regressor.load_model(ws.model_path)
    new_corpus = corpus_mod.ingest(list(new_review_paths))
    review_ids = sorted(new_corpus.reviews)
    alarmingness: dict[str, float] = {}
    if review_ids:
        X = features.embed_batch(review_ids, new_corpus, config, provider)
        predictions = regressor.predict(model, X, provider_id=provider.provider_id,
                                        allow_provider_mismatch=allow_provider_mismatch)
        alarmingness = {
            rid: scoring.alarmingness(float(c), float(s))
            for rid, (c, s) in zip(review_ids, predictions)
        }
    spec = scoring.bucket_spec_from_scores(alarmingness.values()) \
        if alarmingness else scoring.reference_bucket_spec()
    return evaluation.relevance_recheck(app_ids, new_corpus, alarmingness, spec)


def build_report(ws: Workspace, app_ids: Sequence[str] | None = None,
                 k: int = scoring.TOP_ALARMING_K,
                 min_score: float = scoring.TOP_ALARMING_MIN_SCORE) -> list[dict]:
    """Per-app audit dossier: score row, top alarming reviews, verdict."""
    corpus = ws.load_corpus()
    ranked, _ = load_app_scores(ws.app_scores_path) if ws.app_scores_path.exists() else ([], [])
    by_app = {s.app_id: s for s in ranked}
    review_scores = load_review_scores(ws.review_scores_path) \
        if ws.review_scores_path.exists() else {}
    alarmingness = {rid: s.alarmingness for rid, s in review_scores.items()}
    verdicts = VerdictLog(ws.verdicts_path).latest_by_app()

    targets = list(app_ids) if app_ids else [s.app_id for s in ranked]
    dossiers = []
    for app_id in targets:
        if app_id not in corpus.apps:
            raise ValidationError(f"unknown app: {app_id}")
        app = corpus.apps[app_id]
        top = scoring.top_alarming_reviews(corpus, alarmingness, app_id,
                                           k=k, min_score=min_score)
        verdict = verdicts.get(app_id)
        dossiers.append({
            "app": app.to_row(),
            "score": by_app[app_id].to_row() if app_id in by_app else None,
            "top_alarming": [
                {"review_id": review.review_id, "title": review.title,
                 "body": review.body, "alarmingness": score}
                for review, score in top
            ],
            "verdict": verdict.to_row() if verdict else None,
        })
    return dossiers
