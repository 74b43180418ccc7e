"""HTTP API for the annotation and triage loops.

FastAPI app over a shared workspace: review queues and Likert ratings
for annotators, ranked apps with top alarming reviews and verdict
recording for auditors, and an in-process job runner for pipeline
stages. Setting the AUDIT_TOKEN env var requires `Authorization:
Bearer <token>` on every /api request.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Literal

from fastapi import FastAPI, HTTPException, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import annotation, workspace as ws_mod
from .config import AuditConfig, make_kernel_config, make_preprocess_config, make_provider
from .corpus import Corpus
from .errors import JobConflictError, ValidationError
from .scoring import TOP_ALARMING_K, TOP_ALARMING_MIN_SCORE, top_alarming_reviews

JOB_KINDS = ("embed", "train", "predict", "score", "sweep")


class AnnotationIn(BaseModel):
    review_id: str
    annotator_id: str
    convincingness: int = Field(ge=1, le=4)
    severity: int = Field(ge=1, le=4)


class ResolutionIn(BaseModel):
    review_id: str
    convincingness: int = Field(ge=1, le=4)
    severity: int = Field(ge=1, le=4)


class AnnotatorIn(BaseModel):
    annotator_id: str = Field(min_length=1)


class VerdictIn(BaseModel):
    verdict: Literal["confirmed_exploitable", "rejected", "pending"]
    auditor_id: str = Field(min_length=1)
    notes: str = ""
    evidence_review_ids: list[str] = Field(default_factory=list)


class JobIn(BaseModel):
    kind: Literal["embed", "train", "predict", "score", "sweep"]
    params: dict = Field(default_factory=dict)


class _CorpusCache:
    """Reload the corpus when its files change on disk."""

    def __init__(self, ws: ws_mod.Workspace):
        self._ws = ws
        self._stamp = None
        self._corpus: Corpus | None = None
        self._lock = threading.Lock()

    def get(self) -> Corpus:
        ws = self._ws
        if not ws.has_corpus():
            raise HTTPException(status_code=409, detail="no corpus ingested yet")
        stamp = (ws.apps_path.stat().st_mtime_ns, ws.reviews_path.stat().st_mtime_ns)
        with self._lock:
            if self._corpus is None or stamp != self._stamp:
                self._corpus = ws.load_corpus()
                self._stamp = stamp
            return self._corpus


class JobRunner:
    """One background thread per job; at most one live job per kind.

    Terminal job states are immutable: the runner only ever moves a job
    queued -> running -> done|failed and never touches it again.
    """

    def __init__(self, ws: ws_mod.Workspace, config: AuditConfig):
        self._ws = ws
        self._config = config
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._seq = 0

    def submit(self, kind: str, params: dict) -> dict:
        with self._lock:
            for job in self._jobs.values():
                if job["kind"] == kind and job["state"] in ("queued", "running"):
                    raise JobConflictError(
                        f"a {kind} job ({job['job_id']}) is already {job['state']}")
            self._seq += 1
            job_id = f"{kind}-{self._seq}"
            job = {"job_id": job_id, "kind": kind, "state": "queued",
                   "progress": 0.0, "artifacts": [], "error": None,
                   "params": dict(params)}
            self._jobs[job_id] = job
        thread = threading.Thread(target=self._run, args=(job_id,), daemon=True)
        thread.start()
        return dict(job)

    def _run(self, job_id: str) -> None:
        with self._lock:
            job = self._jobs[job_id]
            job["state"] = "running"
            job["progress"] = 0.1
            kind, params = job["kind"], job["params"]
        try:
            artifacts = self._execute(kind, params)
        except Exception as exc:  # noqa: BLE001 - job outcome reporting
            with self._lock:
                job = self._jobs[job_id]
                job["state"] = "failed"
                job["error"] = str(exc)
            return
        with self._lock:
            job = self._jobs[job_id]
            job["state"] = "done"
            job["progress"] = 1.0
            job["artifacts"] = [str(a) for a in artifacts]

    def _execute(self, kind: str, params: dict) -> list:
        ws, config = self._ws, self._config
        if kind == "embed":
            ws_mod.stage_embed(ws, make_preprocess_config(), make_provider(config),
                               config.chunk_size)
            return [ws.embeddings_path]
        if kind == "train":
            ws_mod.stage_train(ws, make_kernel_config(config), make_preprocess_config(),
                               make_provider(config), seed=config.seed)
            return [ws.model_path, ws.training_path]
        if kind == "predict":
            ws_mod.stage_predict(ws, make_preprocess_config(), make_provider(config))
            return [ws.review_scores_path]
        if kind == "score":
            ws_mod.stage_score(ws)
            return [ws.app_scores_path]
        if kind == "sweep":
            ws_mod.stage_sweep(
                ws,
                float(params.get("start", 1.73)),
                float(params.get("stop", 3.59)),
                float(params.get("step", 0.01)),
            )
            return [ws.sweep_path]
        raise ValidationError(f"unknown job kind: {kind}")

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job else None

    def list(self) -> list[dict]:
        with self._lock:
            return [dict(j) for j in self._jobs.values()]


def _review_payload(review, alarmingness: float | None = None) -> dict:
    # rating metadata and type labels stay internal; annotators see text only
    payload = {
        "review_id": review.review_id,
        "app_id": review.app_id,
        "title": review.title,
        "body": review.body,
        "rating": review.rating,
        "date": review.date.isoformat() if review.date else None,
    }
    if alarmingness is not None:
        payload["alarmingness"] = alarmingness
    return payload


def create_app(ws: ws_mod.Workspace, config: AuditConfig | None = None,
               static_dir: str | None = None) -> FastAPI:
    config = config or AuditConfig(data_dir=str(ws.root))
    ws.ensure()
    app = FastAPI(title="misuseaudit", version="0.1.0")

    corpus_cache = _CorpusCache(ws)
    store_lock = threading.Lock()
    store = annotation.AnnotationStore(ws.annotations_path)
    verdicts = ws_mod.VerdictLog(ws.verdicts_path)
    jobs = JobRunner(ws, config)
    registry_path = ws.root / "annotators.json"

    def known_annotators() -> set[str]:
        names = set(store.annotator_ids())
        if registry_path.exists():
            names.update(json.loads(registry_path.read_text(encoding="utf-8")))
        return names

    @app.middleware("http")
    async def bearer_auth(request: Request, call_next):
        token = os.environ.get("AUDIT_TOKEN")
        if token and request.url.path.startswith("/api"):
            expected = f"Bearer {token}"
            if request.headers.get("authorization") != expected:
                return JSONResponse(status_code=401,
                                    content={"detail": "missing or bad bearer token"})
        return await call_next(request)

    @app.exception_handler(ValidationError)
    async def validation_handler(request: Request, exc: ValidationError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(JobConflictError)
    async def conflict_handler(request: Request, exc: JobConflictError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "corpus": ws.has_corpus(),
            "scores": ws.app_scores_path.exists(),
        }

    @app.post("/api/annotators", status_code=201)
    def register_annotator(body: AnnotatorIn):
        with store_lock:
            names = known_annotators()
            created = body.annotator_id not in names
            names.add(body.annotator_id)
            registry_path.write_text(json.dumps(sorted(names)) + "\n", encoding="utf-8")
        return {"annotator_id": body.annotator_id, "created": created}

    @app.get("/api/annotators")
    def list_annotators():
        return sorted(known_annotators())

    @app.get("/api/reviews/queue")
    def review_queue(annotator: str, n: int = Query(10, ge=0)):
        if annotator not in known_annotators():
            raise HTTPException(status_code=404, detail=f"unknown annotator: {annotator}")
        corpus = corpus_cache.get()
        done = store.annotated_review_ids(annotator)
        pending = [rid for rid in sorted(corpus.reviews) if rid not in done][:n]
        return [_review_payload(corpus.reviews[rid]) for rid in pending]

    @app.post("/api/annotations")
    def post_annotation(body: AnnotationIn, response: Response):
        corpus = corpus_cache.get()
        if body.review_id not in corpus.reviews:
            raise HTTPException(status_code=404,
                                detail=f"unknown review: {body.review_id}")
        record = annotation.AnnotationRecord(
            review_id=body.review_id, annotator_id=body.annotator_id,
            convincingness=body.convincingness, severity=body.severity)
        with store_lock:
            existing = any(r.annotator_id == body.annotator_id
                           for r in store.records_for(body.review_id))
            stored = store.record(record)
        response.status_code = 200 if existing else 201
        return {
            "review_id": stored.review_id,
            "annotator_id": stored.annotator_id,
            "convincingness": stored.convincingness,
            "severity": stored.severity,
            "alarmingness": stored.alarmingness,
        }

    @app.get("/api/annotations/needs-discussion")
    def needs_discussion():
        with store_lock:
            merged = store.needs_discussion()
        return [{
            "review_id": m.review_id,
            "convincingness": m.convincingness,
            "severity": m.severity,
            "alarmingness": m.alarmingness,
            "resolved": m.resolved,
        } for m in merged]

    @app.post("/api/annotations/resolve", status_code=201)
    def resolve_annotation(body: ResolutionIn):
        corpus = corpus_cache.get()
        if body.review_id not in corpus.reviews:
            raise HTTPException(status_code=404,
                                detail=f"unknown review: {body.review_id}")
        with store_lock:
            resolution = store.record_resolution(
                body.review_id, body.convincingness, body.severity)
            merged = store.merged(body.review_id)
        return {
            "review_id": resolution.review_id,
            "convincingness": merged.convincingness,
            "severity": merged.severity,
            "alarmingness": merged.alarmingness,
            "resolved": merged.resolved,
        }

    def _ranked_rows():
        if not ws.app_scores_path.exists():
            raise HTTPException(
                status_code=409,
                detail="no scores computed yet; run the score job first")
        ranked, _excluded = ws_mod.load_app_scores(ws.app_scores_path)
        return ranked

    @app.get("/api/apps/ranked")
    def apps_ranked(limit: int = Query(50, ge=0)):
        ranked = _ranked_rows()
        corpus = corpus_cache.get()
        latest = verdicts.latest_by_app()
        rows = []
        for score in ranked[:limit]:
            app_row = score.to_row()
            app = corpus.apps.get(score.app_id)
            app_row["name"] = app.name if app else score.app_id
            verdict = latest.get(score.app_id)
            app_row["verdict"] = verdict.verdict if verdict else None
            rows.append(app_row)
        return rows

    @app.get("/api/apps/{app_id}/alarming")
    def app_alarming(app_id: str, k: int = Query(TOP_ALARMING_K, ge=0),
                     min_score: float = Query(TOP_ALARMING_MIN_SCORE, alias="min")):
        corpus = corpus_cache.get()
        if app_id not in corpus.apps:
            raise HTTPException(status_code=404, detail=f"unknown app: {app_id}")
        if not ws.review_scores_path.exists():
            raise HTTPException(status_code=409,
                                detail="no review scores yet; run the predict job first")
        review_scores = ws_mod.load_review_scores(ws.review_scores_path)
        alarmingness = {rid: s.alarmingness for rid, s in review_scores.items()}
        top = top_alarming_reviews(corpus, alarmingness, app_id, k=k, min_score=min_score)
        return [_review_payload(review, score) for review, score in top]

    @app.get("/api/apps/{app_id}/verdict")
    def get_verdict(app_id: str):
        corpus = corpus_cache.get()
        if app_id not in corpus.apps:
            raise HTTPException(status_code=404, detail=f"unknown app: {app_id}")
        latest = verdicts.latest_by_app().get(app_id)
        return latest.to_row() if latest else None

    @app.post("/api/apps/{app_id}/verdict", status_code=201)
    def post_verdict(app_id: str, body: VerdictIn):
        corpus = corpus_cache.get()
        if app_id not in corpus.apps:
            raise HTTPException(status_code=404, detail=f"unknown app: {app_id}")
        verdict = ws_mod.AuditVerdict(
            app_id=app_id, verdict=body.verdict, auditor_id=body.auditor_id,
            notes=body.notes, evidence_review_ids=tuple(body.evidence_review_ids))
        stored = verdicts.append(verdict)
        return stored.to_row()

    @app.post("/api/jobs", status_code=201)
    def post_job(body: JobIn):
        return jobs.submit(body.kind, body.params)

    @app.get("/api/jobs")
    def list_jobs():
        return jobs.list()

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job: {job_id}")
        return job

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
