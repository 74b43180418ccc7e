"""Command-line pipeline driver.

Every subcommand resolves the shared workspace from --data-dir (flag or
config file), validates its inputs, and writes a JSON run manifest next
to its outputs. Exit codes: 0 success, 1 validation, 2 I/O, 3 internal.
"""

from __future__ import annotations

import contextlib
import csv
import datetime as dt
import json
import sys
import time
from pathlib import Path

import click

from . import annotation, corpus as corpus_mod, evaluation, keywords, scoring, workspace as ws_mod
from .config import (
    AuditConfig,
    apply_overrides,
    load_config,
    make_kernel_config,
    make_preprocess_config,
    make_provider,
)
from .errors import (
    ContractError,
    DataIOError,
    JobConflictError,
    MisuseAuditError,
    TransportError,
    ValidationError,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


class CliState:
    def __init__(self):
        self.config_path: str | None = None
        self.data_dir: str | None = None
        self.seed: int | None = None

    def resolve(self) -> tuple[AuditConfig, ws_mod.Workspace]:
        config = load_config(self.config_path)
        config = apply_overrides(config, data_dir=self.data_dir, seed=self.seed)
        return config, ws_mod.Workspace(config.data_dir).ensure()


@contextlib.contextmanager
def manifest(ws: ws_mod.Workspace, command: str, config: AuditConfig,
             inputs=(), outputs=()):
    """Record one run manifest per command, written on success."""
    started = dt.datetime.now(dt.timezone.utc)
    t0 = time.perf_counter()
    yield
    payload = {
        "command": command,
        "config_hash": config.fingerprint(),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": config.seed,
        "timings": {
            "started_utc": started.isoformat(),
            "elapsed_seconds": round(time.perf_counter() - t0, 6),
        },
    }
    path = ws.manifests_dir / f"{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _resolve_keywords(name: str, keywords_file: str | None) -> keywords.KeywordSet:
    if keywords_file:
        terms = [w.strip() for w in Path(keywords_file).read_text("utf-8").split()
                 if w.strip()]
        return keywords.custom_keywords(terms)
    if name == "seed":
        return keywords.seed_keywords()
    return keywords.extended_keywords()


def _read_id_list(path: str) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        ids = json.loads(text)
    except json.JSONDecodeError:
        ids = [line.strip() for line in text.splitlines() if line.strip()]
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise ValidationError(f"{path} must hold a JSON array or one id per line")
    return ids


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Key=value config file; flags override its values.")
@click.option("--data-dir", default=None, help="Workspace directory.")
@click.option("--seed", type=int, default=None, help="Seed for all randomness.")
@click.pass_context
def cli(ctx, config_path, data_dir, seed):
    """Review-driven misuse-audit pipeline."""
    state = CliState()
    state.config_path = config_path
    state.data_dir = data_dir
    state.seed = seed
    ctx.obj = state


@cli.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path())
@click.option("--format", "file_format", type=click.Choice(["jsonl", "csv"]),
              default="jsonl", show_default=True)
@click.pass_obj
def ingest(state, paths, file_format):
    """Load app and review files into the workspace corpus."""
    config, ws = state.resolve()
    with manifest(ws, "ingest", config, inputs=paths,
                  outputs=[ws.apps_path, ws.reviews_path]):
        corpus = corpus_mod.ingest(paths, file_format)
        ws.save_corpus(corpus)
        _emit({
            "apps": len(corpus.apps),
            "reviews": len(corpus.reviews),
            "skipped_malformed": corpus.provenance.skipped_malformed,
            "skipped_unknown_app": corpus.provenance.skipped_unknown_app,
        })


@cli.command()
@click.pass_obj
def dedupe(state):
    """Drop duplicate reviews, keeping the earliest-dated copy."""
    config, ws = state.resolve()
    with manifest(ws, "dedupe", config, inputs=[ws.reviews_path],
                  outputs=[ws.reviews_path]):
        corpus = ws.load_corpus()
        deduped, removed = corpus_mod.deduplicate(corpus)
        ws.save_corpus(deduped)
        _emit({"reviews": len(deduped.reviews), "removed": removed})


@cli.command()
@click.option("--keywords", "keyword_name", type=click.Choice(["seed", "extended"]),
              default="seed", show_default=True)
@click.option("--keywords-file", type=click.Path(exists=True), default=None,
              help="Custom keyword list, one term per whitespace.")
@click.option("--n", "n", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_obj
def sample(state, keyword_name, keywords_file, n, out_path):
    """Sample n keyword-matching reviews without replacement."""
    config, ws = state.resolve()
    out = Path(out_path) if out_path else ws.root / "sample.json"
    with manifest(ws, "sample", config, inputs=[ws.reviews_path], outputs=[out]):
        corpus = ws.load_corpus()
        ks = _resolve_keywords(keyword_name, keywords_file)
        matching = corpus_mod.filter_by_keywords(corpus, ks)
        chosen = corpus_mod.sample(matching, n, config.seed)
        out.write_text(json.dumps(chosen, indent=2) + "\n", encoding="utf-8")
        _emit({"population": len(matching), "sampled": len(chosen), "out": str(out)})


@cli.command()
@click.option("--n-match", type=int, required=True)
@click.option("--n-nonmatch", type=int, required=True)
@click.option("--keywords", "keyword_name", type=click.Choice(["seed", "extended"]),
              default="seed", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_obj
def pool(state, n_match, n_nonmatch, keyword_name, out_path):
    """Build the balanced match/nonmatch training pool."""
    config, ws = state.resolve()
    out = Path(out_path) if out_path else ws.root / "pool.json"
    with manifest(ws, "pool", config, inputs=[ws.reviews_path], outputs=[out]):
        corpus = ws.load_corpus()
        ks = _resolve_keywords(keyword_name, None)
        ids = corpus_mod.build_training_pool(corpus, ks, n_match, n_nonmatch, config.seed)
        out.write_text(json.dumps(ids, indent=2) + "\n", encoding="utf-8")
        _emit({"pool_size": len(ids), "out": str(out)})


@cli.command("annotate-export")
@click.option("--annotator", required=True)
@click.option("--n", type=int, default=50, show_default=True)
@click.option("--pool", "pool_path", type=click.Path(exists=True), default=None,
              help="Restrict to ids from this file.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_obj
def annotate_export(state, annotator, n, pool_path, out_path):
    """Export the annotator's next unrated reviews as a rating sheet."""
    config, ws = state.resolve()
    with manifest(ws, "annotate-export", config,
                  inputs=[ws.reviews_path, ws.annotations_path], outputs=[out_path]):
        corpus = ws.load_corpus()
        store = ws.annotation_store()
        done = store.annotated_review_ids(annotator)
        candidates = sorted(corpus.reviews)
        if pool_path:
            wanted = set(_read_id_list(pool_path))
            candidates = [rid for rid in candidates if rid in wanted]
        pending = [rid for rid in candidates if rid not in done][:n]
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["review_id", "title", "body", "convincingness", "severity"])
            for rid in pending:
                review = corpus.reviews[rid]
                writer.writerow([rid, review.title, review.body, "", ""])
        _emit({"exported": len(pending), "out": out_path})


@cli.command("annotate-import")
@click.argument("sheet", type=click.Path(exists=True))
@click.option("--annotator", required=True)
@click.pass_obj
def annotate_import(state, sheet, annotator):
    """Import a filled rating sheet into the annotation store."""
    config, ws = state.resolve()
    with manifest(ws, "annotate-import", config, inputs=[sheet],
                  outputs=[ws.annotations_path]):
        corpus = ws.load_corpus()
        store = annotation.AnnotationStore(ws.annotations_path,
                                           valid_review_ids=set(corpus.reviews))
        imported = skipped_blank = 0
        with open(sheet, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("convincingness", "") == "" or row.get("severity", "") == "":
                    skipped_blank += 1
                    continue
                store.record(annotation.AnnotationRecord(
                    review_id=row["review_id"], annotator_id=annotator,
                    convincingness=int(row["convincingness"]),
                    severity=int(row["severity"])))
                imported += 1
        _emit({"imported": imported, "skipped_blank": skipped_blank})


@cli.command()
@click.option("--target", type=click.Choice(["convincingness", "severity", "alarmingness"]),
              default="convincingness", show_default=True)
@click.pass_obj
def agreement(state, target):
    """Inter-rater reliability (ICC(3,k)) plus the discussion queue size."""
    config, ws = state.resolve()
    with manifest(ws, "agreement", config, inputs=[ws.annotations_path], outputs=[]):
        store = ws.annotation_store()
        matrix, review_ids, annotators = store.rating_matrix(target)
        _emit({
            "target": target,
            "icc3k": annotation.icc3k(matrix),
            "reviews": len(review_ids),
            "annotators": annotators,
            "needs_discussion": len(store.needs_discussion()),
        })


@cli.command()
@click.pass_obj
def embed(state):
    """Embed every corpus review into the cache."""
    config, ws = state.resolve()
    with manifest(ws, "embed", config, inputs=[ws.reviews_path],
                  outputs=[ws.embeddings_path]):
        count = ws_mod.stage_embed(ws, make_preprocess_config(),
                                   make_provider(config), config.chunk_size)
        _emit({"embedded": count})


@cli.command()
@click.pass_obj
def train(state):
    """Fit the alarmingness regressor from merged annotations."""
    config, ws = state.resolve()
    with manifest(ws, "train", config,
                  inputs=[ws.training_path, ws.annotations_path],
                  outputs=[ws.model_path, ws.training_path]):
        model = ws_mod.stage_train(ws, make_kernel_config(config),
                                   make_preprocess_config(), make_provider(config),
                                   seed=config.seed)
        _emit({"rows": model.manifest.get("rows"), "kernel": model.config.kind,
               "provider": model.provider_id, "model": str(ws.model_path)})


@cli.command()
@click.option("--folds", type=int, default=None, help="Fold count (default from config).")
@click.pass_obj
def cv(state, folds):
    """Cross-validate the regressor; writes a deterministic report."""
    config, ws = state.resolve()
    config = apply_overrides(config, folds=folds)
    report_path = ws.root / "cv_report.json"
    with manifest(ws, "cv", config, inputs=[ws.training_path], outputs=[report_path]):
        report = ws_mod.stage_cv(ws, config.folds, make_kernel_config(config),
                                 make_preprocess_config(), make_provider(config),
                                 seed=config.seed)
        payload = report.to_dict()
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _emit(payload)


@cli.command()
@click.option("--allow-provider-mismatch", is_flag=True, default=False)
@click.pass_obj
def predict(state, allow_provider_mismatch):
    """Predict convincingness/severity for every corpus review."""
    config, ws = state.resolve()
    with manifest(ws, "predict", config,
                  inputs=[ws.reviews_path, ws.model_path],
                  outputs=[ws.review_scores_path]):
        count = ws_mod.stage_predict(ws, make_preprocess_config(), make_provider(config),
                                     allow_provider_mismatch=allow_provider_mismatch)
        _emit({"scored": count, "out": str(ws.review_scores_path)})


@cli.command()
@click.pass_obj
def score(state):
    """Aggregate review scores into ranked per-app exploitable scores."""
    config, ws = state.resolve()
    with manifest(ws, "score", config,
                  inputs=[ws.review_scores_path], outputs=[ws.app_scores_path]):
        ranked, excluded, spec = ws_mod.stage_score(ws)
        _emit({"apps_ranked": len(ranked), "apps_excluded": len(excluded),
               "bucket_weights": list(spec.weights), "out": str(ws.app_scores_path)})


@cli.command()
@click.option("--limit", type=int, default=20, show_default=True)
@click.pass_obj
def rank(state, limit):
    """Print the ranked app table."""
    config, ws = state.resolve()
    with manifest(ws, "rank", config, inputs=[ws.app_scores_path], outputs=[]):
        ranked, excluded = ws_mod.load_app_scores(ws.app_scores_path)
        rows = [s.to_row() for s in ranked[:max(limit, 0)]]
        _emit({"ranking": rows, "excluded": excluded})


@cli.command()
@click.option("--from", "start", type=float, default=evaluation.DEFAULT_SWEEP_START,
              show_default=True)
@click.option("--to", "stop", type=float, default=evaluation.DEFAULT_SWEEP_STOP,
              show_default=True)
@click.option("--step", type=float, default=evaluation.DEFAULT_SWEEP_STEP,
              show_default=True)
@click.pass_obj
def sweep(state, start, stop, step):
    """Sweep classification thresholds against ground truth."""
    config, ws = state.resolve()
    with manifest(ws, "sweep", config,
                  inputs=[ws.app_scores_path, ws.ground_truth_path],
                  outputs=[ws.sweep_path]):
        rows, best = ws_mod.stage_sweep(ws, start, stop, step)
        _emit({"rows": len(rows), "best_threshold": best, "out": str(ws.sweep_path)})


@cli.command()
@click.option("--method", type=click.Choice(["description", "review-percent"]),
              required=True)
@click.option("--keywords", "keyword_name", type=click.Choice(["seed", "extended"]),
              default="seed", show_default=True)
@click.option("--threshold", "threshold_percent", type=float, default=0.1,
              show_default=True, help="Percent cutoff for review-percent.")
@click.pass_obj
def baseline(state, method, keyword_name, threshold_percent):
    """Keyword baselines, with P/R/F1 when ground truth is present."""
    config, ws = state.resolve()
    with manifest(ws, "baseline", config,
                  inputs=[ws.reviews_path, ws.ground_truth_path], outputs=[]):
        corpus = ws.load_corpus()
        ks = _resolve_keywords(keyword_name, None)
        if method == "description":
            predicted = evaluation.baseline_description_keywords(corpus, ks)
        else:
            predicted = evaluation.baseline_keyword_review_percent(
                corpus, ks, threshold_percent)
        payload = {"method": method, "keywords": keyword_name,
                   "predicted": sorted(predicted)}
        if ws.ground_truth_path.exists():
            ground_truth = evaluation.load_ground_truth(ws.ground_truth_path)
            row = evaluation.prf(predicted & set(ground_truth), ground_truth)
            payload["prf"] = {"precision": row.precision, "recall": row.recall,
                              "f1": row.f1, "tp": row.tp, "fp": row.fp, "fn": row.fn}
        _emit(payload)


@cli.command()
@click.option("--lexicon", "lexicon_path", type=click.Path(exists=True), default=None,
              help="VAD lexicon TSV (defaults to the bundled demo lexicon).")
@click.option("--keywords", "keyword_name", type=click.Choice(["seed", "extended"]),
              default="seed", show_default=True)
@click.pass_obj
def affect(state, lexicon_path, keyword_name):
    """Valence/arousal/dominance profile per reviewer type."""
    config, ws = state.resolve()
    with manifest(ws, "affect", config, inputs=[ws.reviews_path],
                  outputs=[ws.profiles_path]):
        profiles = ws_mod.stage_affect(ws, lexicon_path,
                                       _resolve_keywords(keyword_name, None))
        _emit([p.to_row() for p in profiles])


@cli.command()
@click.option("--similar", "similar_path", type=click.Path(exists=True), required=True,
              help="JSONL app_id -> similar app ids map.")
@click.option("--confirmed", "confirmed_path", type=click.Path(exists=True), default=None,
              help="Confirmed app ids file (default: verdict log).")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_obj
def snowball(state, similar_path, confirmed_path, out_path):
    """Expand confirmed apps through the similar-apps map."""
    config, ws = state.resolve()
    out = Path(out_path) if out_path else ws.root / "snowball.json"
    with manifest(ws, "snowball", config,
                  inputs=[similar_path, confirmed_path or ws.verdicts_path],
                  outputs=[out]):
        if confirmed_path:
            confirmed = _read_id_list(confirmed_path)
        else:
            confirmed = ws_mod.VerdictLog(ws.verdicts_path).confirmed_app_ids()
        similar_map = corpus_mod.load_similar_map(similar_path)
        expansion = corpus_mod.snowball(confirmed, similar_map)
        out.write_text(json.dumps(expansion, indent=2) + "\n", encoding="utf-8")
        _emit({"confirmed": len(confirmed), "expansion": expansion, "out": str(out)})


@cli.command()
@click.option("--apps", "apps_path", type=click.Path(exists=True), required=True,
              help="File of app ids to recheck.")
@click.option("--reviews", "review_paths", type=click.Path(exists=True),
              multiple=True, required=True, help="Fresh app/review files.")
@click.option("--allow-provider-mismatch", is_flag=True, default=False)
@click.pass_obj
def recheck(state, apps_path, review_paths, allow_provider_mismatch):
    """Re-score flagged apps against fresh reviews only."""
    config, ws = state.resolve()
    out = ws.root / "recheck.json"
    with manifest(ws, "recheck", config,
                  inputs=[apps_path, *review_paths], outputs=[out]):
        verdicts = ws_mod.stage_recheck(
            ws, _read_id_list(apps_path), review_paths,
            make_preprocess_config(), make_provider(config),
            allow_provider_mismatch=allow_provider_mismatch)
        still = sum(1 for v in verdicts.values()
                    if v == evaluation.VERDICT_STILL_ALARMING)
        payload = {"verdicts": verdicts, "still_alarming": still,
                   "total": len(verdicts)}
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _emit(payload)


@cli.command()
@click.option("--app", "app_ids", multiple=True,
              help="Restrict the dossier to these apps (repeatable).")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--k", type=int, default=scoring.TOP_ALARMING_K, show_default=True)
@click.option("--min-score", type=float, default=scoring.TOP_ALARMING_MIN_SCORE,
              show_default=True)
@click.pass_obj
def report(state, app_ids, out_path, k, min_score):
    """Per-app audit dossier: scores, top alarming reviews, verdict."""
    config, ws = state.resolve()
    out = Path(out_path) if out_path else ws.root / "report.json"
    with manifest(ws, "report", config,
                  inputs=[ws.app_scores_path, ws.review_scores_path, ws.verdicts_path],
                  outputs=[out]):
        dossiers = ws_mod.build_report(ws, list(app_ids) or None, k=k, min_score=min_score)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(dossiers, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _emit({"apps": len(dossiers), "out": str(out)})


@cli.command()
@click.option("--port", type=int, default=8040, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Directory of built UI assets to serve at /.")
@click.pass_obj
def serve(state, port, host, static_dir):
    """Run the HTTP API (AUDIT_TOKEN env var enables bearer auth)."""
    import uvicorn

    from .service import create_app

    config, ws = state.resolve()
    with manifest(ws, "serve", config, inputs=[str(ws.root)], outputs=[]):
        app = create_app(ws, config=config, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_VALIDATION
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except (ValidationError, ContractError, JobConflictError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        return EXIT_VALIDATION
    except (DataIOError, TransportError) as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_IO
    except MisuseAuditError as exc:
        click.echo(f"internal error: {exc}", err=True)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit-code mapping
        click.echo(f"internal error: {exc}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
