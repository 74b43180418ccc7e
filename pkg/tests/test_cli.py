import contextlib
import csv
import io
import json
import shutil

import pytest

from conftest import FIXTURE_DIR, run_cli


def run(*args):
    """Invoke the CLI in-process, returning (exit_code, parsed stdout)."""
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = run_cli(*args)
    text = out.getvalue()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        payload = text
    return code, payload


@pytest.fixture(scope="module")
def stepped_pipeline(tmp_path_factory):
    """Pipeline run one command at a time, keeping each step's output."""
    data_dir = tmp_path_factory.mktemp("cli_pipeline")
    outputs = {}
    steps = [
        ["ingest", FIXTURE_DIR / "apps.jsonl", FIXTURE_DIR / "reviews.jsonl"],
        ["dedupe"],
        ["embed"],
        ["train"],
        ["predict"],
        ["score"],
    ]
    for step in steps:
        if step[0] == "train":
            shutil.copy(FIXTURE_DIR / "annotations.jsonl",
                        data_dir / "annotations.jsonl")
        code, payload = run("--data-dir", data_dir, "--seed", 0, *step)
        assert code == 0, f"{step[0]} exited {code}: {payload}"
        outputs[step[0]] = payload
    shutil.copy(FIXTURE_DIR / "ground_truth.jsonl", data_dir / "ground_truth.jsonl")
    code, payload = run("--data-dir", data_dir, "--seed", 0, "sweep")
    assert code == 0
    outputs["sweep"] = payload
    return data_dir, outputs


class TestPipelineSteps:
    def test_ingest_counts(self, stepped_pipeline):
        _, outputs = stepped_pipeline
        assert outputs["ingest"] == {"apps": 8, "reviews": 24,
                                     "skipped_malformed": 0,
                                     "skipped_unknown_app": 0}

    def test_dedupe_removes_one_copy(self, stepped_pipeline):
        _, outputs = stepped_pipeline
        assert outputs["dedupe"] == {"reviews": 23, "removed": 1}

    def test_embed_covers_corpus(self, stepped_pipeline):
        _, outputs = stepped_pipeline
        assert outputs["embed"] == {"embedded": 23}

    def test_train_reports_rows_and_provider(self, stepped_pipeline):
        data_dir, outputs = stepped_pipeline
        assert outputs["train"]["rows"] == 18
        assert outputs["train"]["kernel"] == "svr"
        assert outputs["train"]["provider"] == "hash512n12-v1"
        assert (data_dir / "model.npz").exists()

    def test_predict_scores_every_review(self, stepped_pipeline):
        _, outputs = stepped_pipeline
        assert outputs["predict"]["scored"] == 23

    def test_score_falls_back_to_reference_weights(self, stepped_pipeline):
        """The fixture predictions leave bucket 1 empty, so scoring falls
        back to the published bucket weights."""
        _, outputs = stepped_pipeline
        assert outputs["score"]["apps_ranked"] == 8
        assert outputs["score"]["apps_excluded"] == 0
        assert outputs["score"]["bucket_weights"] == pytest.approx(
            [0.0022920857980762493, 0.06085537839433885, 0.9368525358075849])

    def test_sweep_grid_and_best(self, stepped_pipeline):
        _, outputs = stepped_pipeline
        assert outputs["sweep"]["rows"] == 187
        assert outputs["sweep"]["best_threshold"] == 1.73

    def test_artifacts_on_disk(self, stepped_pipeline):
        data_dir, _ = stepped_pipeline
        for name in ("apps.jsonl", "reviews.jsonl", "embeddings.jsonl",
                     "training.csv", "model.npz", "review_scores.jsonl",
                     "app_scores.jsonl", "sweep.csv"):
            assert (data_dir / name).exists(), name
        header, *rows = (data_dir / "sweep.csv").read_text("utf-8").splitlines()
        assert header == "threshold,tp,fp,fn,tn,precision,recall,f1"
        assert len(rows) == 187

    def test_manifest_per_command(self, stepped_pipeline):
        data_dir, _ = stepped_pipeline
        for command in ("ingest", "dedupe", "embed", "train", "predict",
                        "score", "sweep"):
            manifest = json.loads(
                (data_dir / "manifests" / f"{command}.json").read_text("utf-8"))
            assert manifest["command"] == command
            assert manifest["seed"] == 0
            assert len(manifest["config_hash"]) == 16
            assert "started_utc" in manifest["timings"]
            assert manifest["timings"]["elapsed_seconds"] >= 0


class TestReadOnlyCommands:
    def test_rank_frozen_top(self, pipeline_dir):
        code, payload = run("--data-dir", pipeline_dir, "rank", "--limit", 3)
        assert code == 0
        top = payload["ranking"]
        assert [r["app_id"] for r in top] == [
            "app-famguard", "app-phonetrack", "app-findpal"]
        assert top[0]["rank"] == 1
        assert top[0]["exploitable_score"] == pytest.approx(3.585239150544253)
        assert top[1]["exploitable_score"] == pytest.approx(3.1488765570711)

    def test_agreement_default_target(self, pipeline_dir):
        code, payload = run("--data-dir", pipeline_dir, "agreement")
        assert code == 0
        assert payload["target"] == "convincingness"
        assert payload["icc3k"] == pytest.approx(0.9201277955271563)
        assert payload["reviews"] == 18
        assert payload["annotators"] == ["ann-a", "ann-b"]
        assert payload["needs_discussion"] == 1

    def test_agreement_alarmingness_target(self, pipeline_dir):
        code, payload = run("--data-dir", pipeline_dir,
                            "agreement", "--target", "alarmingness")
        assert code == 0
        assert payload["icc3k"] == pytest.approx(0.9680918834519765)

    def test_description_baseline(self, pipeline_dir):
        code, payload = run("--data-dir", pipeline_dir,
                            "baseline", "--method", "description")
        assert code == 0
        assert payload["predicted"] == ["app-phonetrack"]
        assert payload["prf"]["precision"] == 100.0
        assert payload["prf"]["recall"] == 25.0
        assert payload["prf"]["f1"] == pytest.approx(40.0)

    def test_review_percent_baseline(self, pipeline_dir):
        code, payload = run("--data-dir", pipeline_dir, "baseline",
                            "--method", "review-percent", "--threshold", 0.1)
        assert code == 0
        assert payload["predicted"] == ["app-famguard", "app-findpal",
                                        "app-phonetrack", "app-spyvoice"]
        assert payload["prf"]["recall"] == 100.0

    def test_affect_profiles(self, pipeline_dir):
        code, payload = run("--data-dir", pipeline_dir, "affect")
        assert code == 0
        by_type = {row["reviewer_type"]: row for row in payload}
        assert by_type["abuser"]["mean_valence"] > by_type["victim"]["mean_valence"]
        assert (pipeline_dir / "profiles.json").exists()

    def test_report_single_app(self, pipeline_dir, tmp_path):
        out = tmp_path / "report.json"
        code, payload = run("--data-dir", pipeline_dir, "report",
                            "--app", "app-famguard", "--out", out)
        assert code == 0
        assert payload["apps"] == 1
        dossier = json.loads(out.read_text("utf-8"))[0]
        assert dossier["app"]["app_id"] == "app-famguard"
        assert dossier["score"]["rank"] == 1
        assert dossier["top_alarming"]
        assert dossier["verdict"] is None


class TestSnowballAndRecheck:
    def test_snowball_expansion(self, pipeline_dir, tmp_path):
        confirmed = tmp_path / "confirmed.json"
        confirmed.write_text(json.dumps(["app-phonetrack"]), encoding="utf-8")
        code, payload = run("--data-dir", pipeline_dir, "snowball",
                            "--similar", FIXTURE_DIR / "similar.jsonl",
                            "--confirmed", confirmed)
        assert code == 0
        assert payload["confirmed"] == 1
        assert payload["expansion"] == ["app-famguard", "app-findpal"]

    def test_recheck_fresh_reviews(self, scored_workspace, tmp_path):
        apps = tmp_path / "apps.json"
        apps.write_text(json.dumps(["app-famguard", "app-ghost"]),
                        encoding="utf-8")
        code, payload = run("--data-dir", scored_workspace, "recheck",
                            "--apps", apps,
                            "--reviews", FIXTURE_DIR / "apps.jsonl",
                            "--reviews", FIXTURE_DIR / "reviews.jsonl")
        assert code == 0
        assert payload["verdicts"] == {"app-famguard": "still_alarming",
                                       "app-ghost": "no_new_evidence"}
        assert payload["still_alarming"] == 1
        assert json.loads(
            (scored_workspace / "recheck.json").read_text("utf-8")) == payload


class TestAnnotationCommands:
    def test_export_fill_import(self, tmp_path):
        data_dir = tmp_path / "ws"
        code, _ = run("--data-dir", data_dir, "ingest",
                      FIXTURE_DIR / "apps.jsonl", FIXTURE_DIR / "reviews.jsonl")
        assert code == 0
        sheet = tmp_path / "sheet.csv"
        code, payload = run("--data-dir", data_dir, "annotate-export",
                            "--annotator", "ann-x", "--n", 3, "--out", sheet)
        assert code == 0
        assert payload["exported"] == 3

        with open(sheet, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["review_id", "title", "body", "convincingness", "severity"]
        for row in rows[1:3]:  # rate two, leave the third blank
            row[3], row[4] = "3", "2"
        with open(sheet, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerows(rows)

        code, payload = run("--data-dir", data_dir, "annotate-import",
                            sheet, "--annotator", "ann-x")
        assert code == 0
        assert payload == {"imported": 2, "skipped_blank": 1}

        # a second export resumes after the imported reviews
        code, payload = run("--data-dir", data_dir, "annotate-export",
                            "--annotator", "ann-x", "--n", 50,
                            "--out", tmp_path / "sheet2.csv")
        assert code == 0
        assert payload["exported"] == 24 - 2


class TestCvCommand:
    def test_same_seed_same_report(self, scored_workspace):
        code, first = run("--data-dir", scored_workspace, "--seed", 0,
                          "cv", "--folds", 3)
        assert code == 0
        bytes_first = (scored_workspace / "cv_report.json").read_bytes()
        code, second = run("--data-dir", scored_workspace, "--seed", 0,
                           "cv", "--folds", 3)
        assert code == 0
        assert first == second
        assert (scored_workspace / "cv_report.json").read_bytes() == bytes_first
        assert first["folds"] == 3
        assert first["seed"] == 0
        assert len(first["fold_mses"]) == 3


class TestExitCodes:
    def test_validation_error_is_1(self, tmp_path):
        config = tmp_path / "bad.cfg"
        config.write_text("mystery = 1\n", encoding="utf-8")
        code, _ = run("--config", config, "--data-dir", tmp_path / "ws", "rank")
        assert code == 1

    def test_usage_error_is_1(self, tmp_path):
        code, _ = run("--data-dir", tmp_path / "ws", "baseline",
                      "--method", "astrology")
        assert code == 1

    def test_io_error_is_2(self, tmp_path):
        data_dir = tmp_path / "ws"
        code, _ = run("--data-dir", data_dir, "ingest",
                      FIXTURE_DIR / "apps.jsonl", FIXTURE_DIR / "reviews.jsonl")
        assert code == 0
        # predict without a trained model
        code, _ = run("--data-dir", data_dir, "predict")
        assert code == 2

    def test_missing_corpus_is_2(self, tmp_path):
        code, _ = run("--data-dir", tmp_path / "empty", "dedupe")
        assert code == 2
