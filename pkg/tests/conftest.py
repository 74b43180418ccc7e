import shutil
from pathlib import Path

import pytest

from misuseaudit import cli
from misuseaudit.corpus import ingest

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "src" / "misuseaudit" / "data" / "fixture"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def fixture_corpus():
    return ingest([FIXTURE_DIR / "apps.jsonl", FIXTURE_DIR / "reviews.jsonl"])


def run_cli(*args) -> int:
    return cli.main([str(a) for a in args])


def run_pipeline(data_dir: Path, seed: int = 0) -> None:
    """ingest -> dedupe -> embed -> train -> predict -> score -> sweep
    on the bundled fixture, failing loudly on any nonzero exit."""
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
        code = run_cli("--data-dir", data_dir, "--seed", seed, *step)
        assert code == 0, f"{step[0]} exited {code}"
    shutil.copy(FIXTURE_DIR / "ground_truth.jsonl", data_dir / "ground_truth.jsonl")
    code = run_cli("--data-dir", data_dir, "--seed", seed, "sweep")
    assert code == 0


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory) -> Path:
    """One fully scored workspace shared by read-only tests."""
    data_dir = tmp_path_factory.mktemp("pipeline")
    run_pipeline(data_dir)
    return data_dir


@pytest.fixture()
def scored_workspace(pipeline_dir, tmp_path) -> Path:
    """Private copy of the scored workspace for tests that mutate it."""
    target = tmp_path / "ws"
    shutil.copytree(pipeline_dir, target)
    return target


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1].replace("test_", "", 1)
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append(f"{status}  {name}")
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(lines, key=lambda l: l.split()[-1]):
            terminalreporter.write_line(line)
