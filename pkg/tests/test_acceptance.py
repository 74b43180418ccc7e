"""End-to-end acceptance checks, one test per release criterion.

Each test is self-contained and states its tolerance inline. The
terminal summary prints one PASS/FAIL line per test here, so a release
run can be audited at a glance.
"""

import random
import time

import numpy as np
import pytest

import oracles
from conftest import run_pipeline
from misuseaudit.affect import bundled_vad_lexicon, vad_profiles
from misuseaudit.annotation import icc3k
from misuseaudit.corpus import App, Corpus, Review
from misuseaudit.evaluation import (
    GroundTruthLabel,
    baseline_description_keywords,
    prf,
    sweep,
)
from misuseaudit.keywords import seed_keywords
from misuseaudit.regressor import cross_validate
from misuseaudit.scoring import (
    BucketSpec,
    REFERENCE_TABLE_WEIGHTS,
    alarmingness,
    compute_bucket_weights,
    normalize_counts,
    score_apps,
    weighted_alarmingness_mean,
)


def make_truth(positives, negatives):
    labels = {a: GroundTruthLabel(a, "exploitable", "no_knowledge")
              for a in positives}
    labels.update({a: GroundTruthLabel(a, "not_exploitable", "unrelated")
                   for a in negatives})
    return labels


def make_corpus(review_apps, extra_apps=(), descriptions=None):
    descriptions = descriptions or {}
    app_ids = set(review_apps.values()) | set(extra_apps)
    apps = {a: App(a, a, description=descriptions.get(a, "")) for a in app_ids}
    reviews = {rid: Review(rid, app_id) for rid, app_id in review_apps.items()}
    return Corpus(apps=apps, reviews=reviews)


def test_threshold_table_reproduction():
    """100 apps, 73 exploitable, every score above 1.73: the sweep row at
    1.73 must report P=73.00, R=100.00, F1=84.39, each within 0.01pp,
    in under a second."""
    rng = random.Random(7)
    positives = [f"app{i:03d}" for i in range(73)]
    negatives = [f"app{i:03d}" for i in range(73, 100)]
    scores = {a: rng.uniform(1.74, 3.60) for a in positives + negatives}
    truth = make_truth(positives, negatives)

    t0 = time.perf_counter()
    rows, best = sweep(scores, truth)
    elapsed = time.perf_counter() - t0

    row = next(r for r in rows if r.threshold == 1.73)
    assert abs(row.precision - 73.00) <= 0.01
    assert abs(row.recall - 100.00) <= 0.01
    assert abs(row.f1 - 84.39) <= 0.01
    assert best == 1.73
    assert elapsed < 1.0


def test_baseline_single_true_positive():
    """With 73 exploitable apps and a description baseline that catches
    exactly one of them (no false positives), recall must be 1.37% and
    F1 2.70%, each within 0.02pp, in under a second."""
    positives = [f"app{i:03d}" for i in range(73)]
    negatives = [f"app{i:03d}" for i in range(73, 100)]
    descriptions = {a: "helps you organize your day" for a in positives + negatives}
    descriptions["app000"] = "runs in stealth mode in the background"
    corpus = make_corpus({}, extra_apps=positives + negatives,
                         descriptions=descriptions)
    truth = make_truth(positives, negatives)

    t0 = time.perf_counter()
    predicted = baseline_description_keywords(corpus, seed_keywords())
    row = prf(predicted, truth)
    elapsed = time.perf_counter() - t0

    assert predicted == {"app000"}
    assert row.precision == 100.0
    assert abs(row.recall - 1.37) <= 0.02
    assert abs(row.f1 - 2.70) <= 0.02
    assert elapsed < 1.0


def test_bucket_weight_recovery():
    """Inverse-probability weights computed from probabilities that are
    themselves proportional to 1/w recover the published weight table
    within 1e-3 relative, and every weight vector sums to 1 +- 1e-9."""
    w = REFERENCE_TABLE_WEIGHTS
    inverse = [1.0 / wi for wi in w]
    probabilities = tuple(v / sum(inverse) for v in inverse)
    recovered = compute_bucket_weights(probabilities)
    assert abs(sum(recovered) - 1.0) <= 1e-9
    for got, want in zip(recovered, w):
        assert abs(got - want) / want <= 1e-3

    rng = np.random.default_rng(11)
    for _ in range(200):
        p = rng.dirichlet((2.0, 2.0, 2.0))
        out = compute_bucket_weights(tuple(float(v) for v in p))
        assert abs(sum(out) - 1.0) <= 1e-9


def test_scoring_oracle_equivalence():
    """Ranked app scores match an independent brute-force recomputation
    to 1e-12 on 120 randomized corpora (<=10 apps, <=50 reviews),
    including tie order and excluded apps."""
    rng = random.Random(2024)
    for case in range(120):
        n_apps = rng.randint(1, 10)
        app_ids = [f"a{i}" for i in range(n_apps)]
        n_reviews = rng.randint(1, 50)
        review_apps = {f"r{i}": rng.choice(app_ids) for i in range(n_reviews)}
        corpus = make_corpus(review_apps, extra_apps=app_ids)
        alarm = {rid: rng.uniform(1.0, 4.0) for rid in review_apps
                 if rng.random() < 0.85}

        raw = [rng.uniform(0.05, 1.0) for _ in range(3)]
        spec = BucketSpec(tuple(v / sum(raw) for v in raw))

        ranked, excluded = score_apps(corpus, alarm, spec)
        want_rows, want_excluded = oracles.brute_force_app_scores(
            review_apps, alarm, spec.weights, app_ids)

        assert excluded == want_excluded, f"case {case}"
        assert [s.app_id for s in ranked] == [r["app_id"] for r in want_rows]
        for got, want in zip(ranked, want_rows):
            assert got.rank == want["rank"]
            assert got.bucket3_count == want["bucket3_count"]
            assert abs(got.weighted_mean - want["weighted_mean"]) <= 1e-12
            assert abs(got.normalized_count - want["normalized_count"]) <= 1e-12
            assert abs(got.exploitable_score - want["exploitable_score"]) <= 1e-12


def test_mean_and_normalization_invariants():
    """10,000 randomized cases: alarmingness stays in [1,4], is symmetric
    and monotone; the weighted mean stays inside [min,max] of its
    inputs; count normalization preserves order and maps the extremes
    to 1 and 4."""
    rng = random.Random(99)
    for _ in range(10_000):
        c = rng.uniform(1.0, 4.0)
        s = rng.uniform(1.0, 4.0)
        a = alarmingness(c, s)
        assert 1.0 <= a <= 4.0
        assert alarmingness(s, c) == a
        bump = rng.uniform(0.0, 4.0 - c)
        assert alarmingness(c + bump, s) >= a

        scores = [rng.uniform(1.0, 4.0) for _ in range(rng.randint(1, 8))]
        raw = [rng.uniform(0.05, 1.0) for _ in range(3)]
        spec = BucketSpec(tuple(v / sum(raw) for v in raw))
        mean = weighted_alarmingness_mean(scores, spec)
        assert min(scores) - 1e-12 <= mean <= max(scores) + 1e-12

        counts = {f"a{i}": rng.randint(0, 30)
                  for i in range(rng.randint(1, 6))}
        normalized = normalize_counts(counts)
        assert all(1.0 <= v <= 4.0 for v in normalized.values())
        lo, hi = min(counts.values()), max(counts.values())
        if lo == hi:
            assert set(normalized.values()) == {1.0}
        else:
            low_key = min(counts, key=counts.get)
            high_key = max(counts, key=counts.get)
            assert normalized[low_key] == 1.0
            assert normalized[high_key] == 4.0
            for x in counts:
                for y in counts:
                    if counts[x] < counts[y]:
                        assert normalized[x] < normalized[y]


def test_recall_monotonicity():
    """Across an ascending threshold sweep, recall and the predicted-set
    size never increase, for every randomized fixture."""
    rng = random.Random(5)
    for _ in range(100):
        n = rng.randint(2, 30)
        app_ids = [f"a{i}" for i in range(n)]
        scores = {a: rng.uniform(1.0, 4.0) for a in app_ids}
        positives = {a for a in app_ids if rng.random() < 0.5}
        truth = make_truth(positives, set(app_ids) - positives)
        rows, _ = sweep(scores, truth, start=1.0, stop=4.0, step=0.1)
        for earlier, later in zip(rows, rows[1:]):
            assert later.recall <= earlier.recall
            assert later.tp + later.fp <= earlier.tp + earlier.fp


def test_icc_reliability_properties():
    """Perfect agreement scores 1 +- 1e-12; adding a constant bias to one
    rater leaves agreement unchanged; 100 random 10x2 matrices match an
    independent ANOVA recomputation within 1e-9."""
    rng = random.Random(17)
    for _ in range(20):
        n, k = rng.randint(3, 12), rng.randint(2, 4)
        column = [rng.uniform(1.0, 4.0) for _ in range(n)]
        perfect = [[v] * k for v in column]
        assert abs(icc3k(perfect) - 1.0) <= 1e-12

    for _ in range(50):
        matrix = [[rng.uniform(1.0, 4.0) for _ in range(3)] for _ in range(8)]
        bias = [rng.uniform(-2.0, 2.0) for _ in range(3)]
        biased = [[v + bias[j] for j, v in enumerate(row)] for row in matrix]
        assert abs(icc3k(biased) - icc3k(matrix)) <= 1e-9

    for _ in range(100):
        matrix = [[rng.uniform(1.0, 4.0) for _ in range(2)] for _ in range(10)]
        assert abs(icc3k(matrix) - oracles.icc3k_anova(matrix)) <= 1e-9


def test_regressor_learns_signal_not_noise():
    """On 500x512 synthetic embeddings whose targets follow a smooth
    function of a linear projection (noise sigma 0.2), 10-fold CV mean
    MSE must be at most half the target variance; on pure-noise targets
    it must sit within 30% of the target variance. Under 60 seconds."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    latent = rng.standard_normal((500, 6))
    mixing = rng.standard_normal((6, 512)) / np.sqrt(6)
    X = latent @ mixing + 0.05 * rng.standard_normal((500, 512))
    direction = rng.standard_normal(512)
    direction /= np.linalg.norm(direction)
    t = X @ direction
    t = (t - t.mean()) / t.std()
    Y = np.column_stack([
        np.clip(2.5 + 1.2 * np.tanh(0.9 * t) + rng.normal(0, 0.2, 500), 1, 4),
        np.clip(2.5 + 1.1 * np.tanh(0.7 * t) + rng.normal(0, 0.2, 500), 1, 4),
    ])

    report = cross_validate(X, Y, 10, seed=3)
    target_variance = float(np.var(Y))
    assert report.mean_mse <= 0.5 * target_variance

    noise = rng.uniform(1, 4, (500, 2))
    noise_report = cross_validate(X, noise, 10, seed=3)
    noise_variance = float(np.var(noise))
    assert 0.7 * noise_variance <= noise_report.mean_mse <= 1.3 * noise_variance

    assert time.perf_counter() - t0 < 60.0


def test_end_to_end_determinism(tmp_path):
    """Two full pipeline runs on the bundled fixture with the same seed
    produce byte-identical review scores, app scores, and sweep files."""
    first = tmp_path / "run1"
    second = tmp_path / "run2"
    first.mkdir()
    second.mkdir()
    run_pipeline(first, seed=0)
    run_pipeline(second, seed=0)
    for name in ("review_scores.jsonl", "app_scores.jsonl", "sweep.csv",
                 "model.npz"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_affect_direction(fixture_corpus):
    """In the bundled fixture, abuser-voiced reviews carry strictly higher
    mean dominance and valence than victim-voiced ones."""
    profiles = vad_profiles(fixture_corpus.reviews.values(),
                            bundled_vad_lexicon(), seed_keywords())
    by_type = {p.reviewer_type: p for p in profiles}
    abuser, victim = by_type["abuser"], by_type["victim"]
    assert abuser.adjective_count > 0
    assert victim.adjective_count > 0
    assert abuser.mean_dominance > victim.mean_dominance
    assert abuser.mean_valence > victim.mean_valence
