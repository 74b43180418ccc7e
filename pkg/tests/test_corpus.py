import datetime as dt
import json

import pytest

from misuseaudit import keywords
from misuseaudit.corpus import (
    App,
    Corpus,
    Review,
    ReviewerType,
    SourceDataset,
    StoryType,
    build_training_pool,
    deduplicate,
    filter_by_keywords,
    ingest,
    load_similar_map,
    normalize_body,
    sample,
    save_corpus,
    snowball,
)
from misuseaudit.errors import CorruptInputError, IngestError, ValidationError


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


APPS = [
    {"app_id": "a1", "name": "Tracker", "description": "find phones",
     "category": "tools", "source_dataset": "seed"},
    {"app_id": "a2", "name": "Notes"},
]


def review_row(rid, app="a1", body="some body text", **extra):
    row = {"review_id": rid, "app_id": app, "body": body}
    row.update(extra)
    return row


class TestIngest:
    def test_reads_apps_and_reviews(self, tmp_path):
        write_jsonl(tmp_path / "apps.jsonl", APPS)
        write_jsonl(tmp_path / "reviews.jsonl", [
            review_row("r1", title="Nice", rating=5, date="2021-04-02",
                       reviewer_type="abuser", story_type="exploitable_act"),
            review_row("r2", app="a2"),
        ])
        corpus = ingest([tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl"])
        assert set(corpus.apps) == {"a1", "a2"}
        assert corpus.apps["a1"].source_dataset is SourceDataset.SEED
        assert corpus.apps["a2"].source_dataset is SourceDataset.CUSTOM
        review = corpus.reviews["r1"]
        assert review.rating == 5
        assert review.date == dt.date(2021, 4, 2)
        assert review.reviewer_type is ReviewerType.ABUSER
        assert review.story_type is StoryType.EXPLOITABLE_ACT
        assert corpus.reviews["r2"].reviewer_type is ReviewerType.UNKNOWN

    def test_order_of_paths_does_not_matter(self, tmp_path):
        write_jsonl(tmp_path / "apps.jsonl", APPS)
        write_jsonl(tmp_path / "reviews.jsonl", [review_row("r1")])
        corpus = ingest([tmp_path / "reviews.jsonl", tmp_path / "apps.jsonl"])
        assert set(corpus.reviews) == {"r1"}

    def test_unknown_app_reviews_are_skipped_and_counted(self, tmp_path):
        write_jsonl(tmp_path / "apps.jsonl", APPS)
        write_jsonl(tmp_path / "reviews.jsonl", [
            review_row("r1"), review_row("r2", app="ghost")])
        corpus = ingest([tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl"])
        assert set(corpus.reviews) == {"r1"}
        assert corpus.provenance.skipped_unknown_app == 1

    def test_malformed_rows_are_skipped_and_counted(self, tmp_path):
        write_jsonl(tmp_path / "apps.jsonl", APPS)
        rows = [review_row("r1"), review_row("r2", rating=9),
                review_row("r3", body="   "), review_row("r4"),
                review_row("r5"), review_row("r6", date="not-a-date")]
        write_jsonl(tmp_path / "reviews.jsonl", rows)
        corpus = ingest([tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl"])
        assert set(corpus.reviews) == {"r1", "r4", "r5"}
        assert corpus.provenance.skipped_malformed == 3

    def test_mostly_malformed_file_raises(self, tmp_path):
        write_jsonl(tmp_path / "apps.jsonl", APPS)
        write_jsonl(tmp_path / "reviews.jsonl", [
            review_row("r1"), review_row("r2", rating=0), review_row("r3", rating=77)])
        with pytest.raises(CorruptInputError):
            ingest([tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl"])

    def test_duplicate_ids_keep_first(self, tmp_path):
        write_jsonl(tmp_path / "apps.jsonl", APPS + [
            {"app_id": "a1", "name": "Impostor"}])
        write_jsonl(tmp_path / "reviews.jsonl", [
            review_row("r1", body="first"), review_row("r1", body="second")])
        corpus = ingest([tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl"])
        assert corpus.apps["a1"].name == "Tracker"
        assert corpus.reviews["r1"].body == "first"
        assert corpus.provenance.files[0].rows_duplicate_id == 1

    def test_csv_format(self, tmp_path):
        (tmp_path / "apps.csv").write_text(
            "app_id,name,description\na1,Tracker,finds phones\n", encoding="utf-8")
        (tmp_path / "reviews.csv").write_text(
            "review_id,app_id,title,body,rating\nr1,a1,Hey,Good app,4\n",
            encoding="utf-8")
        corpus = ingest([tmp_path / "apps.csv", tmp_path / "reviews.csv"], "csv")
        assert corpus.reviews["r1"].rating == 4

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(IngestError):
            ingest([tmp_path / "nope.jsonl"])

    def test_unparseable_file_raises(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text("not json\nstill not json\n",
                                            encoding="utf-8")
        with pytest.raises(CorruptInputError):
            ingest([tmp_path / "bad.jsonl"])


class TestDeduplicate:
    def test_normalize_body(self):
        assert normalize_body("  Great\tAPP\n\nworks ") == "great app works"

    def review(self, rid, body, date=None):
        return Review(review_id=rid, app_id="a1", body=body,
                      date=dt.date.fromisoformat(date) if date else None)

    def corpus(self, *reviews):
        return Corpus(apps={"a1": App("a1", "A")},
                      reviews={r.review_id: r for r in reviews})

    def test_earliest_dated_copy_survives(self):
        corpus = self.corpus(
            self.review("r1", "Same text", "2021-05-01"),
            self.review("r2", "same   TEXT", "2020-01-01"),
            self.review("r3", "different text", "2022-01-01"))
        deduped, removed = deduplicate(corpus)
        assert removed == 1
        assert set(deduped.reviews) == {"r2", "r3"}

    def test_undated_loses_to_dated(self):
        corpus = self.corpus(
            self.review("r1", "same text"),
            self.review("r2", "same text", "2023-08-01"))
        deduped, _ = deduplicate(corpus)
        assert set(deduped.reviews) == {"r2"}

    def test_review_id_breaks_remaining_ties(self):
        corpus = self.corpus(
            self.review("r9", "same text", "2021-01-01"),
            self.review("r2", "same text", "2021-01-01"))
        deduped, _ = deduplicate(corpus)
        assert set(deduped.reviews) == {"r2"}


class TestSampling:
    def test_filter_by_keywords_uses_title_and_body(self):
        corpus = Corpus(
            apps={"a1": App("a1", "A")},
            reviews={
                "r1": Review("r1", "a1", title="Spying tool", body="works"),
                "r2": Review("r2", "a1", body="I stalked my ex"),
                "r3": Review("r3", "a1", body="love the UI"),
            })
        assert sorted(filter_by_keywords(corpus, keywords.seed_keywords())) == ["r1", "r2"]

    def test_sample_is_deterministic_and_order_free(self):
        ids = [f"r{i}" for i in range(30)]
        a = sample(ids, 10, seed=7)
        b = sample(list(reversed(ids)), 10, seed=7)
        assert a == b
        assert len(set(a)) == 10
        assert sample(ids, 10, seed=8) != a

    def test_sample_validation(self):
        with pytest.raises(ValidationError):
            sample(["r1"], 2, seed=0)
        with pytest.raises(ValidationError):
            sample(["r1"], -1, seed=0)

    def test_training_pool_balances_and_dedupes(self):
        reviews = {}
        for i in range(10):
            reviews[f"m{i}"] = Review(f"m{i}", "a1", body=f"spy app variant {i}")
        for i in range(10):
            reviews[f"n{i}"] = Review(f"n{i}", "a1", body=f"plain note taker {i}")
        reviews["m9"] = Review("m9", "a1", body="spy app variant 8")  # dup of m8
        corpus = Corpus(apps={"a1": App("a1", "A")}, reviews=reviews)
        pool = build_training_pool(corpus, keywords.seed_keywords(), 10, 5, seed=3)
        # all 10 matching ids are drawn, so the m8/m9 duplicate pair collapses
        assert len(pool) == 14
        assert pool == sorted(pool)

    def test_training_pool_validates_sizes(self):
        corpus = Corpus(apps={"a1": App("a1", "A")},
                        reviews={"r1": Review("r1", "a1", body="spy gear")})
        with pytest.raises(ValidationError):
            build_training_pool(corpus, keywords.seed_keywords(), 2, 0, seed=0)
        with pytest.raises(ValidationError):
            build_training_pool(corpus, keywords.seed_keywords(), 0, 1, seed=0)


class TestSnowball:
    def test_expansion_excludes_confirmed(self):
        similar = {"a": ["b", "c"], "b": ["a", "d"], "x": ["y"]}
        assert snowball(["a", "b"], similar) == ["c", "d"]

    def test_missing_apps_contribute_nothing(self):
        assert snowball(["ghost"], {"a": ["b"]}) == []

    def test_load_similar_map(self, tmp_path):
        write_jsonl(tmp_path / "sim.jsonl", [
            {"app_id": "a", "similar": ["b", "c"]},
            {"app_id": "d"},
        ])
        assert load_similar_map(tmp_path / "sim.jsonl") == {"a": ["b", "c"], "d": []}

    def test_load_similar_map_errors(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text("{\"similar\": []}\n", encoding="utf-8")
        with pytest.raises(IngestError):
            load_similar_map(tmp_path / "bad.jsonl")
        with pytest.raises(IngestError):
            load_similar_map(tmp_path / "missing.jsonl")


def test_save_and_reingest_round_trip(tmp_path, fixture_corpus):
    save_corpus(fixture_corpus, tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl")
    again = ingest([tmp_path / "apps.jsonl", tmp_path / "reviews.jsonl"])
    assert set(again.apps) == set(fixture_corpus.apps)
    assert set(again.reviews) == set(fixture_corpus.reviews)
    for rid, review in fixture_corpus.reviews.items():
        assert again.reviews[rid] == review


def test_fixture_dedupe_removes_one(fixture_corpus):
    deduped, removed = deduplicate(fixture_corpus)
    assert removed == 1
    assert "r006" not in deduped.reviews
    assert "r002" in deduped.reviews
