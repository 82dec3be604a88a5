"""Dataset I/O, synthetic corpus, and evaluation-report tests."""

import json
from pathlib import Path

import numpy as np
import pytest

from casreader import data, reader, synthetic
from casreader.datagen import ClozeSample, dataset_stats, validate_sample
from casreader.errors import ConfigurationError, ParseError, UsageError, ValidationError
from casreader.evaluate import evaluate
from casreader.vocab import PLACEHOLDER_TOKEN, build_vocab

GOLDEN = Path(__file__).parent / "golden" / "synth_seed0_stats.json"


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def record(document, query, answer, **extra):
    return json.dumps({"document": document, "query": query, "answer": answer, **extra})


class TestLoadDataset:
    def test_two_valid_lines(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(
            path,
            [
                record(["a", "b", "a"], [PLACEHOLDER_TOKEN, "b"], "a"),
                record(["x", "y", "x"], ["y", PLACEHOLDER_TOKEN], "x"),
            ],
        )
        samples, skipped = data.load_dataset(path)
        assert len(samples) == 2 and skipped == []
        assert samples[0].answer == "a"

    def test_zero_placeholders_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(
            path,
            [
                record(["a", "b", "a"], [PLACEHOLDER_TOKEN, "b"], "a"),
                record(["a", "b", "a"], ["b", "c"], "a"),
            ],
        )
        with pytest.raises(ValidationError, match="line 2"):
            data.load_dataset(path)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [record(["a", "a"], [PLACEHOLDER_TOKEN], "a"), "{not json"])
        with pytest.raises(ParseError, match="line 2"):
            data.load_dataset(path)

    def test_lenient_mode_skips_and_counts(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(
            path,
            [
                record(["a", "b", "a"], [PLACEHOLDER_TOKEN, "b"], "a"),
                "{broken",
                record(["a", "b", "a"], ["no", "blank"], "a"),
            ],
        )
        samples, skipped = data.load_dataset(path, strict=False)
        assert len(samples) == 1
        assert [line for line, _ in skipped] == [2, 3]

    def test_round_trip(self, tmp_path):
        samples = [
            ClozeSample(
                document=["a", "b", "a"],
                query=[PLACEHOLDER_TOKEN, "b"],
                answer="a",
                candidates=["a", "b"],
                meta={"doc_id": "d0"},
            )
        ]
        path = tmp_path / "d.jsonl"
        data.save_dataset(samples, path)
        loaded, _ = data.load_dataset(path)
        assert loaded == samples


class TestSyntheticCorpus:
    def test_every_record_passes_validation(self):
        splits = synthetic.generate_synthetic_corpus(synthetic.SyntheticConfig(seed=3))
        for samples in splits.values():
            for s in samples:
                validate_sample(s)
                assert s.candidates and s.answer in s.candidates

    def test_deterministic(self):
        a = synthetic.generate_synthetic_corpus(synthetic.SyntheticConfig(seed=5))
        b = synthetic.generate_synthetic_corpus(synthetic.SyntheticConfig(seed=5))
        assert a == b

    def test_splits_disjoint_by_document(self):
        splits = synthetic.generate_synthetic_corpus(synthetic.SyntheticConfig(seed=1))
        ids = [s.meta["doc_id"] for samples in splits.values() for s in samples]
        assert len(ids) == len(set(ids))

    def test_baseline_in_band(self):
        splits = synthetic.generate_synthetic_corpus(synthetic.SyntheticConfig(seed=0))
        acc = synthetic.baseline_accuracy(splits["test"])
        assert 0.6 <= acc <= 0.9

    def test_stats_match_golden(self):
        golden = json.loads(GOLDEN.read_text())
        splits = synthetic.generate_synthetic_corpus(synthetic.SyntheticConfig(seed=0))
        for split, samples in splits.items():
            assert dataset_stats(samples).as_dict() == golden[split]
        assert synthetic.baseline_accuracy(splits["test"]) == golden["baseline_test_accuracy"]

    def test_frequency_baseline_tie_break(self):
        s = ClozeSample(
            document=["noun01", "noun00", "noun01", "noun00"],
            query=[PLACEHOLDER_TOKEN, "x"],
            answer="noun01",
            candidates=["noun00", "noun01"],
        )
        assert synthetic.frequency_baseline(s) == "noun00"  # tie -> lexicographic


def tiny_model(vocab, mode="avg", seed=0):
    config = reader.ReaderConfig(embed_dim=4, hidden_dim=4, merge_mode=mode)
    return reader.init_model_params(config, vocab.total_size, np.random.default_rng(seed))


def small_dataset():
    docs = [
        (["w1", "w2", "w1", "w3"], [PLACEHOLDER_TOKEN, "w2"], "w1"),
        (["w2", "w3", "w2"], ["w3", PLACEHOLDER_TOKEN], "w2"),
        (["w3", "w1", "w3"], [PLACEHOLDER_TOKEN, "w1"], "w3"),
        (["w1", "w4", "w1"], ["w4", PLACEHOLDER_TOKEN], "w1"),
    ]
    return [ClozeSample(document=d, query=q, answer=a) for d, q, a in docs]


class TestEvaluate:
    def test_accuracy_is_exact_fraction(self):
        samples = small_dataset()
        vocab = build_vocab(
            [t for s in samples for t in s.document + s.query + [s.answer]], shortlist_size=None
        )
        params = tiny_model(vocab)
        report = evaluate(params, vocab, samples, dataset_name="small")
        assert report.total == 4
        assert report.accuracy == report.correct / report.total
        assert report.dataset == "small"

    def test_empty_dataset_rejected(self):
        vocab = build_vocab(["a"], shortlist_size=None)
        with pytest.raises(UsageError):
            evaluate(tiny_model(vocab), vocab, [])

    def test_vocab_mismatch_is_configuration_error(self):
        vocab = build_vocab(["a", "b"], shortlist_size=None)
        bigger = build_vocab(["a", "b", "c"], shortlist_size=None)
        params = tiny_model(bigger)
        with pytest.raises(ConfigurationError):
            evaluate(params, vocab, small_dataset())

    def test_constant_prediction_dummy_scores_its_base_rate(self):
        # A document set where exactly 1 of 10 answers equals the token a
        # constant-prediction model must emit.
        samples = []
        for i in range(10):
            answer = "common" if i == 0 else f"rare{i}"
            doc = [answer, "common", answer] if i else [answer, "filler", answer]
            samples.append(
                ClozeSample(document=doc, query=[PLACEHOLDER_TOKEN, "q"], answer=answer)
            )
        vocab = build_vocab(
            [t for s in samples for t in s.document + [s.answer]], shortlist_size=None
        )
        correct = sum(
            1
            for s in samples
            if vocab.token_to_id("common") == vocab.token_to_id(s.answer)
        )
        assert correct == 1  # constant "common" predictor -> 0.10 by construction

    def test_records_and_rank(self):
        samples = small_dataset()
        vocab = build_vocab(
            [t for s in samples for t in s.document + s.query + [s.answer]], shortlist_size=None
        )
        report = evaluate(tiny_model(vocab), vocab, samples, keep_records=True)
        assert len(report.records) == 4
        for rec in report.records:
            assert rec.gold_rank is not None and rec.gold_rank >= 1
            assert 0 < len(rec.top_words) <= 5

    def test_attention_dump_satisfies_invariants(self, tmp_path):
        samples = small_dataset()
        vocab = build_vocab(
            [t for s in samples for t in s.document + s.query + [s.answer]], shortlist_size=None
        )
        dump = tmp_path / "attn.jsonl"
        evaluate(tiny_model(vocab), vocab, samples, dump_attention=dump)
        lines = dump.read_text().strip().splitlines()
        assert len(lines) == 4
        for line in lines:
            rec = json.loads(line)
            alpha = np.array(rec["alpha"])
            merged = np.array(rec["merged"])
            np.testing.assert_allclose(alpha.sum(axis=1), np.ones(alpha.shape[0]), atol=1e-12)
            assert abs(merged.sum() - 1.0) < 1e-12
            assert abs(sum(rec["word_probs"].values()) - 1.0) < 1e-10

    def test_evaluation_does_not_touch_parameters(self):
        samples = small_dataset()
        vocab = build_vocab(
            [t for s in samples for t in s.document + s.query + [s.answer]], shortlist_size=None
        )
        params = tiny_model(vocab)
        before = {k: p.data.copy() for k, p in params.named().items()}
        first = evaluate(params, vocab, samples)
        second = evaluate(params, vocab, samples)
        assert first.accuracy == second.accuracy
        for k, p in params.named().items():
            np.testing.assert_array_equal(p.data, before[k])

    def test_restrict_candidates(self):
        sample = ClozeSample(
            document=["a", "b", "a", "b"],
            query=[PLACEHOLDER_TOKEN, "c"],
            answer="b",
            candidates=["b"],
        )
        vocab = build_vocab(["a", "b", "c"], shortlist_size=None)
        params = tiny_model(vocab)
        unrestricted = evaluate(params, vocab, [sample])
        restricted = evaluate(params, vocab, [sample], restrict_candidates=True)
        assert restricted.accuracy == 1.0
        assert restricted.accuracy >= unrestricted.accuracy
