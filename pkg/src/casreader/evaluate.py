"""Accuracy evaluation over id-encoded samples, with optional per-sample
records and attention dumps for offline inspection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import reader
from .errors import ConfigurationError, UsageError, ValidationError
from .reader import EVAL_MODES, ModelParams
from .vocab import EncodedSample, Vocabulary, encode_sample

TOP_K = 5


@dataclass
class SampleRecordResult:
    predicted: str
    gold: str
    gold_rank: int | None  # 1-based rank of the gold token, None if absent
    top_words: dict[str, float]


@dataclass
class EvalReport:
    dataset: str
    mode: str
    total: int
    correct: int
    accuracy: float
    records: list[SampleRecordResult] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {
            "dataset": self.dataset,
            "mode": self.mode,
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
        }
        if self.records:
            out["records"] = [
                {
                    "predicted": r.predicted,
                    "gold": r.gold,
                    "gold_rank": r.gold_rank,
                    "top_words": r.top_words,
                }
                for r in self.records
            ]
        return out


def evaluate(
    params: ModelParams,
    vocab: Vocabulary,
    samples,
    mode: str | None = None,
    restrict_candidates: bool = False,
    keep_records: bool = False,
    dump_attention=None,
    dataset_name: str = "",
    batch_size: int = 64,
) -> EvalReport:
    """Fraction of samples whose argmax word equals the gold answer.

    Dropout stays off; parameters are untouched; results are deterministic
    and independent of batch composition.
    """
    if not samples:
        raise UsageError("evaluate needs a non-empty dataset")
    mode = params.config.merge_mode if mode is None else mode
    if mode not in EVAL_MODES:
        raise UsageError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if params.vocab_size != vocab.total_size:
        raise ConfigurationError(
            f"model expects vocabulary of size {params.vocab_size}, got {vocab.total_size}"
        )
    encoded: list[EncodedSample] = []
    for i, s in enumerate(samples):
        enc = s if isinstance(s, EncodedSample) else encode_sample(vocab, s)
        if enc.answer_missing:
            raise ValidationError(f"sample {i}: answer absent from its document after encoding")
        encoded.append(enc)

    dump_fh = open(dump_attention, "w", encoding="utf-8") if dump_attention else None
    correct = 0
    records: list[SampleRecordResult] = []
    try:
        for start in range(0, len(encoded), batch_size):
            group = encoded[start : start + batch_size]
            outputs = reader.forward(group, params, training=False, mode=mode)
            for enc, out in zip(group, outputs):
                word_probs = out.words.as_dict()
                candidates = enc.candidate_ids if restrict_candidates else None
                predicted = reader.argmax_word(word_probs, candidates)
                if predicted == enc.answer_id:
                    correct += 1
                if keep_records:
                    records.append(_record(vocab, word_probs, predicted, enc.answer_id))
                if dump_fh:
                    json.dump(
                        {
                            "doc_ids": [int(t) for t in enc.doc_ids],
                            "alpha": out.alpha.data.tolist() if out.alpha is not None else [],
                            "merged": out.merged.data.tolist(),
                            "word_probs": {str(k): v for k, v in word_probs.items()},
                        },
                        dump_fh,
                    )
                    dump_fh.write("\n")
    finally:
        if dump_fh:
            dump_fh.close()
    return EvalReport(
        dataset=dataset_name,
        mode=mode,
        total=len(encoded),
        correct=correct,
        accuracy=correct / len(encoded),
        records=records,
    )


def _record(vocab, word_probs, predicted, gold_id) -> SampleRecordResult:
    ranked = sorted(word_probs.items(), key=lambda kv: (-kv[1], kv[0]))
    rank = None
    for i, (tid, _) in enumerate(ranked, start=1):
        if tid == gold_id:
            rank = i
            break
    return SampleRecordResult(
        predicted=vocab.id_to_token(predicted),
        gold=vocab.id_to_token(gold_id),
        gold_rank=rank,
        top_words={vocab.id_to_token(tid): p for tid, p in ranked[:TOP_K]},
    )
