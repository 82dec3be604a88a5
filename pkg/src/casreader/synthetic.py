"""Synthetic cue/answer corpus for desk-scale verification.

Every document is built around one (cue, noun) pair from a global
inventory: the answer noun appears in `answer_repeats` sentences, always
directly after its cue; the query is one of those sentences with the noun
blanked (the cue stays, and the document keeps the sentence intact). Half
the documents also carry a bare distractor noun repeated exactly as often
as the answer, so a pick-the-most-frequent-candidate baseline faces a
coin-flip tie there, while cue adjacency and the verbatim context match
identify the answer everywhere: the answer is the most repeated token
co-occurring with the query's cue. Fillers are drawn without replacement
inside each document, so no filler outnumbers the answer.

Splits are disjoint by document and the whole corpus is a pure function of
the seed.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import save_dataset
from .datagen import ClozeSample, validate_sample
from .errors import UsageError
from .vocab import PLACEHOLDER_TOKEN


@dataclass
class SyntheticConfig:
    vocab_size: int = 50
    train_docs: int = 200
    valid_docs: int = 50
    test_docs: int = 50
    pairs: int = 12
    sentence_len: int = 4
    answer_repeats: int = 3
    tie_prob: float = 0.5
    background_sentences: int = 2
    filler_sentences: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 20:
            raise UsageError(f"vocab_size must be >= 20, got {self.vocab_size}")
        if self.sentence_len < 3:
            raise UsageError("sentence_len must be >= 3 (cue, noun, and filler room)")
        if self.answer_repeats < 2:
            raise UsageError("answer_repeats must be >= 2 so the answer survives blanking")
        if self.pairs < 3:
            raise UsageError("need at least 3 pairs for distractor and background draws")
        if not 0.0 <= self.tie_prob <= 1.0:
            raise UsageError("tie_prob must be in [0, 1]")
        if len(self.fillers) < self._max_filler_slots():
            raise UsageError(
                "vocab_size too small: documents need "
                f"{self._max_filler_slots()} distinct fillers, only {len(self.fillers)} available"
            )
        min_doc_len = (
            self.answer_repeats + self.background_sentences + self.filler_sentences
        ) * self.sentence_len
        if min_doc_len < 10:
            raise UsageError("documents would be shorter than 10 tokens")

    def _max_filler_slots(self) -> int:
        per_pair = self.sentence_len - 2
        per_bare = self.sentence_len - 1
        return (
            self.answer_repeats * per_pair
            + (self.answer_repeats + self.background_sentences) * per_bare
            + self.filler_sentences * self.sentence_len
        )

    @property
    def cues(self) -> list[str]:
        return [f"cue{i:02d}" for i in range(self.pairs)]

    @property
    def nouns(self) -> list[str]:
        return [f"noun{i:02d}" for i in range(self.pairs)]

    @property
    def fillers(self) -> list[str]:
        return [f"fill{i:02d}" for i in range(self.vocab_size - 2 * self.pairs)]


class _FillerPool:
    """Per-document filler source without replacement."""

    def __init__(self, cfg: SyntheticConfig, rng: np.random.Generator):
        order = rng.permutation(len(cfg.fillers))
        self._names = [cfg.fillers[i] for i in order]
        self._next = 0

    def take(self, n: int) -> list[str]:
        out = self._names[self._next : self._next + n]
        self._next += n
        return out


def _pair_sentence(cfg, pair, pool, rng) -> tuple[list[str], int]:
    """cue directly followed by its noun amid fillers; returns the noun slot."""
    sentence = pool.take(cfg.sentence_len - 2)
    slot = int(rng.integers(0, len(sentence) + 1))
    sentence[slot:slot] = [cfg.cues[pair], cfg.nouns[pair]]
    return sentence, slot + 1


def _bare_noun_sentence(cfg, pair, pool, rng) -> list[str]:
    sentence = pool.take(cfg.sentence_len - 1)
    slot = int(rng.integers(0, len(sentence) + 1))
    sentence[slot:slot] = [cfg.nouns[pair]]
    return sentence


def _build_document(cfg: SyntheticConfig, rng: np.random.Generator, doc_id: str) -> ClozeSample:
    pool = _FillerPool(cfg, rng)
    pair = int(rng.integers(cfg.pairs))
    sentences: list[tuple[list[str], int | None]] = []
    for _ in range(cfg.answer_repeats):
        sent, noun_pos = _pair_sentence(cfg, pair, pool, rng)
        sentences.append((sent, noun_pos))
    others = [p for p in range(cfg.pairs) if p != pair]
    rng.shuffle(others)
    if rng.random() < cfg.tie_prob:
        # Bare distractor repeated to tie the answer count exactly.
        distractor, others = others[0], others[1:]
        for _ in range(cfg.answer_repeats):
            sentences.append((_bare_noun_sentence(cfg, distractor, pool, rng), None))
    for p in others[: cfg.background_sentences]:
        sentences.append((_bare_noun_sentence(cfg, p, pool, rng), None))
    for _ in range(cfg.filler_sentences):
        sentences.append((pool.take(cfg.sentence_len), None))

    order = rng.permutation(len(sentences))
    answer_slots = [int(i) for i in order if sentences[i][1] is not None]
    query_sentence = answer_slots[int(rng.integers(len(answer_slots)))]

    # The document keeps every sentence intact; the query is the chosen
    # sentence with its noun blanked, so the answer stays at full count and
    # the query context has an exact match inside the document.
    document: list[str] = []
    query: list[str] = []
    for idx in order:
        sent, noun_pos = sentences[idx]
        document.extend(sent)
        if idx == query_sentence:
            query = list(sent)
            query[noun_pos] = PLACEHOLDER_TOKEN
    candidates = sorted({tok for tok in document if tok.startswith("noun")})
    sample = ClozeSample(
        document=document,
        query=query,
        answer=cfg.nouns[pair],
        candidates=candidates,
        meta={"doc_id": doc_id},
    )
    validate_sample(sample)
    return sample


def generate_synthetic_corpus(
    cfg: SyntheticConfig, out_dir=None
) -> dict[str, list[ClozeSample]]:
    """Build train/valid/test splits; writes <split>.jsonl under out_dir if given."""
    rng = np.random.default_rng(cfg.seed)
    splits: dict[str, list[ClozeSample]] = {}
    for split, count in (("train", cfg.train_docs), ("valid", cfg.valid_docs), ("test", cfg.test_docs)):
        splits[split] = [
            _build_document(cfg, rng, doc_id=f"synth-{split}-{i:04d}") for i in range(count)
        ]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split, samples in splits.items():
            save_dataset(samples, out / f"{split}.jsonl")
    return splits


def frequency_baseline(sample: ClozeSample) -> str:
    """Predict the most frequent candidate token in the document.

    Falls back to all document tokens when no candidate list is present;
    ties break to the lexicographically smallest token.
    """
    pool = sample.candidates if sample.candidates else sample.document
    counts = Counter(tok for tok in sample.document if tok in set(pool))
    best = max(counts.values())
    return min(tok for tok, c in counts.items() if c == best)


def baseline_accuracy(samples: list[ClozeSample]) -> float:
    if not samples:
        raise UsageError("baseline_accuracy needs samples")
    hits = sum(1 for s in samples if frequency_baseline(s) == s.answer)
    return hits / len(samples)
