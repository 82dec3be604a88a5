"""Mini-batch training: shuffled epochs, mean negative log-likelihood,
global-norm gradient clipping, Adam updates, epoch-level validation
selection, and a manifest-plus-flat-arrays checkpoint format.

The answer distribution comes out of two stacked softmaxes, so every
document word has strictly positive probability and the log-likelihood is
always finite on finite inputs; divergence can still happen through the
parameters themselves and aborts the run with the best checkpoint so far.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reader
from . import tensor as T
from .errors import (
    ConfigurationError,
    CorruptionError,
    NumericError,
    UsageError,
    ValidationError,
)
from .nn import GruParams
from .reader import MERGE_MODES, ModelParams, ReaderConfig
from .tensor import Tensor
from .vocab import EncodedSample, Vocabulary, load_vocab, save_vocab

Array = np.ndarray

_MANIFEST_FORMAT = "casreader-checkpoint-v1"


@dataclass
class TrainConfig:
    embed_dim: int = 16
    hidden_dim: int = 16
    dropout_rate: float = 0.0
    merge_mode: str = "avg"
    lr: float = 0.0005
    batch_size: int = 32
    clip_threshold: float = 10.0
    epochs: int = 10
    seed: int = 0
    shortlist_size: int | None = 100_000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.batch_size, self.epochs) < 1:
            raise ConfigurationError("dimensions, batch size, and epochs must be positive")
        if self.lr <= 0 or self.clip_threshold <= 0:
            raise ConfigurationError("lr and clip_threshold must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.merge_mode not in MERGE_MODES:
            raise ConfigurationError(f"merge_mode must be one of {MERGE_MODES}")

    def reader_config(self) -> ReaderConfig:
        return ReaderConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            dropout_rate=self.dropout_rate,
            merge_mode=self.merge_mode,
        )


# Table-style preset for full-corpus news training, plus the desk-scale
# defaults used throughout the test suite.
PRESETS = {
    "news-full": TrainConfig(embed_dim=256, hidden_dim=256, dropout_rate=0.1, shortlist_size=100_000),
    "desk": TrainConfig(embed_dim=16, hidden_dim=16, dropout_rate=0.0, shortlist_size=None),
}


@dataclass
class Batch:
    doc_ids: Array  # [batch x max_doc_len]
    doc_mask: Array
    query_ids: Array
    query_mask: Array
    answer_ids: Array
    samples: list[EncodedSample]


def make_batches(
    samples: list[EncodedSample], batch_size: int, rng: np.random.Generator
) -> list[Batch]:
    """Shuffle, group, and right-pad. Samples whose answer id is missing
    from their document are rejected outright."""
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    for i, s in enumerate(samples):
        if s.answer_id not in s.doc_ids:
            raise ValidationError(f"sample {i}: answer id {s.answer_id} not in document")
    order = rng.permutation(len(samples))
    batches = []
    for start in range(0, len(samples), batch_size):
        group = [samples[i] for i in order[start : start + batch_size]]
        doc_ids, doc_mask = _pad([s.doc_ids for s in group])
        query_ids, query_mask = _pad([s.query_ids for s in group])
        batches.append(
            Batch(
                doc_ids=doc_ids,
                doc_mask=doc_mask,
                query_ids=query_ids,
                query_mask=query_mask,
                answer_ids=np.array([s.answer_id for s in group], dtype=np.int64),
                samples=group,
            )
        )
    return batches


def _pad(rows: list[Array]) -> tuple[Array, Array]:
    width = max(len(r) for r in rows)
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = True
    return ids, mask


def nll_loss(outputs: list[reader.SampleForward], answer_ids) -> Tensor:
    """Mean negative log-likelihood of the gold answers."""
    answer_ids = np.asarray(answer_ids, dtype=np.int64)
    if len(outputs) != answer_ids.shape[0]:
        raise UsageError("one answer id per sample output required")
    terms = []
    for out, answer in zip(outputs, answer_ids):
        slot = out.words.slot(int(answer))
        if slot is None:
            raise ValidationError(f"answer id {answer} has no probability mass in its document")
        terms.append(T.log(T.take(out.words.probs, slot)))
    return T.mul(T.add_n(terms), -1.0 / len(terms))


def clip_gradients(grads: dict[str, Array], threshold: float) -> tuple[dict[str, Array], float]:
    """Scale all gradients jointly so the global L2 norm is at most `threshold`.

    Returns the (possibly rescaled) gradients and the pre-clip global norm.
    """
    if threshold <= 0:
        raise UsageError(f"clip threshold must be positive, got {threshold}")
    total = 0.0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm <= threshold:
        return {name: g.copy() for name, g in grads.items()}, norm
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}, norm


@dataclass
class AdamState:
    """First/second-moment accumulators plus the shared step counter."""

    m: dict[str, Array]
    v: dict[str, Array]
    t: int
    lr: float
    beta1: float
    beta2: float
    epsilon: float

    @classmethod
    def init(cls, params: dict[str, Tensor], lr: float, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            t=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: dict[str, Tensor], grads: dict[str, Array], state: AdamState) -> None:
    """Bias-corrected Adam update, in place on the parameter tensors."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ConfigurationError(
                f"gradient shape {g.shape} does not match parameter {name!r} shape {p.data.shape}"
            )
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    valid_accuracy: float
    wall_time_s: float

    def deterministic_fields(self) -> tuple:
        return (self.epoch, self.mean_loss, self.valid_accuracy)


@dataclass
class TrainResult:
    params: ModelParams  # best-by-validation snapshot
    adam_state: AdamState
    config: TrainConfig
    best_epoch: int
    best_accuracy: float
    history: list[EpochRecord]
    aborted: bool = False


def _validation_accuracy(params: ModelParams, samples: list[EncodedSample]) -> float:
    correct = 0
    for start in range(0, len(samples), 64):
        group = samples[start : start + 64]
        outputs = reader.forward(group, params, training=False)
        for out, s in zip(outputs, group):
            if reader.argmax_word(out.words.as_dict()) == s.answer_id:
                correct += 1
    return correct / len(samples)


def _snapshot(params: ModelParams) -> ModelParams:
    named = {name: Tensor(p.data.copy(), requires_grad=True) for name, p in params.named().items()}

    def gru(prefix: str) -> GruParams:
        return GruParams(**{k[len(prefix) + 1 :]: named[k] for k in named if k.startswith(prefix + ".")})

    return ModelParams(
        embedding=named["embedding"],
        doc_fwd=gru("doc_fwd"),
        doc_bwd=gru("doc_bwd"),
        query_fwd=gru("query_fwd"),
        query_bwd=gru("query_bwd"),
        config=params.config,
    )


def train(
    config: TrainConfig,
    train_samples: list[EncodedSample],
    valid_samples: list[EncodedSample],
    vocab_size: int,
    log_path=None,
) -> TrainResult:
    """Full training loop; keeps the checkpoint with the best validation
    accuracy (ties resolve to the earlier epoch)."""
    if not train_samples or not valid_samples:
        raise UsageError("train and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = reader.init_model_params(config.reader_config(), vocab_size, rng)
    named = params.named()
    state = AdamState.init(named, config.lr, config.beta1, config.beta2, config.epsilon)
    best: ModelParams | None = None
    best_accuracy = -1.0
    best_epoch = -1
    history: list[EpochRecord] = []
    aborted = False
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            losses = []
            diverged = False
            for batch in make_batches(train_samples, config.batch_size, rng):
                for p in named.values():
                    p.zero_grad()
                outputs = reader.forward(batch.samples, params, training=True, rng=rng)
                loss = nll_loss(outputs, batch.answer_ids)
                if not np.isfinite(loss.data):
                    diverged = True
                    break
                loss.backward()
                grads = {
                    name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                    for name, p in named.items()
                }
                clipped, _ = clip_gradients(grads, config.clip_threshold)
                adam_step(named, clipped, state)
                losses.append(float(loss.data))
            if diverged or not losses:
                aborted = True
                break
            accuracy = _validation_accuracy(params, valid_samples)
            record = EpochRecord(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                valid_accuracy=accuracy,
                wall_time_s=time.perf_counter() - started,
            )
            history.append(record)
            if log_fh:
                json.dump(
                    {
                        "epoch": record.epoch,
                        "mean_loss": record.mean_loss,
                        "valid_accuracy": record.valid_accuracy,
                        "wall_time_s": record.wall_time_s,
                    },
                    log_fh,
                )
                log_fh.write("\n")
                log_fh.flush()
            if accuracy > best_accuracy:
                best_accuracy = accuracy
                best_epoch = epoch
                best = _snapshot(params)
    finally:
        if log_fh:
            log_fh.close()
    if best is None:
        raise NumericError("training diverged before completing the first epoch")
    return TrainResult(
        params=best,
        adam_state=state,
        config=config,
        best_epoch=best_epoch,
        best_accuracy=best_accuracy,
        history=history,
        aborted=aborted,
    )


# ---------------------------------------------------------------------------
# checkpoint persistence: text manifest + little-endian float64 arrays
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    adam_state: AdamState
    config: TrainConfig
    vocab: Vocabulary | None


def save_checkpoint(
    params: ModelParams,
    adam_state: AdamState,
    config: TrainConfig,
    path,
    vocab: Vocabulary | None = None,
) -> None:
    """Write manifest.txt, params.bin, adam.bin (and vocab.txt when given).

    Arrays are stored flat, little-endian float64, in manifest order; the
    round trip is bit-exact.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    named = params.named()
    lines = [
        _MANIFEST_FORMAT,
        f"vocab_size\t{params.vocab_size}",
        f"embed_dim\t{config.embed_dim}",
        f"hidden_dim\t{config.hidden_dim}",
        f"dropout_rate\t{config.dropout_rate!r}",
        f"merge_mode\t{config.merge_mode}",
        f"lr\t{config.lr!r}",
        f"batch_size\t{config.batch_size}",
        f"clip_threshold\t{config.clip_threshold!r}",
        f"epochs\t{config.epochs}",
        f"seed\t{config.seed}",
        f"shortlist_size\t{'none' if config.shortlist_size is None else config.shortlist_size}",
        f"beta1\t{adam_state.beta1!r}",
        f"beta2\t{adam_state.beta2!r}",
        f"epsilon\t{adam_state.epsilon!r}",
        f"adam_t\t{adam_state.t}",
    ]
    for name, p in named.items():
        shape = ",".join(str(d) for d in p.data.shape)
        lines.append(f"param\t{name}\t{shape}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out / "params.bin", "wb") as fh:
        for p in named.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(out / "adam.bin", "wb") as fh:
        for name in named:
            fh.write(np.ascontiguousarray(adam_state.m[name], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(adam_state.v[name], dtype="<f8").tobytes())
    if vocab is not None:
        save_vocab(vocab, out / "vocab.txt")


def _read_arrays(path: Path, specs: list[tuple[str, tuple[int, ...]]], per_param: int) -> dict[str, list[Array]]:
    """Read `per_param` consecutive arrays per manifest entry from a flat binary file."""
    out: dict[str, list[Array]] = {}
    with open(path, "rb") as fh:
        for name, shape in specs:
            arrays = []
            count = int(np.prod(shape))
            for _ in range(per_param):
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise CorruptionError(
                        f"{path.name}: truncated while reading parameter {name!r}"
                    )
                arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
            out[name] = arrays
        if fh.read(1):
            raise CorruptionError(f"{path.name}: trailing bytes beyond manifest contents")
    return out


def load_checkpoint(path) -> Checkpoint:
    src = Path(path)
    manifest_path = src / "manifest.txt"
    if not manifest_path.exists():
        raise CorruptionError(f"no manifest.txt under {src}")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _MANIFEST_FORMAT:
        raise CorruptionError(f"unsupported checkpoint format: {lines[:1]}")
    fields: dict[str, str] = {}
    specs: list[tuple[str, tuple[int, ...]]] = []
    for line in lines[1:]:
        if not line:
            continue
        cols = line.split("\t")
        if cols[0] == "param":
            if len(cols) != 3:
                raise CorruptionError(f"malformed param line: {line!r}")
            specs.append((cols[1], tuple(int(d) for d in cols[2].split(","))))
        elif len(cols) == 2:
            fields[cols[0]] = cols[1]
        else:
            raise CorruptionError(f"malformed manifest line: {line!r}")
    try:
        shortlist = fields["shortlist_size"]
        config = TrainConfig(
            embed_dim=int(fields["embed_dim"]),
            hidden_dim=int(fields["hidden_dim"]),
            dropout_rate=float(fields["dropout_rate"]),
            merge_mode=fields["merge_mode"],
            lr=float(fields["lr"]),
            batch_size=int(fields["batch_size"]),
            clip_threshold=float(fields["clip_threshold"]),
            epochs=int(fields["epochs"]),
            seed=int(fields["seed"]),
            shortlist_size=None if shortlist == "none" else int(shortlist),
            beta1=float(fields["beta1"]),
            beta2=float(fields["beta2"]),
            epsilon=float(fields["epsilon"]),
        )
        vocab_size = int(fields["vocab_size"])
        adam_t = int(fields["adam_t"])
    except KeyError as missing:
        raise CorruptionError(f"manifest missing field {missing}") from None
    param_arrays = _read_arrays(src / "params.bin", specs, per_param=1)
    named = {name: Tensor(arrays[0], requires_grad=True) for name, arrays in param_arrays.items()}
    expected = _expected_param_names()
    if list(named) != expected:
        raise CorruptionError("manifest parameter list does not match the model layout")
    if named["embedding"].data.shape != (vocab_size, config.embed_dim):
        raise CorruptionError("embedding shape disagrees with manifest vocab_size/embed_dim")

    def gru(prefix: str) -> GruParams:
        return GruParams(**{k[len(prefix) + 1 :]: named[k] for k in named if k.startswith(prefix + ".")})

    params = ModelParams(
        embedding=named["embedding"],
        doc_fwd=gru("doc_fwd"),
        doc_bwd=gru("doc_bwd"),
        query_fwd=gru("query_fwd"),
        query_bwd=gru("query_bwd"),
        config=config.reader_config(),
    )
    moment_arrays = _read_arrays(src / "adam.bin", specs, per_param=2)
    state = AdamState(
        m={name: arrays[0] for name, arrays in moment_arrays.items()},
        v={name: arrays[1] for name, arrays in moment_arrays.items()},
        t=adam_t,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )
    vocab = None
    vocab_path = src / "vocab.txt"
    if vocab_path.exists():
        vocab = load_vocab(vocab_path)
        if vocab.total_size != vocab_size:
            raise ConfigurationError(
                f"checkpoint expects vocabulary of size {vocab_size}, "
                f"found {vocab.total_size} in {vocab_path.name}"
            )
    return Checkpoint(params=params, adam_state=state, config=config, vocab=vocab)


def _expected_param_names() -> list[str]:
    names = ["embedding"]
    for prefix in ("doc_fwd", "doc_bwd", "query_fwd", "query_bwd"):
        for leaf in ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"):
            names.append(f"{prefix}.{leaf}")
    return names
