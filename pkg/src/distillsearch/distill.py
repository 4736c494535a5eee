"""Knowledge distillation: capture teacher logits, train the student.

The teacher's raw pre-softmax logits on unlabeled sequences are the
distilled knowledge; the student minimizes the temperature-softened
soft cross-entropy

    loss(p, q, T) = -T^2 * sum_c softmax(p/T)_c * log softmax(q/T)_c

averaged over records. Gradients flow to the student logits q only;
the teacher stays fixed.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .archspace import ArchConfig
from .nn import EncoderModel, InvalidInputError

LDST_VERSION = 1


@dataclass
class LogitRecord:
    token_ids: list[int]
    teacher_logits: np.ndarray


@dataclass
class LogitDataset:
    records: list[LogitRecord]
    num_classes: int

    def __post_init__(self):
        if not self.records:
            raise ValueError("LogitDataset needs at least one record")
        for r in self.records:
            r.teacher_logits = np.asarray(r.teacher_logits, dtype=np.float64)
            if r.teacher_logits.shape != (self.num_classes,):
                raise ValueError("record logits do not match num_classes")

    def __len__(self):
        return len(self.records)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            header = {"version": LDST_VERSION, "num_classes": self.num_classes,
                      "count": len(self.records)}
            fh.write(json.dumps(header) + "\n")
            for r in self.records:
                fh.write(json.dumps({"ids": list(map(int, r.token_ids)),
                                     "logits": [float(x) for x in r.teacher_logits]}) + "\n")

    @classmethod
    def load(cls, path) -> "LogitDataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            records = [LogitRecord(rec["ids"], np.array(rec["logits"]))
                       for rec in map(json.loads, fh)]
        if len(records) != header["count"]:
            raise ValueError(f"{path}: expected {header['count']} records, got {len(records)}")
        return cls(records, num_classes=header["num_classes"])


@dataclass(frozen=True)
class DistillParams:
    temperature: float = 2.0
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    rng_seed: int = 0
    vocab_map: dict[int, int] | None = None
    max_grad_norm: float | None = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def capture_teacher_logits(teacher: EncoderModel, unlabeled,
                           strict: bool = True) -> LogitDataset:
    """Query the fixed teacher on every sequence; store raw logits."""
    records = []
    skipped = 0
    for ids in unlabeled:
        try:
            logits = nn.forward(teacher, ids)
        except InvalidInputError:
            if strict:
                raise
            skipped += 1
            continue
        records.append(LogitRecord(list(map(int, ids)), logits))
    if skipped:
        print(f"capture: skipped {skipped} sequences with invalid tokens")
    return LogitDataset(records, num_classes=teacher.config.num_classes)


def _log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _softmax(x, axis=-1):
    return np.exp(_log_softmax(x, axis=axis))


def soft_ce_loss(p, q, temperature: float) -> float:
    """Temperature-softened soft cross-entropy between logit vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("logit vectors must have equal shape")
    t = float(temperature)
    soft_targets = _softmax(p / t)
    log_student = _log_softmax(q / t)
    return float(-(t * t) * (soft_targets * log_student).sum(-1).mean())


def soft_ce_loss_grad(p, q, temperature: float) -> np.ndarray:
    """d loss / d q for one pair of logit vectors (or a batch)."""
    t = float(temperature)
    return t * (_softmax(np.asarray(q) / t) - _softmax(np.asarray(p) / t))


def build_vocab_map(corpus, teacher_vocab: int, student_vocab: int) -> dict[int, int]:
    """Frequency-truncating remap: top student_vocab-1 tokens keep dense
    ids 1.., everything else collapses to the unknown id 0."""
    counts = Counter()
    for ids in corpus:
        counts.update(int(i) for i in ids)
    kept = [tok for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    kept = kept[: student_vocab - 1]
    return {tok: i + 1 for i, tok in enumerate(kept)}


def apply_vocab_map(ids, vocab_map: dict[int, int] | None) -> list[int]:
    if vocab_map is None:
        return list(map(int, ids))
    return [vocab_map.get(int(i), 0) for i in ids]


def _batches_by_length(indices, lengths, batch_size):
    """Group shuffled indices into equal-length batches, preserving order."""
    by_len: dict[int, list[int]] = {}
    for idx in indices:
        by_len.setdefault(lengths[idx], []).append(idx)
    for length in sorted(by_len):
        bucket = by_len[length]
        for start in range(0, len(bucket), batch_size):
            yield bucket[start:start + batch_size]


@dataclass
class DistillTrace:
    epoch_losses: list[float] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0


def dataset_loss(model: EncoderModel, data: LogitDataset, params: DistillParams) -> float:
    """Mean soft cross-entropy of the student over the whole dataset."""
    total = 0.0
    lengths = [len(r.token_ids) for r in data.records]
    for batch in _batches_by_length(range(len(data)), lengths, params.batch_size):
        ids = np.array([apply_vocab_map(data.records[i].token_ids, params.vocab_map)
                        for i in batch])
        targets = np.stack([data.records[i].teacher_logits for i in batch])
        logits, _ = nn.forward_batch(model, ids)
        t = params.temperature
        per = -(t * t) * (_softmax(targets / t) * _log_softmax(logits / t)).sum(-1)
        total += per.sum()
    return total / len(data)


def distill_train(student_config: ArchConfig, data: LogitDataset,
                  params: DistillParams) -> tuple[EncoderModel, DistillTrace]:
    """Train a fresh student on the captured teacher logits."""
    rng = np.random.default_rng(params.rng_seed)
    student = nn.init(student_config, rng)
    state = nn.TrainState(student, rng_seed=params.rng_seed)
    n = len(data)
    lengths = [len(r.token_ids) for r in data.records]

    trace = DistillTrace()
    trace.initial_loss = dataset_loss(student, data, params)
    for _ in range(params.epochs):
        order = rng.permutation(n)
        epoch_total = 0.0
        for batch in _batches_by_length(order.tolist(), lengths, params.batch_size):
            ids = np.array([apply_vocab_map(data.records[i].token_ids, params.vocab_map)
                            for i in batch])
            targets = np.stack([data.records[i].teacher_logits for i in batch])
            logits, cache = nn.forward_batch(student, ids, want_cache=True)
            t = params.temperature
            per = -(t * t) * (_softmax(targets / t) * _log_softmax(logits / t)).sum(-1)
            batch_loss = per.mean()
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"distillation diverged: loss={batch_loss} at step {state.step}")
            epoch_total += per.sum()
            dlogits = soft_ce_loss_grad(targets, logits, t) / len(batch)
            grads = nn.backward(student, cache, dlogits)
            if params.max_grad_norm is not None:
                nn.clip_global_norm(grads, params.max_grad_norm)
            nn.sgd_adam_step(state, grads, params.learning_rate)
        trace.epoch_losses.append(epoch_total / n)
    trace.final_loss = dataset_loss(student, data, params)
    return student, trace


def agreement(student: EncoderModel, references, eval_ids,
              vocab_map: dict[int, int] | None = None) -> float:
    """Fraction of examples where the student argmax matches the reference.

    ``references`` is a sequence of integer labels or of teacher logit
    vectors (argmax is taken per vector).
    """
    eval_ids = list(eval_ids)
    references = list(references)
    if not eval_ids:
        raise ValueError("empty evaluation set")
    if len(eval_ids) != len(references):
        raise ValueError("eval set and references differ in length")
    hits = 0
    for ids, ref in zip(eval_ids, references):
        logits = nn.forward(student, apply_vocab_map(ids, vocab_map))
        label = int(np.argmax(ref)) if np.ndim(ref) > 0 else int(ref)
        hits += int(np.argmax(logits)) == label
    return hits / len(eval_ids)
