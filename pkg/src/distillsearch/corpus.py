"""Synthetic sequence-classification data and teacher training.

Stands in for a full-scale labeled corpus at desk scale: a controllable
binary rule gives ground-truth labels with an exact re-check oracle.
The default rule labels a sequence positive iff a designated trigger
bigram occurs (two fixed tokens, adjacent, in order). Generated data is
split into disjoint labeled / unlabeled / validation / test parts; the
unlabeled part ships without labels and exists only to query a teacher.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .archspace import ArchConfig
from .nn import EncoderModel

RULE_TRIGGER_BIGRAM = "trigger_bigram"


@dataclass(frozen=True)
class SyntheticTaskSpec:
    vocab_size: int = 2000
    min_seq_len: int = 12
    max_seq_len: int = 24
    rule: str = RULE_TRIGGER_BIGRAM
    rule_params: tuple[int, int] = (7, 11)
    n_labeled: int = 4000
    n_unlabeled: int = 4000
    n_val: int = 1000
    n_test: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.rule != RULE_TRIGGER_BIGRAM:
            raise ValueError(f"unknown rule family {self.rule!r}")
        t1, t2 = self.rule_params
        if not (0 < t1 < self.vocab_size and 0 < t2 < self.vocab_size):
            raise ValueError("trigger tokens must lie inside the vocabulary")
        if self.min_seq_len < 2 or self.max_seq_len < self.min_seq_len:
            raise ValueError("need 2 <= min_seq_len <= max_seq_len")


@dataclass
class Example:
    ids: list[int]
    label: int


@dataclass
class Corpus:
    spec: SyntheticTaskSpec
    labeled: list[Example]
    unlabeled: list[list[int]]  # labels erased by construction
    val: list[Example]
    test: list[Example]


def rule_label(spec: SyntheticTaskSpec, ids) -> int:
    """Ground-truth oracle: re-evaluate the class rule on a sequence."""
    t1, t2 = spec.rule_params
    ids = list(ids)
    return int(any(a == t1 and b == t2 for a, b in zip(ids, ids[1:])))


def _random_negative(spec: SyntheticTaskSpec, rng, seen, max_tries=200) -> list[int]:
    for _ in range(max_tries):
        length = int(rng.integers(spec.min_seq_len, spec.max_seq_len + 1))
        ids = rng.integers(1, spec.vocab_size, size=length).tolist()
        if rule_label(spec, ids) == 0 and tuple(ids) not in seen:
            return ids
    raise RuntimeError("could not generate a fresh negative example")


def _random_positive(spec: SyntheticTaskSpec, rng, seen, max_tries=200) -> list[int]:
    t1, t2 = spec.rule_params
    for _ in range(max_tries):
        length = int(rng.integers(spec.min_seq_len, spec.max_seq_len + 1))
        ids = rng.integers(1, spec.vocab_size, size=length).tolist()
        pos = int(rng.integers(0, length - 1))
        ids[pos], ids[pos + 1] = t1, t2
        if tuple(ids) not in seen:
            return ids
    raise RuntimeError("could not generate a fresh positive example")


def generate(spec: SyntheticTaskSpec) -> Corpus:
    """Deterministic-by-seed corpus with disjoint, balanced splits."""
    rng = np.random.default_rng(spec.rng_seed)
    seen: set[tuple[int, ...]] = set()

    def make_split(n: int) -> list[Example]:
        examples = []
        for i in range(n):
            label = i % 2  # exact balance, shuffled below
            ids = (_random_positive if label else _random_negative)(spec, rng, seen)
            seen.add(tuple(ids))
            examples.append(Example(ids, label))
        rng.shuffle(examples)
        return examples

    labeled = make_split(spec.n_labeled)
    unlabeled = [ex.ids for ex in make_split(spec.n_unlabeled)]
    val = make_split(spec.n_val)
    test = make_split(spec.n_test)
    for split in (labeled, val, test):
        frac = sum(ex.label for ex in split) / max(len(split), 1)
        if split and not 0.45 <= frac <= 0.55:
            raise RuntimeError(f"split balance {frac:.3f} outside [0.45, 0.55]")
    return Corpus(spec, labeled, unlabeled, val, test)


# ---------------------------------------------------------------------------
# teacher training


@dataclass(frozen=True)
class TeacherTrainParams:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 64
    rng_seed: int = 0
    max_grad_norm: float | None = 1.0  # Adam alone is unstable here at 1e-3


def _softmax(x):
    z = x - x.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def _batches_by_length(indices, lengths, batch_size):
    by_len: dict[int, list[int]] = {}
    for idx in indices:
        by_len.setdefault(lengths[idx], []).append(idx)
    for length in sorted(by_len):
        bucket = by_len[length]
        for start in range(0, len(bucket), batch_size):
            yield bucket[start:start + batch_size]


def accuracy(model: EncoderModel, examples: list[Example]) -> float:
    if not examples:
        raise ValueError("empty evaluation set")
    hits = 0
    lengths = [len(ex.ids) for ex in examples]
    for batch in _batches_by_length(range(len(examples)), lengths, 64):
        ids = np.array([examples[i].ids for i in batch])
        logits, _ = nn.forward_batch(model, ids)
        preds = logits.argmax(-1)
        hits += sum(int(preds[j]) == examples[i].label for j, i in enumerate(batch))
    return hits / len(examples)


@dataclass
class TeacherResult:
    model: EncoderModel
    val_accuracy: float
    train_accuracy: float
    epoch_losses: list[float] = field(default_factory=list)


def train_teacher(config: ArchConfig, labeled: list[Example],
                  params: TeacherTrainParams = TeacherTrainParams(),
                  val: list[Example] | None = None) -> TeacherResult:
    """Supervised cross-entropy training of the teacher classifier."""
    if not labeled:
        raise ValueError("labeled split is empty")
    rng = np.random.default_rng(params.rng_seed)
    model = nn.init(config, rng)
    state = nn.TrainState(model, rng_seed=params.rng_seed)
    lengths = [len(ex.ids) for ex in labeled]
    n = len(labeled)

    epoch_losses = []
    for _ in range(params.epochs):
        order = rng.permutation(n).tolist()
        total = 0.0
        for batch in _batches_by_length(order, lengths, params.batch_size):
            ids = np.array([labeled[i].ids for i in batch])
            labels = np.array([labeled[i].label for i in batch])
            logits, cache = nn.forward_batch(model, ids, want_cache=True)
            probs = _softmax(logits)
            picked = np.clip(probs[np.arange(len(batch)), labels], 1e-300, None)
            batch_loss = -np.log(picked).mean()
            if not np.isfinite(batch_loss):
                raise FloatingPointError(f"teacher training diverged at step {state.step}")
            total += -np.log(picked).sum()
            dlogits = probs
            dlogits[np.arange(len(batch)), labels] -= 1.0
            dlogits /= len(batch)
            grads = nn.backward(model, cache, dlogits)
            if params.max_grad_norm is not None:
                nn.clip_global_norm(grads, params.max_grad_norm)
            nn.sgd_adam_step(state, grads, params.learning_rate)
        epoch_losses.append(total / n)

    val_acc = accuracy(model, val) if val else float("nan")
    train_acc = accuracy(model, labeled)
    return TeacherResult(model, val_accuracy=val_acc, train_accuracy=train_acc,
                         epoch_losses=epoch_losses)


# ---------------------------------------------------------------------------
# file formats: JSONL records, spec as a flat JSON document


def save_corpus(corpus: Corpus, out_dir) -> None:
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "task_spec.json").write_text(json.dumps(asdict(corpus.spec), indent=2))
    for name, split in (("labeled", corpus.labeled), ("val", corpus.val),
                        ("test", corpus.test)):
        with open(out / f"{name}.jsonl", "w") as fh:
            for ex in split:
                fh.write(json.dumps({"ids": ex.ids, "label": ex.label}) + "\n")
    with open(out / "unlabeled.jsonl", "w") as fh:
        for ids in corpus.unlabeled:
            fh.write(json.dumps({"ids": ids}) + "\n")


def load_corpus(out_dir) -> Corpus:
    from pathlib import Path
    out = Path(out_dir)
    doc = json.loads((out / "task_spec.json").read_text())
    doc["rule_params"] = tuple(doc["rule_params"])
    spec = SyntheticTaskSpec(**doc)

    def read_labeled(name):
        with open(out / f"{name}.jsonl") as fh:
            return [Example(rec["ids"], rec["label"]) for rec in map(json.loads, fh)]

    with open(out / "unlabeled.jsonl") as fh:
        unlabeled = [json.loads(line)["ids"] for line in fh]
    return Corpus(spec, read_labeled("labeled"), unlabeled,
                  read_labeled("val"), read_labeled("test"))
