"""Training loop, evaluation, confusion matrices, and history records.

Training follows the recording-side conventions: mini-batches of 37 by
default, several validation evaluations per epoch, and a choice of BN
statistics finalization. With "population" finalization, validation
during training is evaluated with mini-batch statistics (the behavior
that produces the end-of-training loss jump when the finalized
statistics differ); with "moving_average" it is evaluated with the
current running averages, which is also what the finalized model uses.

The last history row is written after finalization and records the gap
between the two validation losses (mini-batch vs finalized statistics),
the variance-shift diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..frameio import read_frame
from ..pipeline import DatasetManifest
from ..seeding import substream
from .network import CnnModel, cross_entropy, finalize_bn, forward, forward_batch_stats, loss_and_backward
from .optim import AdamState, SgdmState, adam_step, sgdm_step

__all__ = [
    "TrainingConfig",
    "HistoryRow",
    "ConfusionMatrix",
    "FrameStore",
    "train",
    "evaluate",
    "write_history_csv",
    "read_history_csv",
]


@dataclass(frozen=True)
class TrainingConfig:
    optimizer: str = "adam"
    mini_batch: int = 37
    epochs: int = 10
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sgdm_momentum: float = 0.9
    bn_finalize: str = "population"
    validation_frequency: int = 3
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgdm"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.mini_batch < 1:
            raise ConfigError("mini_batch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.bn_finalize not in ("population", "moving_average"):
            raise ConfigError(f"unknown bn_finalize {self.bn_finalize!r}")
        if self.validation_frequency < 1:
            raise ConfigError("validation_frequency must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass(frozen=True)
class HistoryRow:
    step: int
    epoch: float
    train_loss: float
    val_loss: float
    val_acc: float
    bn_gap: float = math.nan


@dataclass
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray

    @classmethod
    def empty(cls, labels) -> "ConfusionMatrix":
        labels = tuple(labels)
        return cls(labels, np.zeros((len(labels), len(labels)), dtype=np.int64))

    def add(self, true_idx, pred_idx) -> None:
        np.add.at(self.counts, (true_idx, pred_idx), 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts) / total) if total else math.nan

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("true\\pred," + ",".join(self.labels) + "\n")
            for label, row in zip(self.labels, self.counts):
                fh.write(label + "," + ",".join(str(int(c)) for c in row) + "\n")

    @classmethod
    def read_csv(cls, path) -> "ConfusionMatrix":
        lines = Path(path).read_text().splitlines()
        labels = tuple(lines[0].split(",")[1:])
        counts = np.array([[int(v) for v in line.split(",")[1:]] for line in lines[1:]], dtype=np.int64)
        return cls(labels, counts)


class FrameStore:
    """Loads a split's frames into one contiguous float32 array."""

    def __init__(self, manifest: DatasetManifest, split: str, class_labels):
        if manifest.root is None:
            raise DataError("manifest has no dataset root")
        entries = manifest.for_split(split)
        if not entries:
            raise DataError(f"split {split!r} is empty")
        label_index = {label: i for i, label in enumerate(class_labels)}
        unknown = sorted({e.class_label for e in entries} - set(label_index))
        if unknown:
            raise ConfigError(f"manifest classes {unknown} not in the model class set")
        first = read_frame(Path(manifest.root) / entries[0].path)
        self.images = np.empty((len(entries), *first.shape, 1), dtype=np.float32)
        self.labels = np.empty(len(entries), dtype=np.int64)
        for i, e in enumerate(entries):
            self.images[i, :, :, 0] = read_frame(Path(manifest.root) / e.path)
            self.labels[i] = label_index[e.class_label]
        self.entries = entries

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, batch_size: int, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield self.images[idx], self.labels[idx]


def _validation_metrics(model: CnnModel, store: FrameStore, batch_size: int, use_batch_stats: bool):
    total_loss = 0.0
    correct = 0
    for images, labels in store.batches(batch_size):
        if use_batch_stats:
            probs = forward_batch_stats(model, images)
        else:
            probs = forward(model, images, mode="eval")
        logits = np.log(np.maximum(probs.astype(np.float64), 1e-300))
        total_loss += cross_entropy(logits, labels) * len(labels)
        correct += int((probs.argmax(axis=1) == labels).sum())
    return total_loss / len(store), correct / len(store)


def train(
    model: CnnModel,
    manifest: DatasetManifest,
    config: TrainingConfig,
    optimizer_state=None,
    initial_step: int = 0,
    initial_epoch: int = 0,
) -> tuple[CnnModel, list[HistoryRow]]:
    """Train on the manifest's train split, validating along the way.

    Returns the model (trained in place) and the history of validation
    evaluations. Shuffling, initialization, and therefore the whole run
    are deterministic under config.seed. ``optimizer_state`` and the
    initial counters support checkpoint-resumed training, including
    resuming with a different optimizer.
    """
    history: list[HistoryRow] = []
    if config.epochs == 0:
        return model, history

    train_store = FrameStore(manifest, "train", model.class_labels)
    val_store = FrameStore(manifest, "val", model.class_labels)

    if optimizer_state is None:
        optimizer_state = AdamState() if config.optimizer == "adam" else SgdmState()
    expected = AdamState if config.optimizer == "adam" else SgdmState
    if not isinstance(optimizer_state, expected):
        raise ConfigError("optimizer state does not match the configured optimizer")

    params = model.parameters()
    n_batches = math.ceil(len(train_store) / config.mini_batch)
    eval_points = sorted({max(1, round(n_batches * j / config.validation_frequency)) for j in range(1, config.validation_frequency + 1)})

    step = initial_step
    best_val = math.inf
    stale = 0
    stop = False
    use_batch_stats = config.bn_finalize == "population"
    last_mb_val_loss = math.nan

    for epoch in range(initial_epoch, initial_epoch + config.epochs):
        order = substream(config.seed, "shuffle", epoch).permutation(len(train_store))
        since_eval: list[float] = []
        for b, (images, labels) in enumerate(train_store.batches(config.mini_batch, order), start=1):
            loss, grads = loss_and_backward(model, images, labels)
            if config.optimizer == "adam":
                adam_step(
                    params, grads, optimizer_state,
                    learning_rate=config.learning_rate,
                    beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps,
                )
            else:
                sgdm_step(
                    params, grads, optimizer_state,
                    learning_rate=config.learning_rate, momentum=config.sgdm_momentum,
                )
            step += 1
            since_eval.append(loss)
            if b in eval_points:
                val_loss, val_acc = _validation_metrics(model, val_store, config.mini_batch, use_batch_stats)
                last_mb_val_loss = val_loss
                history.append(
                    HistoryRow(
                        step=step,
                        epoch=epoch + b / n_batches,
                        train_loss=float(np.mean(since_eval)),
                        val_loss=val_loss,
                        val_acc=val_acc,
                    )
                )
                since_eval = []
                if config.patience is not None:
                    if val_loss < best_val - 1e-12:
                        best_val = val_loss
                        stale = 0
                    else:
                        stale += 1
                        if stale > config.patience:
                            stop = True
                            break
        if stop:
            break

    finalize_bn(model, (img for img, _ in train_store.batches(config.mini_batch)), config.bn_finalize)
    final_val_loss, final_val_acc = _validation_metrics(model, val_store, config.mini_batch, use_batch_stats=False)
    mb_val_loss, _ = _validation_metrics(model, val_store, config.mini_batch, use_batch_stats=True)
    history.append(
        HistoryRow(
            step=step,
            epoch=float(history[-1].epoch if history else initial_epoch),
            train_loss=float(history[-1].train_loss if history else math.nan),
            val_loss=final_val_loss,
            val_acc=final_val_acc,
            bn_gap=abs(final_val_loss - mb_val_loss),
        )
    )
    return model, history


def evaluate(model: CnnModel, manifest: DatasetManifest, split: str, batch_size: int = 128) -> ConfusionMatrix:
    """Eval-mode forward over a split, argmax predictions, confusion counts."""
    store = FrameStore(manifest, split, model.class_labels)
    matrix = ConfusionMatrix.empty(model.class_labels)
    for images, labels in store.batches(batch_size):
        probs = forward(model, images, mode="eval")
        matrix.add(labels, probs.argmax(axis=1))
    return matrix


def write_history_csv(path, history: list[HistoryRow]) -> None:
    with open(path, "w") as fh:
        fh.write("step,epoch,train_loss,val_loss,val_acc,bn_gap\n")
        for row in history:
            gap = "" if math.isnan(row.bn_gap) else f"{row.bn_gap:.9g}"
            fh.write(
                f"{row.step},{row.epoch:.6g},{row.train_loss:.9g},{row.val_loss:.9g},{row.val_acc:.9g},{gap}\n"
            )


def read_history_csv(path) -> list[HistoryRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "step,epoch,train_loss,val_loss,val_acc,bn_gap":
        raise DataError(f"{path}: not a history file")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        step, epoch, tl, vl, va, gap = line.split(",")
        rows.append(
            HistoryRow(int(step), float(epoch), float(tl), float(vl), float(va), float(gap) if gap else math.nan)
        )
    return rows
