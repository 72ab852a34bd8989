"""Parameter initialization, dataset splitting and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .errors import DataError
from .model import ModelConfig, ModelParams, bce_loss, forward_batch, param_shapes, prepare_all
from .stgraph import UnitSequence

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    T: int = 9
    p_cut: float = 0.5
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    class_weight: str = "balanced"  # "balanced" scales positives by #neg/#pos
    threshold: float = 0.5
    model: ModelConfig = field(default_factory=ModelConfig)


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Uniform fan-in-scaled weights, zero biases, forget-gate bias one."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, ad.Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) > 1:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = ad.Tensor(rng.uniform(-bound, bound, size=shape))
        else:
            tensors[name] = ad.Tensor(np.zeros(shape))
    tensors["b_lstm_f"].data[:] = 1.0  # start by remembering
    return ModelParams(config=cfg, tensors=tensors)


def split(
    sequences: Sequence[UnitSequence],
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> tuple[list[UnitSequence], list[UnitSequence], list[UnitSequence]]:
    """Shuffle units into train/val/test, nudging positives everywhere.

    After the random cut, any non-empty part without a positively
    labeled unit borrows one from a part that has two or more, swapping
    a negative back, so stratification holds whenever possible.
    """
    seqs = list(sequences)
    if not seqs:
        raise DataError("no sequences to split")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negatives summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(seqs))
    c1 = int(round(ratios[0] * len(seqs)))
    c2 = int(round((ratios[0] + ratios[1]) * len(seqs)))
    parts = [
        [seqs[i] for i in order[:c1]],
        [seqs[i] for i in order[c1:c2]],
        [seqs[i] for i in order[c2:]],
    ]
    for part, ratio in zip(parts, ratios):
        if ratio > 0 and not part:
            raise DataError(f"too few units ({len(seqs)}) for split ratios {ratios}")

    def positives(part):
        return [k for k, s in enumerate(part) if s.label.sum() > 0]

    for i, part in enumerate(parts):
        if not part or positives(part):
            continue
        for j, donor in enumerate(parts):
            pos = positives(donor)
            if i != j and len(pos) >= 2:
                negatives = [k for k in range(len(part)) if k not in positives(part)]
                swap_in = donor.pop(pos[0])
                donor.append(part[negatives[0]])
                part[negatives[0]] = swap_in
                break
    return parts[0], parts[1], parts[2]


def positive_class_weight(sequences: Sequence[UnitSequence], mode: str = "balanced") -> float:
    if mode == "none":
        return 1.0
    if mode != "balanced":
        raise DataError(f"unknown class-weight mode {mode!r}")
    labels = np.concatenate([s.label for s in sequences])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0:
        raise DataError("training labels hold no positive areas")
    return n_neg / n_pos


class Adam:
    """Adaptive-moment gradient descent over a fixed tensor list."""

    def __init__(self, tensors: Sequence[ad.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = list(tensors)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, tensor in enumerate(self.tensors):
            g = tensor.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            tensor.data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def evaluate_auc(preps, labels, params) -> float:
    """Validation AUC over flattened areas; NaN when undefined."""
    if not preps:
        return float("nan")
    probs = forward_batch(preps, params).data.ravel()
    try:
        return metrics.auc(probs, labels.ravel())
    except metrics.UndefinedMetricError:
        return float("nan")


def train(
    train_seqs: Sequence[UnitSequence],
    val_seqs: Sequence[UnitSequence],
    cfg: TrainConfig,
) -> tuple[ModelParams, list[dict]]:
    """Mini-batch training with early stopping on validation AUC.

    Returns the best-validation checkpoint (or the state after the last
    completed epoch if validation never produced a usable AUC) plus the
    per-epoch history.  A non-finite loss aborts the loop and the best
    checkpoint so far, falling back to the last completed epoch, is
    returned.  Without a validation set every epoch runs; patience only
    counts against epochs that fail to improve a requested validation.
    """
    if not train_seqs:
        raise DataError("empty training split")
    pos_weight = positive_class_weight(train_seqs, cfg.class_weight)
    params = init_params(cfg.model, cfg.seed)
    preps = prepare_all(train_seqs, cfg.model)
    labels = [p.label.astype(np.float64) for p in preps]
    val_preps = prepare_all(val_seqs, cfg.model)
    val_labels = (
        np.stack([p.label for p in val_preps]).astype(np.float64)
        if val_preps
        else np.zeros((0, 32))
    )
    opt = Adam(params.ordered(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)

    history: list[dict] = []
    best_auc = -np.inf
    best_blobs: dict[str, np.ndarray] | None = None
    last_good = params.copy_data()
    wait = 0
    diverged = False

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(preps))
        total, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [int(i) for i in order[lo : lo + cfg.batch_size]]
            batch = [preps[i] for i in chunk]
            batch_labels = np.stack([labels[i] for i in chunk])
            ad.zero_grads(params.ordered())
            loss = bce_loss(forward_batch(batch, params), batch_labels, pos_weight)
            value = float(loss.data)
            if not np.isfinite(value):
                log.warning("non-finite loss at epoch %d, aborting", epoch)
                diverged = True
                break
            ad.backward(loss)
            opt.step()
            total += value * len(chunk)
            seen += len(chunk)
        if diverged:
            break
        last_good = params.copy_data()
        train_loss = total / seen
        val_auc = evaluate_auc(val_preps, val_labels, params)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_auc": val_auc})
        if np.isfinite(val_auc) and val_auc > best_auc:
            best_auc = val_auc
            best_blobs = params.copy_data()
            wait = 0
        elif val_preps:
            wait += 1
            if wait >= cfg.patience:
                break

    if best_blobs is not None:
        params.load_data(best_blobs)
    elif diverged:
        params.load_data(last_good)
    return params, history


def history_csv(history: Sequence[dict]) -> str:
    lines = ["epoch,train_loss,val_auc"]
    for row in history:
        lines.append(f"{row['epoch']},{row['train_loss']!r},{row['val_auc']!r}")
    return "\n".join(lines) + "\n"
