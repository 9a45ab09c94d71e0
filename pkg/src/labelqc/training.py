"""Mini-batch AdamW training with early stopping on validation loss."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from labelqc.data import FeatureVector
from labelqc.errors import DataError, NumericError
from labelqc.labelmodel import SoftLabel
from labelqc.model import ModelBundle, encode_features, forward, gradients, loss, tokenize_batch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    patience: int = 10
    batch_size: int = 128  # 0 means full batch
    seed: int = 0
    mode: str = "pretrain"  # "pretrain" | "finetune"

    @staticmethod
    def pretrain(**over) -> "TrainConfig":
        return replace(TrainConfig(mode="pretrain"), **over)

    @staticmethod
    def finetune(**over) -> "TrainConfig":
        # Reduced rate, full-batch updates on the small downstream sample.
        return replace(TrainConfig(lr=3e-5, batch_size=0, mode="finetune"), **over)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def _eval_loss(x_num, x_cat, targets, bundle) -> float:
    p, _ = forward(tokenize_batch(x_num, x_cat, bundle), bundle, dropout_active=False)
    return loss(p, targets)


def train(
    data: Sequence[tuple[FeatureVector, SoftLabel]],
    val: Sequence[tuple[FeatureVector, SoftLabel]],
    bundle: ModelBundle,
    cfg: TrainConfig,
) -> tuple[ModelBundle, TrainHistory]:
    """Train a copy of the bundle; returns the best-validation-loss snapshot.

    Pretrain mode recomputes normalization stats from the training data;
    finetune mode keeps the bundle's stats frozen so the input geometry the
    encoder learned is preserved.
    """
    if not data:
        raise DataError("training set is empty")
    if not val:
        raise DataError("validation set is empty")
    bundle = bundle.copy()
    x_num, x_cat = encode_features([fv for fv, _ in data], bundle.schema)
    t = np.array([sl.p_correct for _, sl in data])
    vx_num, vx_cat = encode_features([fv for fv, _ in val], bundle.schema)
    vt = np.array([sl.p_correct for _, sl in val])

    if cfg.mode == "pretrain":
        std = x_num.std(axis=0)
        bundle.norm_mean = x_num.mean(axis=0)
        bundle.norm_std = np.where(std > 1e-12, std, 1.0)
    elif cfg.mode != "finetune":
        raise DataError(f"unknown train mode {cfg.mode!r}")

    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    bs = cfg.batch_size if cfg.batch_size > 0 else n
    m = {k: np.zeros_like(v) for k, v in bundle.params.items()}
    v2 = {k: np.zeros_like(v) for k, v in bundle.params.items()}
    step = 0

    history = TrainHistory()
    best_val = np.inf
    best_params = {k: p.copy() for k, p in bundle.params.items()}
    since_improve = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            grads, batch_loss, _ = gradients(
                x_num[idx], x_cat[idx], t[idx], bundle, dropout_active=True, rng=rng
            )
            if not np.isfinite(batch_loss):
                raise NumericError(f"training loss diverged at epoch {epoch}")
            epoch_losses.append(batch_loss)
            step += 1
            bc1 = 1.0 - ADAM_BETA1**step
            bc2 = 1.0 - ADAM_BETA2**step
            for key, p in bundle.params.items():
                g = grads[key]
                m[key] = ADAM_BETA1 * m[key] + (1.0 - ADAM_BETA1) * g
                v2[key] = ADAM_BETA2 * v2[key] + (1.0 - ADAM_BETA2) * g * g
                update = (m[key] / bc1) / (np.sqrt(v2[key] / bc2) + ADAM_EPS)
                p -= cfg.lr * (update + cfg.weight_decay * p)
        history.train_loss.append(float(np.mean(epoch_losses)))
        vl = _eval_loss(vx_num, vx_cat, vt, bundle)
        history.val_loss.append(vl)
        if vl < best_val:
            best_val = vl
            best_params = {k: p.copy() for k, p in bundle.params.items()}
            history.best_epoch = epoch
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.patience:
                break
    history.stopped_epoch = len(history.val_loss) - 1
    bundle.params = best_params
    return bundle, history
