"""Parameter initialization and the epoch loop with validation early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .dataset import SplitBundle, build_eval_candidates, sample_train_negatives, sample_train_triples
from .evaluation import evaluate_cases, model_scorer
from .features import FeatureStore
from .gradients import LOSSES, backward
from .model import Hyperparams, ModelParams, Variant, tensor_shapes
from .optim import make_optimizer

__all__ = ["EpochLog", "TrainReport", "TrainingDiverged", "xavier_bound", "initialize", "train"]

log = logging.getLogger(__name__)

_EMBEDDINGS = ("P", "Q")
_BIASES = ("b", "stem_b", "v2v_b", "t2t_b", "b_user", "b_item")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    val_hr10: float
    val_ndcg10: float


@dataclass
class TrainReport:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: str = ""

    def to_csv(self) -> str:
        rows = ["epoch,loss,val_hr10,val_ndcg10"]
        rows += [f"{e.epoch},{e.loss:.6f},{e.val_hr10:.6f},{e.val_ndcg10:.6f}" for e in self.epochs]
        return "\n".join(rows) + "\n"


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def initialize(hp: Hyperparams, num_users: int, num_items: int, variant, seed: int | None = None,
               visual_dim: int = 0, textual_dim: int = 0) -> ModelParams:
    """Gaussian embeddings, Xavier-uniform weights, zero biases."""
    variant = Variant.parse(variant)
    rng = np.random.default_rng(hp.seed if seed is None else seed)
    tensors = {}
    for name, shape in tensor_shapes(variant, hp, num_users, num_items, visual_dim, textual_dim).items():
        if name in _EMBEDDINGS:
            tensors[name] = rng.normal(0.0, hp.init_std, size=shape)
        elif name in _BIASES:
            tensors[name] = np.zeros(shape)
        else:
            fan_in, fan_out = (shape[0], 1) if len(shape) == 1 else shape
            bound = xavier_bound(fan_in, fan_out)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(variant, tensors)


def _epoch_batches(split, hp, loss, epoch):
    if loss == "bpr":
        return sample_train_triples(split, hp.K, hp.seed, epoch)
    return sample_train_negatives(split, hp.K, hp.seed, epoch)


def train(split: SplitBundle, store: FeatureStore | None, hp: Hyperparams, variant,
          loss: str = "pointwise_log", max_epochs: int = 50, patience: int = 5,
          checkpoint_path=None, threads: int = 1, params: ModelParams | None = None,
          callback=None) -> tuple[ModelParams, TrainReport]:
    """Mini-batch training; returns the parameters of the best validation epoch.

    Negatives are redrawn every epoch. Training stops once validation HR@10
    has not improved for ``patience`` consecutive epochs. The regularizer is
    applied to full tensors at every step, weighted by the batch's share of
    the epoch.
    """
    variant = Variant.parse(variant)
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if variant.uses_features and store is None:
        raise ValueError(f"{variant.value} needs a feature store")
    if params is None:
        params = initialize(hp, split.num_users, split.num_items, variant,
                            visual_dim=store.visual_dim if store is not None else 0,
                            textual_dim=store.textual_dim if store is not None else 0)
    else:
        params = params.copy()
    opt = make_optimizer(hp.optimizer, hp.learning_rate)
    val_cases = build_eval_candidates(split, "validation", hp.seed)
    report = TrainReport(stop_reason="max_epochs" if max_epochs > 0 else "no epochs requested")
    best, best_hr, stale = params.copy(), -np.inf, 0

    for epoch in range(1, max_epochs + 1):
        batch = _epoch_batches(split, hp, loss, epoch)
        total_n = len(batch)
        total = 0.0
        for start in range(0, total_n, hp.batch_size):
            mb = batch[start:start + hp.batch_size]
            value, grads = backward(mb, params, hp, split, store, loss, reg_scale=len(mb) / total_n)
            if not np.isfinite(value):
                report.stop_reason = "diverged"
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", report)
            opt.step(params.tensors, grads)
            total += value
        if not all(np.isfinite(t).all() for t in params.tensors.values()):
            report.stop_reason = "diverged"
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}", report)

        val = evaluate_cases(val_cases, model_scorer(params, hp, split, store), (10,), threads=threads)
        entry = EpochLog(epoch, total / max(total_n, 1), val.hr[10], val.ndcg[10])
        report.epochs.append(entry)
        log.info("epoch %d loss %.6f val HR@10 %.4f NDCG@10 %.4f", epoch, entry.loss, entry.val_hr10, entry.val_ndcg10)
        if callback is not None:
            callback(entry, params)

        if entry.val_hr10 > best_hr:
            best_hr, best, stale = entry.val_hr10, params.copy(), 0
            report.best_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, best, hp, loss, meta={"best_epoch": epoch})
        else:
            stale += 1
            if stale >= patience:
                report.stop_reason = "early_stopping"
                break
    return best, report
