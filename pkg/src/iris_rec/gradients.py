"""Losses, regularization and analytic gradients of the training objective.

The objective for one mini-batch is::

    data_loss(batch) + reg_scale * regularization_term(params)

Conventions: the log and BPR losses are negative log-likelihoods without a
leading 1/2; the squared-error loss keeps its 1/2. ``reg_scale`` lets the
trainer spread the regularizer over the mini-batches of an epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activations import activation, sigmoid
from .dataset import Instances, SplitBundle, Triples
from .features import FeatureStore, feature_network_backward
from .model import ForwardCache, Hyperparams, ModelParams, Variant, forward

__all__ = [
    "LOSSES",
    "PROB_EPS",
    "REG_GROUPS",
    "GradientCheckError",
    "GradCheckReport",
    "loss_pointwise_log",
    "loss_mse",
    "loss_bpr",
    "regularization_term",
    "regularization_grads",
    "objective",
    "objective_terms",
    "backward",
    "finite_difference_check",
]

LOSSES = ("pointwise_log", "mse", "bpr")
PROB_EPS = 1e-12

# regularization weight attribute -> tensors it covers
REG_GROUPS = {
    "lambda1": ("P", "Q"),
    "lambda2": ("W1", "W2", "W3", "W4"),
    "lambda3": ("stem_W", "v2v_W", "t2t_W"),
    "lambda4": ("share_W",),
}


class GradientCheckError(AssertionError):
    pass


def _check_loss(loss: str):
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; choose from {LOSSES}")


def _pairs(batch, loss: str):
    if loss == "bpr":
        if not isinstance(batch, Triples):
            raise TypeError("the BPR loss needs (user, positive, negative) triples")
        users = np.concatenate((batch.users, batch.users))
        return users, np.concatenate((batch.positives, batch.negatives))
    if not isinstance(batch, Instances):
        raise TypeError(f"the {loss} loss needs labelled instances")
    return batch.users, batch.items


def _loss_scores(cache: ForwardCache, loss: str) -> np.ndarray:
    return cache.pair_scores if loss == "bpr" else cache.scores


def _data_terms(scores: np.ndarray, batch, loss: str):
    """Per-instance data losses and their derivatives with respect to each pair score."""
    if loss == "pointwise_log":
        y = batch.labels.astype(np.float64)
        p = sigmoid(scores)
        pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
        terms = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
        inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        return terms, np.where(inside, p - y, 0.0)
    if loss == "mse":
        err = scores - batch.labels
        return 0.5 * err * err, err
    n = len(batch)
    d = scores[:n] - scores[n:]
    dd = -sigmoid(-d)
    return np.logaddexp(0.0, -d), np.concatenate((dd, -dd))


def _empty(batch):
    if len(batch) == 0:
        raise ValueError("batch is empty")


def loss_pointwise_log(batch: Instances, params: ModelParams, hp: Hyperparams, split: SplitBundle,
                       store: FeatureStore | None = None, reg_scale: float = 1.0):
    """Returns ``(loss, sigmoid(scores))``."""
    _empty(batch)
    scores = forward(params, hp, split, batch.users, batch.items, store=store).scores
    terms, _ = _data_terms(scores, batch, "pointwise_log")
    return math.fsum(terms) + reg_scale * regularization_term(params, hp), sigmoid(scores)


def loss_mse(batch: Instances, params, hp, split, store=None, reg_scale: float = 1.0) -> float:
    return objective(batch, params, hp, split, store, "mse", reg_scale)


def loss_bpr(triples: Triples, params, hp, split, store=None, reg_scale: float = 1.0) -> float:
    return objective(triples, params, hp, split, store, "bpr", reg_scale)


def regularization_term(params: ModelParams, hp: Hyperparams) -> float:
    total = 0.0
    for lam_name, names in REG_GROUPS.items():
        lam = getattr(hp, lam_name)
        if lam == 0.0:
            continue
        total += lam * sum(float(np.sum(params.tensors[n] ** 2)) for n in names if n in params.tensors)
    return total


def regularization_grads(params: ModelParams, hp: Hyperparams, scale: float = 1.0) -> dict:
    out = {}
    for lam_name, names in REG_GROUPS.items():
        lam = getattr(hp, lam_name)
        for n in names:
            if n in params.tensors:
                out[n] = (2.0 * lam * scale) * params.tensors[n]
    return out


def objective_terms(batch, params: ModelParams, hp: Hyperparams, split: SplitBundle,
                    store: FeatureStore | None = None, loss: str = "pointwise_log",
                    reg_scale: float = 1.0) -> np.ndarray:
    """Per-instance data losses followed by the scaled regularizer; they sum to the objective."""
    _check_loss(loss)
    _empty(batch)
    users, items = _pairs(batch, loss)
    cache = forward(params, hp, split, users, items, store=store)
    terms, _ = _data_terms(_loss_scores(cache, loss), batch, loss)
    return np.append(terms, reg_scale * regularization_term(params, hp))


def objective(batch, params: ModelParams, hp: Hyperparams, split: SplitBundle,
              store: FeatureStore | None = None, loss: str = "pointwise_log", reg_scale: float = 1.0) -> float:
    return math.fsum(objective_terms(batch, params, hp, split, store, loss, reg_scale))


def _score_grads(cache: ForwardCache, dr: np.ndarray, params: ModelParams, hp: Hyperparams,
                 pairwise: bool = False) -> dict:
    """Backpropagate d(objective)/d(score) into every tensor.

    With ``pairwise`` the user bias never enters the loss, so it gets no gradient.
    """
    variant = params.variant
    P, Q = params["P"], params["Q"]
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    seg, hist, targets = cache.seg, cache.hist, cache.targets
    g = dr * cache.coef
    p_h = P[hist]
    q_t = Q[targets]

    if variant is Variant.BIAS_BASELINE:
        if not pairwise:
            np.add.at(grads["b_user"], cache.users, dr)
        np.add.at(grads["b_item"], targets, dr)

    w = cache.weights if cache.weights is not None else np.ones(hist.size)
    ds = g[seg] * w
    np.add.at(grads["P"], hist, ds[:, None] * q_t[seg])
    np.add.at(grads["Q"], targets[seg], ds[:, None] * p_h)
    if not variant.has_attention:
        return grads

    # w_k = exp(z_k) S^-beta  =>  dw_i/dz_k = w_i (delta_ik - beta pi_k)
    dw = g[seg] * cache.dots
    wdw = w * dw
    dz = wdw - hp.beta * cache.pi * np.bincount(seg, weights=wdw, minlength=targets.size)[seg]

    _, dfn = activation(hp.activation)
    h = params["h"]
    grads["h"] = cache.irn_act.T @ dz
    dpre = (dz[:, None] * h[None, :]) * dfn(cache.irn_pre)
    grads["b"] = dpre.sum(axis=0)
    dpre_tgt = np.zeros((targets.size, dpre.shape[1]))
    np.add.at(dpre_tgt, seg, dpre)

    x = cache.irn_inputs
    grads["W1"] = x["hist_v"].T @ dpre
    grads["W2"] = x["tgt_v"].T @ dpre_tgt
    d_hist_v = dpre @ params["W1"].T
    d_tgt_v = dpre_tgt @ params["W2"].T
    if "hist_t" in x:
        grads["W3"] = x["hist_t"].T @ dpre
        grads["W4"] = x["tgt_t"].T @ dpre_tgt
        d_hist_t = dpre @ params["W3"].T
        d_tgt_t = dpre_tgt @ params["W4"].T

    if variant is Variant.NAIS:
        np.add.at(grads["P"], hist, d_hist_v)
        np.add.at(grads["Q"], targets, d_tgt_v)
        return grads

    if cache.feature_cache is None:
        raise ValueError("forward pass ran on frozen embeddings; pass the feature store to train")
    n_local = cache.feature_items.size
    dV = np.zeros((n_local, d_hist_v.shape[1]))
    np.add.at(dV, cache.hist_local, d_hist_v)
    np.add.at(dV, cache.target_local, d_tgt_v)
    dT = None
    if "hist_t" in x:
        dT = np.zeros_like(dV)
        np.add.at(dT, cache.hist_local, d_hist_t)
        np.add.at(dT, cache.target_local, d_tgt_t)
    grads.update(feature_network_backward(dV, dT, cache.feature_cache, params.feature_tensors, hp.activation))
    return grads


def backward(batch, params: ModelParams, hp: Hyperparams, split: SplitBundle,
             store: FeatureStore | None = None, loss: str = "pointwise_log", reg_scale: float = 1.0):
    """Objective value and exact gradients for every tensor in ``params``.

    Returns ``(value, grads)``; rows not touched by the batch get only the
    regularization gradient.
    """
    _check_loss(loss)
    _empty(batch)
    users, items = _pairs(batch, loss)
    cache = forward(params, hp, split, users, items, store=store)
    terms, dr = _data_terms(_loss_scores(cache, loss), batch, loss)
    grads = _score_grads(cache, dr, params, hp, pairwise=loss == "bpr")
    for name, g in regularization_grads(params, hp, reg_scale).items():
        grads[name] += g
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for tensor {name}")
    return math.fsum(terms) + reg_scale * regularization_term(params, hp), grads


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    worst: dict[str, tuple] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [n for n, e in self.max_rel_error.items() if not e <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    def raise_if_failed(self):
        if self.failed:
            lines = [f"{n}: rel err {self.max_rel_error[n]:.3e} at {self.worst[n][0]} "
                     f"(analytic {self.worst[n][1]:.6e}, numeric {self.worst[n][2]:.6e})" for n in self.failed]
            raise GradientCheckError("gradient check failed:\n  " + "\n  ".join(lines))

    def format(self) -> str:
        rows = []
        for n, e in self.max_rel_error.items():
            rows.append(f"{n:10s} {e:.3e} {'ok' if e <= self.tolerance else 'FAIL'}")
        return "\n".join(rows)


def finite_difference_check(params: ModelParams, hp: Hyperparams, split: SplitBundle, batch,
                            store: FeatureStore | None = None, loss: str = "pointwise_log",
                            tolerance: float = 1e-4, eps: float = 1e-5, samples: int = 12,
                            seed: int = 0, reg_scale: float = 1.0, grad_fn=None) -> GradCheckReport:
    """Compare analytic gradients against central differences on sampled coordinates.

    Coordinates are drawn partly from where the analytic gradient is nonzero so
    sparse tensors (P, Q rows) are exercised. ``grad_fn`` overrides
    :func:`backward` (same signature), for fault injection.
    """
    grad_fn = grad_fn or backward
    _, grads = grad_fn(batch, params, hp, split, store, loss, reg_scale)
    rng = np.random.default_rng(seed)
    probe = params.copy()
    report = GradCheckReport(tolerance)
    for name in sorted(params.tensors):
        g = grads[name].reshape(-1)
        flat = probe.tensors[name].reshape(-1)
        nonzero = np.flatnonzero(g)
        picks = rng.choice(g.size, size=min(samples // 2 or 1, g.size), replace=False)
        if nonzero.size:
            picks = np.union1d(picks, rng.choice(nonzero, size=min(samples, nonzero.size), replace=False))
        worst = (-1.0, None, 0.0, 0.0)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = objective_terms(batch, probe, hp, split, store, loss, reg_scale)
            flat[idx] = orig - eps
            down = objective_terms(batch, probe, hp, split, store, loss, reg_scale)
            flat[idx] = orig
            # termwise differences keep the rounding noise of the large total out
            numeric = math.fsum(up - down) / (2.0 * eps)
            analytic = g[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if rel > worst[0]:
                worst = (rel, np.unravel_index(idx, params.tensors[name].shape), analytic, numeric)
        report.max_rel_error[name] = worst[0]
        report.worst[name] = tuple(int(i) for i in worst[1]), worst[2], worst[3]
    return report
