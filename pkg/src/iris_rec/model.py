"""Item-similarity scoring: bias baseline, FISM, NAIS and the IRIS variants.

Every predictor scores a (user, target) pair from the user's training
positives with the target removed. Empty histories score 0 (the bias
baseline falls back to ``b_u + b_j``).

Scoring is vectorized over a flat list of (instance, history item) pairs;
``seg`` maps each pair back to its instance.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .activations import activation
from .dataset import SplitBundle, user_history
from .features import FeatureStore, ItemFeatureEmbeddings, feature_network_forward

__all__ = [
    "Variant",
    "Hyperparams",
    "ModelParams",
    "AttentionWeights",
    "ForwardCache",
    "tensor_shapes",
    "smoothed_softmax",
    "segment_smoothed_softmax",
    "attention_logits",
    "forward",
    "score",
    "iris_predict",
    "fism_predict",
    "baseline_itemsim_predict",
    "interest_relevance",
]


class Variant(str, enum.Enum):
    BIAS_BASELINE = "BiasBaseline"
    FISM = "FISM"
    NAIS = "NAIS"
    IMAGE_IRIS = "ImageIRIS"
    IMAGE_ADD_TEXT_IRIS = "ImageAddTextIRIS"
    MULTIMODAL_IRIS = "MultimodalIRIS"

    @property
    def has_attention(self) -> bool:
        return self not in (Variant.BIAS_BASELINE, Variant.FISM)

    @property
    def uses_features(self) -> bool:
        return self in (Variant.IMAGE_IRIS, Variant.IMAGE_ADD_TEXT_IRIS, Variant.MULTIMODAL_IRIS)

    @property
    def uses_text(self) -> bool:
        return self in (Variant.IMAGE_ADD_TEXT_IRIS, Variant.MULTIMODAL_IRIS)

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        for v in cls:
            if v.value.lower() == str(value).lower():
                return v
        raise ValueError(f"unknown variant {value!r}; choose from {[v.value for v in cls]}")


@dataclass(frozen=True)
class Hyperparams:
    alpha_norm: float = 0.0
    beta: float = 0.8
    K: int = 4
    embedding_dim: int = 16
    attention_dim: int | None = None
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    lambda4: float = 0.0
    learning_rate: float = 0.001
    batch_size: int = 512
    top_n: tuple[int, ...] = (10, 20)
    seed: int = 0
    activation: str = "relu"
    optimizer: str = "adam"
    init_std: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.alpha_norm <= 1.0:
            raise ValueError(f"alpha_norm must lie in [0, 1], got {self.alpha_norm}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.embedding_dim < 1 or (self.attention_dim is not None and self.attention_dim < 1):
            raise ValueError("embedding_dim and attention_dim must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("regularization weights must be non-negative")
        if not self.top_n or min(self.top_n) < 1:
            raise ValueError("top_n must list positive cutoffs")
        if self.optimizer not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        activation(self.activation)
        object.__setattr__(self, "top_n", tuple(int(n) for n in self.top_n))

    @property
    def hidden_dim(self) -> int:
        return self.attention_dim or self.embedding_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["top_n"] = list(self.top_n)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        d = dict(d)
        if "top_n" in d:
            d["top_n"] = tuple(d["top_n"])
        return cls(**d)


def tensor_shapes(variant: Variant, hp: Hyperparams, num_users: int, num_items: int,
                  visual_dim: int = 0, textual_dim: int = 0) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every trainable tensor of ``variant``.

    The feature networks' hidden width equals the textual feature width, so the
    textual branch needs no stem.
    """
    variant = Variant.parse(variant)
    k, a = hp.embedding_dim, hp.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {"P": (num_items, k), "Q": (num_items, k)}
    if variant is Variant.BIAS_BASELINE:
        shapes.update(b_user=(num_users,), b_item=(num_items,))
    if variant.has_attention:
        shapes.update(W1=(k, a), W2=(k, a))
        if variant.uses_text:
            shapes.update(W3=(k, a), W4=(k, a))
        shapes.update(h=(a,), b=(a,))
    if variant.uses_features:
        d_h = textual_dim
        if d_h < 1 or visual_dim < 1:
            raise ValueError(f"{variant.value} needs visual and textual feature widths")
        shapes.update(stem_W=(visual_dim, d_h), stem_b=(d_h,), v2v_W=(d_h, k), v2v_b=(k,))
        if variant.uses_text:
            shapes.update(t2t_W=(d_h, k), t2t_b=(k,))
        if variant is Variant.MULTIMODAL_IRIS:
            shapes["share_W"] = (d_h, k)
    return shapes


@dataclass
class ModelParams:
    variant: Variant
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise FloatingPointError(f"tensor {name} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.variant, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def num_items(self) -> int:
        return self.tensors["P"].shape[0]

    @property
    def feature_tensors(self) -> dict:
        names = ("stem_W", "stem_b", "v2v_W", "v2v_b", "t2t_W", "t2t_b", "share_W")
        return {n: self.tensors[n] for n in names if n in self.tensors}


@dataclass(frozen=True)
class AttentionWeights:
    target: int
    history: list[int]
    weights: np.ndarray
    logits: np.ndarray


def smoothed_softmax(logits, beta: float) -> np.ndarray:
    """``exp(z_i) / (sum_j exp(z_j)) ** beta``, evaluated in max-shifted space."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        return z.copy()
    if not np.isfinite(z).all():
        raise FloatingPointError("logits must be finite")
    w, _ = segment_smoothed_softmax(z, np.zeros(z.size, np.int64), 1, beta)
    return w


def segment_smoothed_softmax(z, seg, num_segments: int, beta: float):
    """Smoothed softmax within each segment.

    Returns ``(weights, pi)`` where ``pi`` is the ordinary (beta = 1) softmax
    within the segment, which the backward pass needs.
    """
    zmax = np.full(num_segments, -np.inf)
    np.maximum.at(zmax, seg, z)
    zmax[~np.isfinite(zmax)] = 0.0
    e = np.exp(z - zmax[seg])
    total = np.bincount(seg, weights=e, minlength=num_segments)
    # exp(z)/S^beta = exp(z - m) * exp(m (1 - beta)) / S'^beta with S = exp(m) S'
    with np.errstate(over="ignore", divide="ignore"):
        scale = np.exp(zmax * (1.0 - beta)) / np.power(total, beta)
    has_items = total > 0
    if not np.isfinite(scale[has_items]).all():
        raise FloatingPointError("smoothed softmax overflowed after rescaling")
    scale[~has_items] = 0.0
    safe_total = np.where(has_items, total, 1.0)
    return e * scale[seg], e / safe_total[seg]


@dataclass
class ForwardCache:
    """Intermediate values of one batched forward pass, consumed by backprop."""

    users: np.ndarray
    targets: np.ndarray
    seg: np.ndarray
    hist: np.ndarray
    counts: np.ndarray
    coef: np.ndarray
    dots: np.ndarray
    scores: np.ndarray
    weights: np.ndarray | None = None
    pi: np.ndarray | None = None
    irn_inputs: dict | None = None
    irn_pre: np.ndarray | None = None
    irn_act: np.ndarray | None = None
    logits: np.ndarray | None = None
    feature_items: np.ndarray | None = None
    hist_local: np.ndarray | None = None
    target_local: np.ndarray | None = None
    feature_cache: tuple | None = None
    # scores without the per-user offset, which cancels in pairwise differences
    unbiased_scores: np.ndarray | None = None

    @property
    def pair_scores(self) -> np.ndarray:
        return self.scores if self.unbiased_scores is None else self.unbiased_scores


def _history_pairs(split: SplitBundle, users: np.ndarray, targets: np.ndarray):
    parts, counts = [], np.empty(users.size, np.int64)
    positives = split.train.positives
    for i, (u, t) in enumerate(zip(users.tolist(), targets.tolist())):
        h = positives[u]
        if t in h:
            h = h[h != t]
        parts.append(h)
        counts[i] = h.size
    hist = np.concatenate(parts) if parts else np.empty(0, np.int64)
    seg = np.repeat(np.arange(users.size), counts)
    return hist.astype(np.int64), seg, counts


def _check_ids(split: SplitBundle, users, targets):
    if users.size and (users.min() < 0 or users.max() >= split.num_users):
        raise KeyError("user index out of range")
    if targets.size and (targets.min() < 0 or targets.max() >= split.num_items):
        raise KeyError("item index out of range")


def forward(params: ModelParams, hp: Hyperparams, split: SplitBundle, users, targets,
            store: FeatureStore | None = None, embeddings: ItemFeatureEmbeddings | None = None) -> ForwardCache:
    """Score ``(users[i], targets[i])`` pairs and keep intermediates.

    For the feature-based variants either ``embeddings`` (precomputed for all
    items, weights frozen) or ``store`` (embeddings recomputed here, so
    gradients can reach the feature networks) must be supplied.
    """
    users = np.asarray(users, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    _check_ids(split, users, targets)
    variant = params.variant
    B = users.size
    P, Q = params["P"], params["Q"]
    hist, seg, counts = _history_pairs(split, users, targets)
    q_t = Q[targets]
    dots = np.einsum("ij,ij->i", P[hist], q_t[seg]) if hist.size else np.empty(0)
    nz = counts > 0
    coef = np.zeros(B)

    if variant is Variant.BIAS_BASELINE:
        coef[nz] = 1.0 / counts[nz]
        partial = coef * np.bincount(seg, weights=dots, minlength=B) + params["b_item"][targets]
        return ForwardCache(users, targets, seg, hist, counts, coef, dots, partial + params["b_user"][users],
                            unbiased_scores=partial)

    coef[nz] = np.power(counts[nz].astype(np.float64), -hp.alpha_norm)
    if variant is Variant.FISM:
        scores = coef * np.bincount(seg, weights=dots, minlength=B)
        return ForwardCache(users, targets, seg, hist, counts, coef, dots, scores,
                            weights=np.ones(hist.size))

    cache = ForwardCache(users, targets, seg, hist, counts, coef, dots, scores=None)
    if variant is Variant.NAIS:
        inputs = {"hist_v": P[hist], "tgt_v": q_t}
    else:
        if embeddings is None and store is None:
            raise ValueError(f"{variant.value} needs item features")
        if embeddings is not None:
            emb_items = np.asarray(embeddings.items)
            if emb_items.size == split.num_items and np.array_equal(emb_items, np.arange(emb_items.size)):
                hl, tl = hist, targets
            else:
                pos = np.searchsorted(emb_items, np.concatenate((hist, targets)))
                hl, tl = pos[:hist.size], pos[hist.size:]
            V, T = embeddings.V, embeddings.T
        else:
            items, inverse = np.unique(np.concatenate((hist, targets)), return_inverse=True)
            emb, fcache = feature_network_forward(store, params.feature_tensors, items, hp.activation,
                                                  return_cache=True)
            hl, tl = inverse[:hist.size], inverse[hist.size:]
            V, T = emb.V, emb.T
            cache.feature_items, cache.feature_cache = items, fcache
        cache.hist_local, cache.target_local = hl, tl
        inputs = {"hist_v": V[hl], "tgt_v": V[tl]}
        if variant.uses_text:
            inputs.update(hist_t=T[hl], tgt_t=T[tl])

    pre = inputs["hist_v"] @ params["W1"] + (inputs["tgt_v"] @ params["W2"])[seg] + params["b"]
    if "hist_t" in inputs:
        pre = pre + inputs["hist_t"] @ params["W3"] + (inputs["tgt_t"] @ params["W4"])[seg]
    fn, _ = activation(hp.activation)
    act = fn(pre)
    z = act @ params["h"]
    w, pi = segment_smoothed_softmax(z, seg, B, hp.beta)
    cache.irn_inputs, cache.irn_pre, cache.irn_act, cache.logits = inputs, pre, act, z
    cache.weights, cache.pi = w, pi
    cache.scores = coef * np.bincount(seg, weights=w * dots, minlength=B)
    return cache


def score(params: ModelParams, hp: Hyperparams, split: SplitBundle, users, targets,
          store: FeatureStore | None = None, embeddings: ItemFeatureEmbeddings | None = None) -> np.ndarray:
    return forward(params, hp, split, users, targets, store=store, embeddings=embeddings).scores


def _require(params: ModelParams, ok: bool, what: str):
    if not ok:
        raise ValueError(f"{what} is not defined for variant {params.variant.value}")


def _single(params, hp, split, user, target, store):
    return float(score(params, hp, split, [user], [target], store=store)[0])


def iris_predict(user: int, target: int, params: ModelParams, hp: Hyperparams, split: SplitBundle,
                 store: FeatureStore | None = None) -> float:
    _require(params, params.variant.has_attention, "iris_predict")
    return _single(params, hp, split, user, target, store)


def fism_predict(user: int, target: int, params: ModelParams, hp: Hyperparams, split: SplitBundle) -> float:
    _require(params, params.variant is Variant.FISM, "fism_predict")
    return _single(params, hp, split, user, target, None)


def baseline_itemsim_predict(user: int, target: int, params: ModelParams, hp: Hyperparams,
                             split: SplitBundle) -> float:
    _require(params, params.variant is Variant.BIAS_BASELINE, "baseline_itemsim_predict")
    return _single(params, hp, split, user, target, None)


def _attention_inputs(params, history, target, embeddings):
    if params.variant is Variant.NAIS:
        return {"hist_v": params["P"][history], "tgt_v": params["Q"][[target]]}
    if embeddings is None:
        raise ValueError(f"{params.variant.value} needs item feature embeddings")
    V, T = embeddings.V, embeddings.T
    inputs = {"hist_v": V[history], "tgt_v": V[[target]]}
    if params.variant.uses_text:
        inputs.update(hist_t=T[history], tgt_t=T[[target]])
    return inputs


def attention_logits(history, target: int, params: ModelParams, hp: Hyperparams,
                     embeddings: ItemFeatureEmbeddings | None = None) -> np.ndarray:
    """IRN logits ``h . f(W1 e_i + W2 e_j [+ W3 t_i + W4 t_j] + b)`` for each history item.

    ``embeddings`` must cover all items in index order (see ``all_item_embeddings``)
    for the feature-based variants; NAIS reads P (history) and Q (target).
    """
    _require(params, params.variant.has_attention, "attention_logits")
    history = np.asarray(history, dtype=np.int64)
    if history.size == 0:
        raise ValueError("attention needs a non-empty history")
    x = _attention_inputs(params, history, target, embeddings)
    pre = x["hist_v"] @ params["W1"] + x["tgt_v"] @ params["W2"] + params["b"]
    if "hist_t" in x:
        pre = pre + x["hist_t"] @ params["W3"] + x["tgt_t"] @ params["W4"]
    fn, _ = activation(hp.activation)
    return fn(pre) @ params["h"]


def interest_relevance(user: int, target: int, params: ModelParams, hp: Hyperparams, split: SplitBundle,
                       store: FeatureStore | None = None, top_m: int = 3,
                       embeddings: ItemFeatureEmbeddings | None = None) -> AttentionWeights:
    """History items ranked by attention weight for one target (ties: lower item id first)."""
    _require(params, params.variant.has_attention, "interest_relevance")
    history = user_history(split, user, exclude=target)
    if not history:
        raise ValueError(f"user {user} has no history items besides the target")
    if embeddings is None and params.variant.uses_features:
        if store is None:
            raise ValueError(f"{params.variant.value} needs item features")
        embeddings = feature_network_forward(store, params.feature_tensors, np.arange(split.num_items),
                                             hp.activation)
    z = attention_logits(history, target, params, hp, embeddings)
    w = smoothed_softmax(z, hp.beta)
    hist = np.asarray(history)
    order = np.lexsort((hist, -w))[:max(top_m, 0)]
    return AttentionWeights(target, hist[order].tolist(), w[order], z[order])
