"""Precomputed multimodal item features and the supervised feature networks.

The visual branch has a private stem (d_v -> d_h); the textual input is
already d_h wide. Both then pass through one coupled layer in which a
single shared matrix carries visual signal into the textual output and
textual signal into the visual output::

    v' = act(v @ W_v2v + t @ W_share + b_v)
    t' = act(t @ W_t2t + v @ W_share + b_t)

Weight matrices are stored ``(fan_in, fan_out)`` and applied to row vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .activations import activation
from .dataset import InteractionDataset

__all__ = [
    "FeatureFormatError",
    "FeatureStore",
    "ItemFeatureEmbeddings",
    "all_item_embeddings",
    "read_feature_file",
    "write_feature_file",
    "load_feature_store",
    "zero_fill_modality",
    "sharing_layer",
    "feature_network_forward",
    "feature_network_backward",
]

log = logging.getLogger(__name__)


class FeatureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureStore:
    visual: np.ndarray
    textual: np.ndarray
    visual_present: np.ndarray
    textual_present: np.ndarray

    def __post_init__(self):
        if self.visual.shape[0] != self.textual.shape[0]:
            raise FeatureFormatError("visual and textual matrices must have one row per item")
        if not (np.isfinite(self.visual).all() and np.isfinite(self.textual).all()):
            raise FeatureFormatError("feature values must be finite")
        for arr in (self.visual, self.textual, self.visual_present, self.textual_present):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, visual, textual, visual_present=None, textual_present=None) -> "FeatureStore":
        visual = np.array(visual, dtype=np.float64)
        textual = np.array(textual, dtype=np.float64)
        n = visual.shape[0]
        vp = np.ones(n, bool) if visual_present is None else np.array(visual_present, bool)
        tp = np.ones(n, bool) if textual_present is None else np.array(textual_present, bool)
        return cls(visual, textual, vp, tp)

    @property
    def num_items(self) -> int:
        return self.visual.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    @property
    def textual_dim(self) -> int:
        return self.textual.shape[1]


@dataclass(frozen=True)
class ItemFeatureEmbeddings:
    """Transformed features for a set of items (rows aligned with ``items``)."""

    items: np.ndarray
    V: np.ndarray
    T: np.ndarray | None


def read_feature_file(path) -> tuple[int, dict[str, np.ndarray]]:
    path = Path(path)
    dim = None
    rows: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if dim is None:
                if not line.startswith("dim="):
                    raise FeatureFormatError(f"{path}:{lineno}: expected 'dim=<D>' header")
                try:
                    dim = int(line[4:])
                except ValueError:
                    raise FeatureFormatError(f"{path}:{lineno}: bad dimension {line[4:]!r}") from None
                if dim < 1:
                    raise FeatureFormatError(f"{path}:{lineno}: dimension must be positive")
                continue
            item, sep, values = raw.rstrip("\r\n").partition("\t")
            if not sep:
                raise FeatureFormatError(f"{path}:{lineno}: expected 'item<TAB>f1,...,fD'")
            try:
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError:
                raise FeatureFormatError(f"{path}:{lineno}: item {item!r}: non-numeric value") from None
            if vec.size != dim:
                raise FeatureFormatError(f"{path}:{lineno}: item {item!r} has {vec.size} values, header says {dim}")
            if not np.isfinite(vec).all():
                raise FeatureFormatError(f"{path}:{lineno}: item {item!r} has non-finite values")
            rows[item.strip()] = vec
    if dim is None:
        raise FeatureFormatError(f"{path}: missing 'dim=<D>' header")
    return dim, rows


def write_feature_file(path, item_ids, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"dim={matrix.shape[1]}\n")
        for item, row in zip(item_ids, matrix):
            fh.write(item + "\t" + ",".join(repr(float(x)) for x in row) + "\n")


def _modality(path, data: InteractionDataset, default_dim: int):
    if path is None or not Path(path).exists():
        if path is not None:
            log.warning("feature file %s not found; modality zero-filled", path)
        return np.zeros((data.num_items, default_dim)), np.zeros(data.num_items, bool)
    dim, rows = read_feature_file(path)
    lookup = data.item_lookup()
    mat = np.zeros((data.num_items, dim))
    present = np.zeros(data.num_items, bool)
    unknown = []
    for item, vec in rows.items():
        idx = lookup.get(item)
        if idx is None:
            unknown.append(item)
            continue
        mat[idx] = vec
        present[idx] = True
    if unknown:
        log.warning("%s: %d rows for items not in the dataset were ignored (e.g. %s)",
                    path, len(unknown), ", ".join(unknown[:5]))
    return mat, present


def load_feature_store(visual_path, textual_path, data: InteractionDataset,
                       visual_dim: int = 2048, textual_dim: int = 768) -> FeatureStore:
    """Align feature files with the dataset's item index.

    Items without a row, and whole modalities whose file is absent, are
    zero-filled and flagged as not present. ``visual_dim``/``textual_dim`` only
    size a modality whose file is absent.
    """
    visual, vp = _modality(visual_path, data, visual_dim)
    textual, tp = _modality(textual_path, data, textual_dim)
    return FeatureStore(visual, textual, vp, tp)


def zero_fill_modality(store: FeatureStore, modality: str) -> FeatureStore:
    if modality == "visual":
        return replace(store, visual=np.zeros_like(store.visual),
                       visual_present=np.zeros_like(store.visual_present))
    if modality == "textual":
        return replace(store, textual=np.zeros_like(store.textual),
                       textual_present=np.zeros_like(store.textual_present))
    raise ValueError(f"unknown modality {modality!r}")


def sharing_layer(v, t, tensors: dict, act: str = "relu"):
    """The coupled output layer. ``t`` is ignored when the network has no textual branch.

    Returns ``(v_out, t_out, cache)``; ``t_out`` is None for visual-only networks.
    """
    fn, _ = activation(act)
    share = tensors.get("share_W")
    pre_v = v @ tensors["v2v_W"] + tensors["v2v_b"]
    if "t2t_W" not in tensors:
        return fn(pre_v), None, (v, t, pre_v, None)
    pre_t = t @ tensors["t2t_W"] + tensors["t2t_b"]
    if share is not None:
        pre_v = pre_v + t @ share
        pre_t = pre_t + v @ share
    return fn(pre_v), fn(pre_t), (v, t, pre_v, pre_t)


def feature_network_forward(store: FeatureStore, tensors: dict, items, act: str = "relu",
                            return_cache: bool = False):
    """Transform raw features of ``items`` into k-dim visual (and textual) embeddings."""
    items = np.asarray(items, dtype=np.int64)
    fn, _ = activation(act)
    x_v = store.visual[items]
    pre_stem = x_v @ tensors["stem_W"] + tensors["stem_b"]
    v = fn(pre_stem)
    t = store.textual[items] if "t2t_W" in tensors else None
    V, T, layer_cache = sharing_layer(v, t, tensors, act)
    if not np.isfinite(V).all() or (T is not None and not np.isfinite(T).all()):
        raise FloatingPointError("non-finite value in feature network output")
    emb = ItemFeatureEmbeddings(items, V, T)
    if return_cache:
        return emb, (x_v, pre_stem, layer_cache)
    return emb


def feature_network_backward(dV, dT, cache, tensors: dict, act: str = "relu") -> dict:
    """Gradients of the feature-network weights given upstream dV, dT (dT may be None)."""
    _, dfn = activation(act)
    x_v, pre_stem, (v, t, pre_v, pre_t) = cache
    grads = {}
    d_pre_v = dV * dfn(pre_v)
    grads["v2v_W"] = v.T @ d_pre_v
    grads["v2v_b"] = d_pre_v.sum(axis=0)
    dv = d_pre_v @ tensors["v2v_W"].T
    if pre_t is not None:
        d_pre_t = (np.zeros_like(pre_t) if dT is None else dT) * dfn(pre_t)
        grads["t2t_W"] = t.T @ d_pre_t
        grads["t2t_b"] = d_pre_t.sum(axis=0)
        if "share_W" in tensors:
            grads["share_W"] = t.T @ d_pre_v + v.T @ d_pre_t
            dv = dv + d_pre_t @ tensors["share_W"].T
    d_stem = dv * dfn(pre_stem)
    grads["stem_W"] = x_v.T @ d_stem
    grads["stem_b"] = d_stem.sum(axis=0)
    return grads


def all_item_embeddings(store: FeatureStore, tensors: dict, act: str = "relu") -> ItemFeatureEmbeddings:
    """Embeddings for every item; cache these while the weights are frozen."""
    return feature_network_forward(store, tensors, np.arange(store.num_items), act)
