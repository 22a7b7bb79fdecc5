"""Planted-structure corpora for tests and smoke runs.

Items fall into two latent clusters (visible in the visual features) and,
independently, two groups visible only in the textual features. Each user
likes two of the four (cluster, group) cells and draws positives from them,
weighted by item popularity.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import InteractionDataset
from .features import FeatureStore, write_feature_file

__all__ = ["planted_corpus", "random_dataset", "write_corpus"]


def planted_corpus(n_users: int = 200, n_items: int = 160, visual_dim: int = 16, textual_dim: int = 8,
                   min_pos: int = 8, max_pos: int = 20, noise: float = 0.05, feature_noise: float = 0.3,
                   seed: int = 0) -> tuple[InteractionDataset, FeatureStore]:
    rng = np.random.default_rng(seed)
    cluster = rng.integers(2, size=n_items)
    group = rng.integers(2, size=n_items)
    cell = 2 * cluster + group
    popularity = np.exp(rng.normal(0.0, 1.0, size=n_items))

    cluster_dirs = rng.normal(size=(2, visual_dim))
    group_dirs = rng.normal(size=(2, textual_dim))
    visual = cluster_dirs[cluster] + feature_noise * rng.normal(size=(n_items, visual_dim))
    textual = group_dirs[group] + feature_noise * rng.normal(size=(n_items, textual_dim))

    positives = []
    for _ in range(n_users):
        liked = rng.choice(4, size=2, replace=False)
        weight = popularity * np.isin(cell, liked) + noise * popularity.mean() / n_items
        count = int(rng.integers(min_pos, max_pos + 1))
        positives.append(rng.choice(n_items, size=count, replace=False, p=weight / weight.sum()))
    data = InteractionDataset.from_lists(positives, num_items=n_items,
                                         user_ids=[f"u{u}" for u in range(n_users)],
                                         item_ids=[f"i{i}" for i in range(n_items)])
    return data, FeatureStore.from_arrays(visual, textual)


def random_dataset(n_users: int, n_items: int, min_pos: int = 3, max_pos: int = 8,
                   seed: int = 0) -> InteractionDataset:
    rng = np.random.default_rng(seed)
    positives = [rng.choice(n_items, size=int(rng.integers(min_pos, max_pos + 1)), replace=False)
                 for _ in range(n_users)]
    return InteractionDataset.from_lists(positives, num_items=n_items)


def write_corpus(directory, data: InteractionDataset, store: FeatureStore) -> dict[str, Path]:
    """Write interactions and both feature files in the interchange formats."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": directory / "interactions.tsv",
        "visual": directory / "visual.txt",
        "textual": directory / "textual.txt",
    }
    with paths["interactions"].open("w", encoding="utf-8") as fh:
        for u, items in enumerate(data.positives):
            for i in items.tolist():
                fh.write(f"{data.user_ids[u]}\t{data.item_ids[i]}\n")
    write_feature_file(paths["visual"], data.item_ids, store.visual)
    write_feature_file(paths["textual"], data.item_ids, store.textual)
    return paths
