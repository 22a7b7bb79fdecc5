import numpy as np

from iris_rec import Hyperparams


def probe_hp(**kw):
    """Smooth-activation settings with non-trivial regularization for gradient checks."""
    base = dict(embedding_dim=4, attention_dim=3, beta=0.8, alpha_norm=0.5, activation="softplus",
                lambda1=0.01, lambda2=0.01, lambda3=0.01, lambda4=0.01, init_std=0.5)
    base.update(kw)
    return Hyperparams(**base)


def probe_params(params, seed=1):
    """Give zero-initialized biases random values so their gradients are exercised."""
    rng = np.random.default_rng(seed)
    for name, t in params.tensors.items():
        if name in ("b", "stem_b", "v2v_b", "t2t_b", "b_user", "b_item"):
            t[...] = rng.normal(0.0, 0.3, size=t.shape)
    return params


def manual_split(train_lists, num_items):
    """A split with hand-chosen train histories; holdout items are unused placeholders."""
    from iris_rec import InteractionDataset, SplitBundle

    train = InteractionDataset.from_lists(train_lists, num_items=num_items)
    zeros = np.zeros(train.num_users, np.int64)
    return SplitBundle(train, zeros, zeros, train)


def hand_params(variant, **tensors):
    from iris_rec import ModelParams

    return ModelParams(variant, {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()})


def brute_position(candidates, scores, positive):
    """1-based rank of ``positive`` by pairwise counting: higher scores first, ties by lower id."""
    s = dict(zip(candidates, scores))
    p = s[positive]
    return 1 + sum(1 for c in candidates if c != positive and (s[c] > p or (s[c] == p and c < positive)))


def brute_metrics(positions, N):
    """HR@N and NDCG@N from 1-based positions, by explicit loops."""
    import math

    hits = [1 for p in positions if p <= N]
    gains = [1.0 / math.log2(p + 1) for p in positions if p <= N]
    return len(hits) / len(positions), math.fsum(gains) / len(positions)
