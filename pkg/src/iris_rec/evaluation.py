"""Sampled leave-one-out ranking evaluation with HR@N and NDCG@N."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import EvalCase, SplitBundle, build_eval_candidates
from .features import FeatureStore, all_item_embeddings
from .model import Hyperparams, ModelParams, score

__all__ = [
    "RankedList",
    "EvalReport",
    "model_scorer",
    "rank_candidates",
    "rank_cases",
    "hr_at_n",
    "ndcg_at_n",
    "evaluate",
    "evaluate_cases",
]

Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RankedList:
    user: int
    candidates: np.ndarray
    position: int


@dataclass
class EvalReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    ranked: list[RankedList] = field(default_factory=list, repr=False)

    def rows(self) -> list[tuple[str, int, float]]:
        return [("hr", n, v) for n, v in self.hr.items()] + [("ndcg", n, v) for n, v in self.ndcg.items()]

    def to_csv(self) -> str:
        lines = ["metric,N,value"] + [f"{m},{n},{v:.6f}" for m, n, v in self.rows()]
        return "\n".join(lines) + "\n"

    def ranked_csv(self) -> str:
        return "".join(f"{r.user},{r.position}," + ",".join(map(str, r.candidates.tolist())) + "\n"
                       for r in self.ranked)


def model_scorer(params: ModelParams, hp: Hyperparams, split: SplitBundle,
                 store: FeatureStore | None = None) -> Scorer:
    """Batch scorer with the feature embeddings computed once (weights frozen)."""
    embeddings = None
    if params.variant.uses_features:
        if store is None:
            raise ValueError(f"{params.variant.value} needs item features")
        embeddings = all_item_embeddings(store, params.feature_tensors, hp.activation)

    def scorer(users, items):
        return score(params, hp, split, users, items, embeddings=embeddings)

    return scorer


def _rank(user: int, candidates: np.ndarray, scores: np.ndarray, positive: int) -> RankedList:
    order = np.lexsort((candidates, -scores))
    ranked = candidates[order]
    pos = int(np.flatnonzero(ranked == positive)[0]) + 1
    return RankedList(user, ranked, pos)


def rank_candidates(case: EvalCase, scorer: Scorer) -> RankedList:
    """Sort the case's 100 candidates by score, ties by ascending item id."""
    cands = case.candidates
    scores = np.asarray(scorer(np.full(cands.size, case.user), cands), dtype=np.float64)
    return _rank(case.user, cands, scores, case.positive)


def rank_cases(cases: Sequence[EvalCase], scorer: Scorer, chunk_users: int = 256,
               threads: int = 1) -> list[RankedList]:
    chunks = [cases[i:i + chunk_users] for i in range(0, len(cases), chunk_users)]

    def run(chunk):
        cands = [c.candidates for c in chunk]
        users = np.concatenate([np.full(c.size, cs.user) for c, cs in zip(cands, chunk)])
        scores = np.asarray(scorer(users, np.concatenate(cands)), dtype=np.float64)
        out, start = [], 0
        for case, c in zip(chunk, cands):
            out.append(_rank(case.user, c, scores[start:start + c.size], case.positive))
            start += c.size
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    return [r for chunk in results for r in chunk]


def _positions(lists, N: int) -> np.ndarray:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if len(lists) == 0:
        raise ValueError("no ranked lists to evaluate")
    return np.array([r.position for r in lists], dtype=np.int64)


def hr_at_n(lists: Sequence[RankedList], N: int) -> float:
    pos = _positions(lists, N)
    return float(np.count_nonzero(pos <= N)) / pos.size


def ndcg_at_n(lists: Sequence[RankedList], N: int) -> float:
    pos = _positions(lists, N)
    hits = np.where(pos <= N, 1.0 / np.log2(pos + 1.0), 0.0)
    return math.fsum(hits.tolist()) / pos.size


def evaluate_cases(cases: Sequence[EvalCase], scorer: Scorer, top_n: Sequence[int] = (10, 20),
                   threads: int = 1, keep_lists: bool = False) -> EvalReport:
    lists = rank_cases(cases, scorer, threads=threads)
    return EvalReport(
        hr={n: hr_at_n(lists, n) for n in top_n},
        ndcg={n: ndcg_at_n(lists, n) for n in top_n},
        num_users=len(lists),
        ranked=lists if keep_lists else [],
    )


def evaluate(split: SplitBundle, store: FeatureStore | None, params: ModelParams, hp: Hyperparams,
             which: str = "test", seed: int | None = None, threads: int = 1,
             keep_lists: bool = False) -> EvalReport:
    cases = build_eval_candidates(split, which, hp.seed if seed is None else seed)
    return evaluate_cases(cases, model_scorer(params, hp, split, store), hp.top_n, threads, keep_lists)
