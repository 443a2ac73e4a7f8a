"""Candidate-pool construction, ranking metrics, and the evaluation
harness (sampled or full pools, pool-size sweep, sparsity strata).

Ties are broken pessimistically: the positive ranks below every
candidate with an equal score, so a constant scorer earns zero HR@k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import CheckIn, SplitDataset
from .model import CandidateSlate, ModelConfig, PaddedHistory, forward, pad_history
from . import nn


class PoolError(ValueError):
    """Candidate pool cannot be built as requested."""


@dataclass
class RankReport:
    ranks: list[int]
    pool_size: int
    hr5: float = 0.0
    hr10: float = 0.0
    ndcg5: float = 0.0
    ndcg10: float = 0.0
    mrr: float = 0.0
    strata: dict[str, dict[str, float]] = field(default_factory=dict)
    num_instances: int = 0
    num_skipped: int = 0


def metrics_at_k(rank: int, k: int) -> tuple[float, float]:
    """(hit, ndcg) for a single relevant item at 1-based `rank`."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    if rank > k:
        return 0.0, 0.0
    return 1.0, 1.0 / np.log2(rank + 1.0)


def mrr(ranks: list[int]) -> float:
    if not ranks:
        raise ValueError("mrr of an empty rank list")
    return float(np.mean([1.0 / r for r in ranks]))


def rank_of_positive(scores: np.ndarray, positive_index: int) -> int:
    """1-based rank with ties counted against the positive."""
    s_pos = scores[positive_index]
    others = np.delete(scores, positive_index)
    return 1 + int((others >= s_pos).sum())


def build_eval_pool(positive: int, poi_ids: np.ndarray,
                    poi_coords: dict[int, tuple[float, float]], size: int,
                    mode: str, rng: np.random.Generator) -> tuple[CandidateSlate, int]:
    """Build one candidate pool. Sampled mode draws `size - 1` negatives
    uniformly without replacement from the global POI set (excluding the
    positive); full mode takes every POI. Returns (slate, positive_index);
    the positive sits at index 0 in sampled mode.
    """
    poi_ids = np.asarray(poi_ids, dtype=np.int64)
    if mode == "full":
        if positive not in poi_ids:
            raise PoolError(f"positive POI {positive} not in the POI set")
        ids = poi_ids
        positive_index = int(np.nonzero(ids == positive)[0][0])
    elif mode == "sampled":
        others = poi_ids[poi_ids != positive]
        if size - 1 > len(others):
            raise PoolError(f"pool size {size} exceeds {len(others) + 1} available POIs")
        negatives = rng.choice(others, size=size - 1, replace=False)
        ids = np.concatenate([[positive], negatives])
        positive_index = 0
    else:
        raise PoolError(f"unknown pool mode {mode!r}")
    coords = np.array([poi_coords[i] for i in ids], dtype=np.float64)
    return CandidateSlate(poi_ids=ids, coords=coords), positive_index


Scorer = Callable[[list[CheckIn], CandidateSlate], np.ndarray]


def model_scorer(params: nn.ParamTable, config: ModelConfig, stats) -> Scorer:
    """Adapt a trained model into the scorer interface (dropout off)."""
    def score(history: list[CheckIn], slate: CandidateSlate) -> np.ndarray:
        h = pad_history(history, config.hist_len, stats)
        scores, _ = forward(h, slate, params, config, train=False)
        return scores
    return score


def _quartile_edges(values: list[int]) -> np.ndarray:
    return np.quantile(np.asarray(values, dtype=np.float64), [0.25, 0.5, 0.75])


def _quartile(value: float, edges: np.ndarray) -> int:
    return int(np.searchsorted(edges, value, side="right"))  # 0..3


def evaluate(scorer: Scorer, split: SplitDataset, pool_size: int = 100,
             pool_mode: str = "sampled", seed: int = 0,
             max_poi_id: int | None = None) -> RankReport:
    """Teacher-forced evaluation: each held-out event is one instance
    whose history is every chronologically earlier event (train plus
    earlier eval). Instances whose positive cannot be scored (id beyond
    the model's tables) are skipped and counted.
    """
    poi_ids = np.array(sorted(split.poi_coords), dtype=np.int64)
    if max_poi_id is not None:
        poi_ids = poi_ids[poi_ids <= max_poi_id]  # stay inside the model's tables
    user_edges = _quartile_edges([len(v) for v in split.train.values()])
    pop_edges = _quartile_edges(list(split.stats.popularity.values()))

    ranks: list[int] = []
    strata_ranks: dict[str, list[int]] = {}
    skipped = 0
    actual_pool = pool_size if pool_mode == "sampled" else len(poi_ids)
    for user in sorted(split.eval):
        history = list(split.train.get(user, []))
        if not history:
            continue
        user_q = _quartile(len(split.train[user]), user_edges)
        for idx, event in enumerate(split.eval[user]):
            positive = event.poi_id
            eligible = (positive in split.poi_coords
                        and (max_poi_id is None or positive <= max_poi_id))
            if not eligible:
                skipped += 1
                history.append(event)
                continue
            rng = np.random.default_rng(np.random.SeedSequence((seed, user, idx)))
            slate, pos_index = build_eval_pool(
                positive, poi_ids, split.poi_coords, pool_size, pool_mode, rng)
            scores = scorer(history, slate)
            rank = rank_of_positive(scores, pos_index)
            ranks.append(rank)
            poi_q = _quartile(split.stats.popularity.get(positive, 0), pop_edges)
            strata_ranks.setdefault(f"user_q{user_q + 1}", []).append(rank)
            strata_ranks.setdefault(f"poi_q{poi_q + 1}", []).append(rank)
            history.append(event)

    report = RankReport(ranks=ranks, pool_size=actual_pool,
                        num_instances=len(ranks), num_skipped=skipped)
    if ranks:
        _fill_metrics(report, ranks)
        for name in sorted(strata_ranks):
            sub = RankReport(ranks=strata_ranks[name], pool_size=actual_pool)
            _fill_metrics(sub, strata_ranks[name])
            report.strata[name] = {
                "count": float(len(strata_ranks[name])),
                "hr5": sub.hr5, "hr10": sub.hr10,
                "ndcg5": sub.ndcg5, "ndcg10": sub.ndcg10, "mrr": sub.mrr,
            }
    return report


def _fill_metrics(report: RankReport, ranks: list[int]) -> None:
    hits5, hits10, gains5, gains10 = [], [], [], []
    for r in ranks:
        h5, n5 = metrics_at_k(r, 5)
        h10, n10 = metrics_at_k(r, 10)
        hits5.append(h5)
        hits10.append(h10)
        gains5.append(n5)
        gains10.append(n10)
    report.hr5 = float(np.mean(hits5))
    report.hr10 = float(np.mean(hits10))
    report.ndcg5 = float(np.mean(gains5))
    report.ndcg10 = float(np.mean(gains10))
    report.mrr = mrr(ranks)


def pool_size_sweep(scorer: Scorer, split: SplitDataset, sizes: list[int],
                    seed: int = 0, max_poi_id: int | None = None) -> list[tuple[int, float]]:
    """HR@10 at each pool size, with a shared seed across sizes."""
    num_pois = len(split.poi_coords)
    curve = []
    for size in sizes:
        if size > num_pois:
            raise PoolError(f"sweep size {size} exceeds {num_pois} POIs")
        report = evaluate(scorer, split, pool_size=size, pool_mode="sampled",
                          seed=seed, max_poi_id=max_poi_id)
        curve.append((size, report.hr10))
    return curve


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

def write_report(report: RankReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# poirank evaluation report\n")
        f.write(f"pool_size={report.pool_size}\n")
        f.write(f"instances={report.num_instances}\n")
        f.write(f"skipped={report.num_skipped}\n")
        f.write(f"hr5={report.hr5!r}\n")
        f.write(f"hr10={report.hr10!r}\n")
        f.write(f"ndcg5={report.ndcg5!r}\n")
        f.write(f"ndcg10={report.ndcg10!r}\n")
        f.write(f"mrr={report.mrr!r}\n")
        f.write("[strata]\n")
        f.write("stratum\tcount\thr5\thr10\tndcg5\tndcg10\tmrr\n")
        for name in sorted(report.strata):
            s = report.strata[name]
            f.write(f"{name}\t{int(s['count'])}\t{s['hr5']!r}\t{s['hr10']!r}"
                    f"\t{s['ndcg5']!r}\t{s['ndcg10']!r}\t{s['mrr']!r}\n")


def write_ranks(report: RankReport, path: str) -> None:
    """Per-instance rank dump for downstream plotting."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("instance\trank\n")
        for i, r in enumerate(report.ranks):
            f.write(f"{i}\t{r}\n")


def write_sweep(curve: list[tuple[int, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("pool_size\thr10\n")
        for size, hr10 in curve:
            f.write(f"{size}\t{hr10!r}\n")
