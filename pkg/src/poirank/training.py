"""Negative sampling, cross-entropy loss, AdamW, and the training loop.

Each training position in a user's sequence becomes one instance: the
left-padded prefix is the history, the event itself is the positive at
slate index 0, and K hard negatives are drawn from the training
popularity distribution (resampled every epoch). The last training
event per user is held out as the validation slice for early stopping.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import CheckIn, SplitDataset
from .evaluation import build_eval_pool, metrics_at_k, mrr, rank_of_positive
from .model import (
    CandidateSlate,
    ModelConfig,
    PaddedHistory,
    backward,
    forward,
    init_params,
    pad_history,
    save_checkpoint,
)


class SamplingError(ValueError):
    """Not enough eligible POIs for the requested number of negatives."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    k_negatives: int = 99
    label_smoothing: float = 0.0
    w_explore: float = 1.0
    seed: int = 0
    patience: int = 5
    weight_decay: float = 0.01
    val_pool_size: int = 100
    popularity_add_one: bool = False
    # Stop as soon as within-slate training HR@1 reaches this level
    # (None = train to max_epochs / early stop only).
    target_train_hr1: float | None = None

    def __post_init__(self) -> None:
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.k_negatives < 1:
            raise ValueError("k_negatives must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.w_explore < 1.0:
            raise ValueError("w_explore must be >= 1")


@dataclass
class TrainInstance:
    history: PaddedHistory
    positive_poi: int
    slate: CandidateSlate
    is_explore: bool


@dataclass
class TrainResult:
    params: nn.ParamTable
    config: ModelConfig
    num_pois: int
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mrr: float = 0.0
    diverged: bool = False


class PopularitySampler:
    """Without-replacement sampling proportional to training visit counts,
    never emitting the positive or the padding id."""

    def __init__(self, popularity: dict[int, int], add_one: bool = False) -> None:
        if 0 in popularity:
            raise SamplingError("padding id 0 must not appear in popularity counts")
        self.ids = np.array(sorted(popularity), dtype=np.int64)
        counts = np.array([popularity[i] for i in self.ids], dtype=np.float64)
        if add_one:
            counts = counts + 1.0
        self.counts = counts

    def sample(self, positive: int, k: int, rng: np.random.Generator) -> np.ndarray:
        weights = self.counts.copy()
        weights[self.ids == positive] = 0.0
        eligible = int((weights > 0).sum())
        if eligible < k:
            raise SamplingError(f"need {k} negatives but only {eligible} eligible POIs")
        probs = weights / weights.sum()
        return rng.choice(self.ids, size=k, replace=False, p=probs)


def sample_negatives(positive: int, popularity: dict[int, int], k: int,
                     rng: np.random.Generator, add_one: bool = False) -> np.ndarray:
    return PopularitySampler(popularity, add_one=add_one).sample(positive, k, rng)


def ce_loss(scores: np.ndarray, target: int = 0, smoothing: float = 0.0,
            weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy with optional label smoothing.

    Returns (loss, dloss/dscores). The target distribution puts
    1 - smoothing on `target` and smoothing / (C - 1) on the rest.
    """
    scores = np.asarray(scores, dtype=np.float64)
    c = scores.shape[0]
    if c < 2:
        raise ValueError("need at least 2 candidates for a ranking loss")
    if not np.isfinite(scores).all():
        raise nn.NumericError("non-finite scores in ce_loss")
    z = scores - scores.max()
    logz = np.log(np.exp(z).sum())
    logp = z - logz
    q = np.full(c, smoothing / (c - 1))
    q[target] = 1.0 - smoothing
    loss = -weight * float((q * logp).sum())
    dscores = weight * (np.exp(logp) - q)
    return loss, dscores


def adamw_step(params: nn.ParamTable, lr: float, t: int,
               weight_decay: float = 0.0, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Decoupled-weight-decay adaptive update with bias-corrected moments.

    Decay applies to matrices and embedding tables only; 1-D parameters
    (biases, norm gains/shifts, bias projections) and the bias-bucket
    tables are exempt.
    """
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, theta in params.params.items():
        grad = params.grads[name]
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        if weight_decay > 0.0 and theta.ndim >= 2 and name not in ("time_bias_emb", "dist_bias_emb"):
            theta *= 1.0 - lr * weight_decay
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def is_explore(history: PaddedHistory, positive: int) -> bool:
    """True when the target POI never appears in the model-visible
    (padded) history window."""
    visible = history.poi_ids[~history.pad_mask]
    return positive not in set(int(i) for i in visible)


def _instance_positions(train: dict[int, list[CheckIn]]):
    """(user, t) pairs: t in [1, len-2] trains, t = len-1 validates."""
    train_pos: list[tuple[int, int]] = []
    val_pos: list[tuple[int, int]] = []
    for user in sorted(train):
        n = len(train[user])
        if n < 2:
            continue
        for t in range(1, n - 1):
            train_pos.append((user, t))
        val_pos.append((user, n - 1))
    return train_pos, val_pos


def _slate_for(positive: int, negatives: np.ndarray,
               poi_coords: dict[int, tuple[float, float]]) -> CandidateSlate:
    ids = np.concatenate([[positive], negatives]).astype(np.int64)
    coords = np.array([poi_coords[i] for i in ids], dtype=np.float64)
    return CandidateSlate(poi_ids=ids, coords=coords)


def train(split: SplitDataset, model_config: ModelConfig,
          train_config: TrainConfig, out_dir: str | None = None) -> TrainResult:
    """Full training loop with per-epoch validation and early stopping on
    validation MRR. Returns the best-validation checkpoint (the current
    one if validation is unavailable). Epoch 0 in the log is the
    untrained baseline; no optimizer step has happened yet.
    """
    ss = np.random.SeedSequence(train_config.seed)
    init_seed, shuffle_ss, neg_ss, drop_ss, val_ss = ss.spawn(5)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    neg_rng = np.random.default_rng(neg_ss)
    drop_rng = np.random.default_rng(drop_ss)
    val_rng = np.random.default_rng(val_ss)

    max_poi_id = max(split.poi_coords) if split.poi_coords else 0
    params = init_params(model_config, max_poi_id,
                         seed=int(init_seed.generate_state(1)[0]))
    sampler = PopularitySampler(split.stats.popularity,
                                add_one=train_config.popularity_add_one)
    train_pos, val_pos = _instance_positions(split.train)
    if not train_pos:
        raise ValueError("no training instances (every user too short)")

    # Validation pools are fixed for the whole run so the early-stopping
    # signal is comparable across epochs.
    poi_ids = np.array(sorted(split.poi_coords), dtype=np.int64)
    val_size = min(train_config.val_pool_size, len(poi_ids))
    val_slates = []
    for user, t in val_pos:
        positive = split.train[user][t].poi_id
        slate, pos_index = build_eval_pool(positive, poi_ids, split.poi_coords,
                                           val_size, "sampled", val_rng)
        val_slates.append((user, t, slate, pos_index))

    result = TrainResult(params=params, config=model_config, num_pois=max_poi_id)
    best_params = None
    best_val_mrr = -1.0
    best_epoch = -1
    bad_epochs = 0
    step = 0
    log_path = os.path.join(out_dir, "run_log.tsv") if out_dir else None
    if log_path:
        os.makedirs(out_dir, exist_ok=True)
        with open(log_path, "w", encoding="utf-8") as f:
            f.write("epoch\ttrain_loss\ttrain_hr1\tval_hr5\tval_hr10"
                    "\tval_ndcg5\tval_ndcg10\tval_mrr\n")

    def make_instance(user: int, t: int, rng: np.random.Generator) -> TrainInstance:
        events = split.train[user]
        history = pad_history(events[:t], model_config.hist_len, split.stats)
        positive = events[t].poi_id
        negatives = sampler.sample(positive, train_config.k_negatives, rng)
        slate = _slate_for(positive, negatives, split.poi_coords)
        return TrainInstance(history, positive, slate, is_explore(history, positive))

    def validation_metrics() -> dict[str, float]:
        if not val_slates:
            return {"hr5": 0.0, "hr10": 0.0, "ndcg5": 0.0, "ndcg10": 0.0, "mrr": 0.0}
        ranks = []
        for user, t, slate, pos_index in val_slates:
            history = pad_history(split.train[user][:t], model_config.hist_len, split.stats)
            scores, _ = forward(history, slate, params, model_config, train=False)
            ranks.append(rank_of_positive(scores, pos_index))
        hr5 = float(np.mean([metrics_at_k(r, 5)[0] for r in ranks]))
        hr10 = float(np.mean([metrics_at_k(r, 10)[0] for r in ranks]))
        ndcg5 = float(np.mean([metrics_at_k(r, 5)[1] for r in ranks]))
        ndcg10 = float(np.mean([metrics_at_k(r, 10)[1] for r in ranks]))
        return {"hr5": hr5, "hr10": hr10, "ndcg5": ndcg5, "ndcg10": ndcg10,
                "mrr": mrr(ranks)}

    def log_epoch(epoch: int, loss: float, hr1: float, val: dict[str, float]) -> None:
        record = {"epoch": epoch, "train_loss": loss, "train_hr1": hr1, **{
            f"val_{k}": v for k, v in val.items()}}
        result.log.append(record)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as f:
                f.write(f"{epoch}\t{loss!r}\t{hr1!r}\t{val['hr5']!r}\t{val['hr10']!r}"
                        f"\t{val['ndcg5']!r}\t{val['ndcg10']!r}\t{val['mrr']!r}\n")

    # Epoch 0: untrained baseline (dropout off, no updates).
    baseline_rng = np.random.default_rng(neg_ss.spawn(1)[0])
    losses, hits = [], []
    for user, t in train_pos:
        inst = make_instance(user, t, baseline_rng)
        scores, _ = forward(inst.history, inst.slate, params, model_config, train=False)
        weight = train_config.w_explore if inst.is_explore else 1.0
        loss, _ = ce_loss(scores, 0, train_config.label_smoothing, weight)
        losses.append(loss)
        hits.append(1.0 if rank_of_positive(scores, 0) == 1 else 0.0)
    log_epoch(0, float(np.mean(losses)), float(np.mean(hits)), validation_metrics())

    stop_reason = ""
    for epoch in range(1, train_config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_pos))
        losses, hits = [], []
        diverged = False
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            params.zero_grads()
            batch_loss = 0.0
            try:
                for j in batch:
                    user, t = train_pos[j]
                    inst = make_instance(user, t, neg_rng)
                    scores, fcache = forward(inst.history, inst.slate, params,
                                             model_config, train=True, rng=drop_rng)
                    weight = train_config.w_explore if inst.is_explore else 1.0
                    loss, dscores = ce_loss(scores, 0, train_config.label_smoothing, weight)
                    backward(dscores / len(batch), fcache, params)
                    batch_loss += loss
                    hits.append(1.0 if rank_of_positive(scores, 0) == 1 else 0.0)
            except nn.NumericError:
                diverged = True
                break
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                diverged = True
                break
            losses.append(batch_loss)
            step += 1
            adamw_step(params, train_config.lr, step, train_config.weight_decay)
        if diverged:
            result.diverged = True
            break

        val = validation_metrics()
        hr1 = float(np.mean(hits)) if hits else 0.0
        log_epoch(epoch, float(np.mean(losses)), hr1, val)

        if val_slates and val["mrr"] > best_val_mrr:
            best_val_mrr = val["mrr"]
            best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        elif val_slates:
            bad_epochs += 1
            if bad_epochs >= train_config.patience:
                stop_reason = "early_stop"
                break
        if (train_config.target_train_hr1 is not None
                and hr1 >= train_config.target_train_hr1):
            stop_reason = "target_train_hr1"
            break

    if best_params is not None and stop_reason != "target_train_hr1":
        result.params = best_params
    else:
        result.params = params
    result.best_epoch = best_epoch
    result.best_val_mrr = max(best_val_mrr, 0.0)

    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint.ckpt"),
                        result.params, model_config, result.num_pois)
    return result
