"""Candidate-conditioned ranking network.

Forward path: embed the left-padded history (POI + positional + hour/
weekday + coordinate-MLP embeddings, layer-normalized, padded rows
zeroed), optionally run one causal self-attention block over it, then
stack cross-attention blocks in which candidate embeddings query the
history with a per-(candidate, position) logit bias built from time-gap
and distance buckets. A two-layer head scores each candidate from
[rep; cand; rep*cand].

Every forward returns a cache; `backward` consumes it and accumulates
analytic gradients into the ParamTable, verified elsewhere against
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import CheckIn, DatasetStats
from .geo import (
    bucketize_dist_vec,
    bucketize_time_vec,
    haversine_km_vec,
    time_features_vec,
)

BIAS_EMBED_DIM = 16
FFN_MULT = 4
POSITIONAL_BASE = 10000.0


class ConfigError(ValueError):
    """Invalid model configuration."""


@dataclass
class ModelConfig:
    dim: int = 64
    num_heads: int = 8
    num_blocks: int = 2
    hist_len: int = 100
    use_history_self_attn: bool = True
    use_temporal_bias: bool = True
    use_spatial_bias: bool = True
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.dim < 1 or self.dim % self.num_heads != 0:
            raise ConfigError(f"dim {self.dim} must be a positive multiple of num_heads {self.num_heads}")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.hist_len < 1:
            raise ConfigError("hist_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class PaddedHistory:
    """Fixed-length, left-padded trajectory. pad_mask True = padded;
    padding is always a prefix and at least one position is real."""
    poi_ids: np.ndarray          # [L] int, 0 = padding
    timestamps: np.ndarray       # [L] int seconds
    norm_coords: np.ndarray      # [L, 2] standardized (lat, lon)
    raw_coords: np.ndarray       # [L, 2] degrees
    pad_mask: np.ndarray         # [L] bool
    t_last: int

    def __post_init__(self) -> None:
        real = ~self.pad_mask
        if not real.any():
            raise nn.ContractViolation("history needs at least one real position")
        first_real = int(np.argmax(real))
        if self.pad_mask[first_real:].any():
            raise nn.ContractViolation("padding must be a contiguous prefix")
        if int(self.timestamps[-1]) != int(self.t_last):
            raise nn.ContractViolation("t_last must equal the final timestamp")


@dataclass
class CandidateSlate:
    """Candidates for one ranking instance; index 0 is the positive
    during training."""
    poi_ids: np.ndarray          # [C] int, all >= 1
    coords: np.ndarray           # [C, 2] degrees

    def __post_init__(self) -> None:
        if len(self.poi_ids) < 1:
            raise nn.ContractViolation("slate must contain at least one candidate")
        if (np.asarray(self.poi_ids) < 1).any():
            raise nn.ContractViolation("candidate ids must be >= 1 (0 is padding)")


def pad_history(events: list[CheckIn], length: int, stats: DatasetStats) -> PaddedHistory:
    """Left-pad the most recent <= length events into model input form."""
    if not events:
        raise nn.ContractViolation("cannot pad an empty history")
    recent = events[-length:]
    r = len(recent)
    poi_ids = np.zeros(length, dtype=np.int64)
    timestamps = np.zeros(length, dtype=np.int64)
    raw = np.zeros((length, 2), dtype=np.float64)
    norm = np.zeros((length, 2), dtype=np.float64)
    pad_mask = np.ones(length, dtype=bool)
    for k, c in enumerate(recent):
        j = length - r + k
        poi_ids[j] = c.poi_id
        timestamps[j] = c.timestamp
        raw[j] = (c.lat, c.lon)
        norm[j] = ((c.lat - stats.mu_lat) / stats.sigma_lat,
                   (c.lon - stats.mu_lon) / stats.sigma_lon)
        pad_mask[j] = False
    return PaddedHistory(poi_ids, timestamps, norm, raw, pad_mask, int(timestamps[-1]))


def recency_positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal encoding indexed by distance from the sequence end, so
    the most recent slot always gets position 0 and growing the padding
    prefix leaves real positions' codes unchanged."""
    pos = (length - 1 - np.arange(length, dtype=np.float64))[:, None]
    i = np.arange(dim // 2, dtype=np.float64)
    freq = POSITIONAL_BASE ** (-2.0 * i / dim)
    pe = np.zeros((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def init_params(config: ModelConfig, num_pois: int, seed: int = 0) -> nn.ParamTable:
    """Uniform(+-1/sqrt(d)) weights; zero biases; bias-bucket tables zero
    so training starts bias-neutral (their scalar projections stay random
    so gradients can flow)."""
    rng = np.random.default_rng(seed)
    d = config.dim
    scale = 1.0 / np.sqrt(d)
    table = nn.ParamTable()

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    table.add("hist_poi_emb", u(num_pois + 1, d))
    table.params["hist_poi_emb"][0] = 0.0  # padding row frozen at zero
    table.add("cand_poi_emb", u(num_pois + 1, d))
    table.add("hour_emb", u(24, d))
    table.add("weekday_emb", u(7, d))
    table.add("loc_w1", u(2, d))
    table.add("loc_b1", np.zeros(d))
    table.add("loc_w2", u(d, d))
    table.add("loc_b2", np.zeros(d))
    table.add("embed_ln_gain", np.ones(d))
    table.add("embed_ln_shift", np.zeros(d))

    # No bias on key projections anywhere: a shared key offset shifts every
    # logit in a query row equally, which softmax cancels, leaving a dead
    # (and unverifiable) parameter direction.
    if config.use_history_self_attn:
        for proj in ("q", "k", "v", "o"):
            table.add(f"hist_w{proj}", u(d, d))
            if proj != "k":
                table.add(f"hist_b{proj}", np.zeros(d))

    table.add("time_bias_emb", np.zeros((6, BIAS_EMBED_DIM)))
    table.add("time_bias_w", rng.uniform(-scale, scale, BIAS_EMBED_DIM))
    table.add("dist_bias_emb", np.zeros((5, BIAS_EMBED_DIM)))
    table.add("dist_bias_w", rng.uniform(-scale, scale, BIAS_EMBED_DIM))

    dff = FFN_MULT * d
    for layer in range(config.num_blocks):
        p = f"blk{layer}_"
        for proj in ("q", "k", "v", "o"):
            table.add(p + f"w{proj}", u(d, d))
            if proj != "k":
                table.add(p + f"b{proj}", np.zeros(d))
        table.add(p + "ln1_gain", np.ones(d))
        table.add(p + "ln1_shift", np.zeros(d))
        table.add(p + "ffn_w1", u(d, dff))
        table.add(p + "ffn_b1", np.zeros(dff))
        table.add(p + "ffn_w2", u(dff, d))
        table.add(p + "ffn_b2", np.zeros(d))
        table.add(p + "ln2_gain", np.ones(d))
        table.add(p + "ln2_shift", np.zeros(d))

    table.add("head_w1", u(3 * d, d))
    table.add("head_b1", np.zeros(d))
    table.add("head_w2", u(d, 1))
    table.add("head_b2", np.zeros(1))
    return table


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, num_heads, d // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _check_finite(x: np.ndarray, layer: str) -> None:
    if not np.isfinite(x).all():
        raise nn.NumericError(f"non-finite values after {layer}")


# ---------------------------------------------------------------------------
# Embedding layer
# ---------------------------------------------------------------------------

def embed_history(h: PaddedHistory, params: nn.ParamTable):
    """Sum the four per-position embeddings, layer-normalize, zero padded
    rows. Returns ([L, d] tensor, cache)."""
    p = params.params
    ids = np.asarray(h.poi_ids, dtype=np.int64)
    e_poi = nn.embed_lookup(p["hist_poi_emb"], ids)
    L = len(ids)
    d = e_poi.shape[1]
    pe = recency_positional_encoding(L, d)
    hours, weekdays = time_features_vec(h.timestamps)
    e_hour = nn.embed_lookup(p["hour_emb"], hours)
    e_wd = nn.embed_lookup(p["weekday_emb"], weekdays)
    z1 = nn.affine(h.norm_coords, p["loc_w1"], p["loc_b1"])
    a1 = nn.relu(z1)
    e_loc = nn.affine(a1, p["loc_w2"], p["loc_b2"])
    summed = e_poi + pe + e_hour + e_wd + e_loc
    normed, ln_cache = nn.layer_norm(summed, p["embed_ln_gain"], p["embed_ln_shift"])
    real = ~h.pad_mask
    x0 = normed * real[:, None]
    cache = {"ids": ids, "hours": hours, "weekdays": weekdays, "coords": h.norm_coords,
             "z1": z1, "a1": a1, "summed": summed, "ln": ln_cache, "real": real}
    return x0, cache


def _embed_backward(dx0, cache, params: nn.ParamTable) -> None:
    p, g = params.params, params.grads
    dnormed = dx0 * cache["real"][:, None]
    dsum, dgain, dshift = nn.layer_norm_backward(dnormed, cache["ln"], p["embed_ln_gain"])
    g["embed_ln_gain"] += dgain
    g["embed_ln_shift"] += dshift
    da1, dw2, db2 = nn.affine_backward(dsum, cache["a1"], p["loc_w2"])
    g["loc_w2"] += dw2
    g["loc_b2"] += db2
    dz1 = nn.relu_backward(da1, cache["z1"])
    _, dw1, db1 = nn.affine_backward(dz1, cache["coords"], p["loc_w1"])
    g["loc_w1"] += dw1
    g["loc_b1"] += db1
    g["hist_poi_emb"] += nn.embed_lookup_backward(dsum, p["hist_poi_emb"].shape, cache["ids"])
    g["hist_poi_emb"][0] = 0.0  # keep padding row frozen
    g["hour_emb"] += nn.embed_lookup_backward(dsum, p["hour_emb"].shape, cache["hours"])
    g["weekday_emb"] += nn.embed_lookup_backward(dsum, p["weekday_emb"].shape, cache["weekdays"])


# ---------------------------------------------------------------------------
# History self-attention (causal, padding-safe)
# ---------------------------------------------------------------------------

def history_self_attention(x0: np.ndarray, pad_mask: np.ndarray,
                           params: nn.ParamTable, num_heads: int):
    """One causal multi-head block with a residual connection; padded
    output rows zeroed. Returns ([L, d], cache)."""
    p = params.params
    L, d = x0.shape
    dh = d // num_heads
    q = nn.affine(x0, p["hist_wq"], p["hist_bq"])
    k = x0 @ p["hist_wk"]
    v = nn.affine(x0, p["hist_wv"], p["hist_bv"])
    qh, kh, vh = (_split_heads(t, num_heads) for t in (q, k, v))
    logits = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)          # [H, L, L]
    causal = np.triu(np.ones((L, L), dtype=bool), k=1)
    mask = causal | pad_mask[None, :]
    probs = nn.masked_softmax(logits, mask[None, :, :])
    out = probs @ vh
    merged = _merge_heads(out)
    attn = nn.affine(merged, p["hist_wo"], p["hist_bo"])
    real = ~pad_mask
    x1 = (x0 + attn) * real[:, None]
    cache = {"x0": x0, "qh": qh, "kh": kh, "vh": vh, "probs": probs,
             "merged": merged, "real": real, "dh": dh}
    return x1, cache


def _history_self_attention_backward(dx1, cache, params: nn.ParamTable) -> np.ndarray:
    p, g = params.params, params.grads
    num_heads = cache["qh"].shape[0]
    dh = cache["dh"]
    dres = dx1 * cache["real"][:, None]
    dx0 = dres.copy()
    dmerged, dwo, dbo = nn.affine_backward(dres, cache["merged"], p["hist_wo"])
    g["hist_wo"] += dwo
    g["hist_bo"] += dbo
    dout = _split_heads(dmerged, num_heads)
    dprobs = dout @ cache["vh"].transpose(0, 2, 1)
    dvh = cache["probs"].transpose(0, 2, 1) @ dout
    dlogits = nn.masked_softmax_backward(dprobs, cache["probs"])
    dqh = dlogits @ cache["kh"] / np.sqrt(dh)
    dkh = dlogits.transpose(0, 2, 1) @ cache["qh"] / np.sqrt(dh)
    for dp, name in ((dqh, "q"), (dkh, "k"), (dvh, "v")):
        dflat = _merge_heads(dp)
        dx, dw, db = nn.affine_backward(dflat, cache["x0"], p[f"hist_w{name}"])
        g[f"hist_w{name}"] += dw
        if name != "k":
            g[f"hist_b{name}"] += db
        dx0 += dx
    return dx0


# ---------------------------------------------------------------------------
# Candidate-relative bias
# ---------------------------------------------------------------------------

def build_bias(h: PaddedHistory, slate: CandidateSlate, params: nn.ParamTable,
               use_temporal: bool, use_spatial: bool):
    """[C, L] attention-logit bias: bucketized time-gap term (shared by
    all candidates) plus bucketized candidate-to-position distance term;
    padded columns pinned to the large negative mask constant."""
    p = params.params
    real = ~h.pad_mask
    gaps = np.maximum(0, int(h.t_last) - h.timestamps)
    t_buckets = bucketize_time_vec(gaps)
    g_t = nn.embed_lookup(p["time_bias_emb"], t_buckets)        # [L, Db]
    b_t = g_t @ p["time_bias_w"]                                 # [L]
    dists = haversine_km_vec(
        slate.coords[:, 0:1], slate.coords[:, 1:2],
        h.raw_coords[None, :, 0], h.raw_coords[None, :, 1])      # [C, L]
    d_buckets = bucketize_dist_vec(dists)
    g_s = nn.embed_lookup(p["dist_bias_emb"], d_buckets)         # [C, L, Db]
    b_s = g_s @ p["dist_bias_w"]                                 # [C, L]
    bias = np.zeros_like(b_s)
    if use_temporal:
        bias = bias + b_t[None, :]
    if use_spatial:
        bias = bias + b_s
    bias[:, ~real] = -nn.MASK_NEG_CONST
    cache = {"t_buckets": t_buckets, "d_buckets": d_buckets, "g_t": g_t,
             "g_s": g_s, "real": real, "use_temporal": use_temporal,
             "use_spatial": use_spatial}
    return bias, cache


def _build_bias_backward(dbias, cache, params: nn.ParamTable) -> None:
    p, g = params.params, params.grads
    dbias = dbias * cache["real"][None, :]  # padded columns are constants
    if cache["use_temporal"]:
        db_t = dbias.sum(axis=0)
        g["time_bias_w"] += cache["g_t"].T @ db_t
        g["time_bias_emb"] += nn.embed_lookup_backward(
            db_t[:, None] * p["time_bias_w"][None, :],
            p["time_bias_emb"].shape, cache["t_buckets"])
    if cache["use_spatial"]:
        g["dist_bias_w"] += (cache["g_s"] * dbias[..., None]).sum(axis=(0, 1))
        g["dist_bias_emb"] += nn.embed_lookup_backward(
            dbias[..., None] * p["dist_bias_w"][None, None, :],
            p["dist_bias_emb"].shape, cache["d_buckets"])


# ---------------------------------------------------------------------------
# Candidate-conditioned cross-attention block
# ---------------------------------------------------------------------------

def cc_attention_block(u: np.ndarray, x: np.ndarray, bias: np.ndarray,
                       pad_mask: np.ndarray, params: nn.ParamTable, layer: int,
                       num_heads: int, dropout_rate: float, train: bool,
                       rng: np.random.Generator | None):
    """Candidates query the history. The same [C, L] bias is added to
    every head's logits, which are clamped then key-masked; attention and
    feed-forward sublayers each carry a residual followed by layer norm.

    Returns ([C, d], cache).
    """
    p = params.params
    prefix = f"blk{layer}_"
    C, d = u.shape
    dh = d // num_heads
    q = nn.affine(u, p[prefix + "wq"], p[prefix + "bq"])
    k = x @ p[prefix + "wk"]
    v = nn.affine(x, p[prefix + "wv"], p[prefix + "bv"])
    qh = _split_heads(q, num_heads)                              # [H, C, dh]
    kh = _split_heads(k, num_heads)                              # [H, L, dh]
    vh = _split_heads(v, num_heads)
    raw = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh) + bias[None, :, :]
    clamped = nn.clamp_logits(raw)
    probs = nn.masked_softmax(clamped, pad_mask[None, None, :])  # [H, C, L]
    out = probs @ vh
    merged = _merge_heads(out)
    attn = nn.affine(merged, p[prefix + "wo"], p[prefix + "bo"])
    res1 = u + attn
    u1, ln1_cache = nn.layer_norm(res1, p[prefix + "ln1_gain"], p[prefix + "ln1_shift"])
    f1 = nn.affine(u1, p[prefix + "ffn_w1"], p[prefix + "ffn_b1"])
    act = nn.gelu(f1)
    dropped, keep = nn.dropout(act, dropout_rate, train, rng)
    f2 = nn.affine(dropped, p[prefix + "ffn_w2"], p[prefix + "ffn_b2"])
    res2 = u1 + f2
    u2, ln2_cache = nn.layer_norm(res2, p[prefix + "ln2_gain"], p[prefix + "ln2_shift"])
    cache = {"u": u, "x": x, "qh": qh, "kh": kh, "vh": vh, "raw": raw,
             "probs": probs, "merged": merged, "ln1": ln1_cache, "u1": u1,
             "f1": f1, "keep": keep, "dropped": dropped, "ln2": ln2_cache,
             "dh": dh, "layer": layer}
    return u2, cache


def _cc_attention_block_backward(du2, cache, params: nn.ParamTable):
    """Returns (du, dx, dbias) and accumulates parameter grads."""
    p, g = params.params, params.grads
    prefix = f"blk{cache['layer']}_"
    num_heads = cache["qh"].shape[0]
    dh = cache["dh"]
    dres2, dg2, ds2 = nn.layer_norm_backward(du2, cache["ln2"], p[prefix + "ln2_gain"])
    g[prefix + "ln2_gain"] += dg2
    g[prefix + "ln2_shift"] += ds2
    du1 = dres2.copy()
    ddropped, dw2, db2 = nn.affine_backward(dres2, cache["dropped"], p[prefix + "ffn_w2"])
    g[prefix + "ffn_w2"] += dw2
    g[prefix + "ffn_b2"] += db2
    dact = nn.dropout_backward(ddropped, cache["keep"])
    df1 = nn.gelu_backward(dact, cache["f1"])
    du1_ffn, dw1, db1 = nn.affine_backward(df1, cache["u1"], p[prefix + "ffn_w1"])
    g[prefix + "ffn_w1"] += dw1
    g[prefix + "ffn_b1"] += db1
    du1 += du1_ffn
    dres1, dg1, ds1 = nn.layer_norm_backward(du1, cache["ln1"], p[prefix + "ln1_gain"])
    g[prefix + "ln1_gain"] += dg1
    g[prefix + "ln1_shift"] += ds1
    du = dres1.copy()
    dmerged, dwo, dbo = nn.affine_backward(dres1, cache["merged"], p[prefix + "wo"])
    g[prefix + "wo"] += dwo
    g[prefix + "bo"] += dbo
    dout = _split_heads(dmerged, num_heads)
    dprobs = dout @ cache["vh"].transpose(0, 2, 1)
    dvh = cache["probs"].transpose(0, 2, 1) @ dout
    dclamped = nn.masked_softmax_backward(dprobs, cache["probs"])
    draw = nn.clamp_logits_backward(dclamped, cache["raw"])
    dbias = draw.sum(axis=0)                                     # heads share the bias
    dqh = draw @ cache["kh"] / np.sqrt(dh)
    dkh = draw.transpose(0, 2, 1) @ cache["qh"] / np.sqrt(dh)
    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    du_q, dwq, dbq = nn.affine_backward(dq, cache["u"], p[prefix + "wq"])
    g[prefix + "wq"] += dwq
    g[prefix + "bq"] += dbq
    du += du_q
    dx = np.zeros_like(cache["x"])
    for dp, name in ((dk, "k"), (dv, "v")):
        dxp, dw, db = nn.affine_backward(dp, cache["x"], p[prefix + f"w{name}"])
        g[prefix + f"w{name}"] += dw
        if name != "k":
            g[prefix + f"b{name}"] += db
        dx += dxp
    return du, dx, dbias


# ---------------------------------------------------------------------------
# Full forward / backward
# ---------------------------------------------------------------------------

def forward(h: PaddedHistory, slate: CandidateSlate, params: nn.ParamTable,
            config: ModelConfig, train: bool = False,
            rng: np.random.Generator | None = None):
    """Score every candidate against the history. Returns ([C], cache)."""
    p = params.params
    x0, embed_cache = embed_history(h, params)
    _check_finite(x0, "embedding")
    hist_cache = None
    x = x0
    if config.use_history_self_attn:
        x, hist_cache = history_self_attention(x0, h.pad_mask, params, config.num_heads)
        _check_finite(x, "history_self_attention")
    cand_ids = np.asarray(slate.poi_ids, dtype=np.int64)
    e_c = nn.embed_lookup(p["cand_poi_emb"], cand_ids)
    bias, bias_cache = build_bias(h, slate, params,
                                  config.use_temporal_bias, config.use_spatial_bias)
    u = e_c
    block_caches = []
    for layer in range(config.num_blocks):
        u, blk_cache = cc_attention_block(
            u, x, bias, h.pad_mask, params, layer, config.num_heads,
            config.dropout, train, rng)
        _check_finite(u, f"cc_block_{layer}")
        block_caches.append(blk_cache)

    rep = u                                                      # [C, d]
    z = np.concatenate([rep, e_c, nn.hadamard(rep, e_c)], axis=1)
    h1 = nn.affine(z, p["head_w1"], p["head_b1"])
    act = nn.gelu(h1)
    dropped, keep = nn.dropout(act, config.dropout, train, rng)
    s = nn.affine(dropped, p["head_w2"], p["head_b2"])
    scores = s[:, 0]
    _check_finite(scores, "head")
    cache = {"embed": embed_cache, "hist": hist_cache, "bias": bias_cache,
             "blocks": block_caches, "cand_ids": cand_ids, "e_c": e_c,
             "rep": rep, "z": z, "h1": h1, "keep": keep, "dropped": dropped,
             "config": config}
    return scores, cache


def backward(dscores: np.ndarray, cache: dict, params: nn.ParamTable) -> None:
    """Accumulate d(loss)/d(param) into params.grads for one instance."""
    p, g = params.params, params.grads
    config: ModelConfig = cache["config"]
    d = config.dim

    ds = np.asarray(dscores, dtype=np.float64)[:, None]
    ddropped, dw2, db2 = nn.affine_backward(ds, cache["dropped"], p["head_w2"])
    g["head_w2"] += dw2
    g["head_b2"] += db2
    dact = nn.dropout_backward(ddropped, cache["keep"])
    dh1 = nn.gelu_backward(dact, cache["h1"])
    dz, dw1, db1 = nn.affine_backward(dh1, cache["z"], p["head_w1"])
    g["head_w1"] += dw1
    g["head_b1"] += db1
    rep, e_c = cache["rep"], cache["e_c"]
    dhad_rep, dhad_ec = nn.hadamard_backward(dz[:, 2 * d:], rep, e_c)
    du = dz[:, :d] + dhad_rep
    de_c = dz[:, d:2 * d] + dhad_ec

    dx_total = None
    dbias_total = None
    for blk_cache in reversed(cache["blocks"]):
        du, dx, dbias = _cc_attention_block_backward(du, blk_cache, params)
        dx_total = dx if dx_total is None else dx_total + dx
        dbias_total = dbias if dbias_total is None else dbias_total + dbias
    de_c += du                                                   # U^(0) = candidate embeddings

    g["cand_poi_emb"] += nn.embed_lookup_backward(
        de_c, p["cand_poi_emb"].shape, cache["cand_ids"])
    _build_bias_backward(dbias_total, cache["bias"], params)
    if cache["hist"] is not None:
        dx0 = _history_self_attention_backward(dx_total, cache["hist"], params)
    else:
        dx0 = dx_total
    _embed_backward(dx0, cache["embed"], params)


def attention_dump(h: PaddedHistory, slate: CandidateSlate, params: nn.ParamTable,
                   config: ModelConfig) -> list[np.ndarray]:
    """Per-block [H, C, L] cross-attention weights (dropout off)."""
    _, cache = forward(h, slate, params, config, train=False)
    return [blk["probs"].copy() for blk in cache["blocks"]]


def write_attention_dump(dumps: list[np.ndarray], path: str) -> None:
    """Tab-delimited dump keyed by (layer, head, candidate, position)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("layer\thead\tcandidate\tposition\tweight\n")
        for layer, probs in enumerate(dumps):
            n_heads, n_cand, n_pos = probs.shape
            for head in range(n_heads):
                for c in range(n_cand):
                    for j in range(n_pos):
                        f.write(f"{layer}\t{head}\t{c}\t{j}\t{probs[head, c, j]!r}\n")


# ---------------------------------------------------------------------------
# Checkpoint = structured-text config header + binary parameter blob
# ---------------------------------------------------------------------------

_BINARY_MARKER = b"[binary]\n"


def save_checkpoint(path: str, params: nn.ParamTable, config: ModelConfig,
                    num_pois: int) -> None:
    header = (
        "# poirank checkpoint v1\n"
        f"dim={config.dim}\n"
        f"num_heads={config.num_heads}\n"
        f"num_blocks={config.num_blocks}\n"
        f"hist_len={config.hist_len}\n"
        f"use_history_self_attn={int(config.use_history_self_attn)}\n"
        f"use_temporal_bias={int(config.use_temporal_bias)}\n"
        f"use_spatial_bias={int(config.use_spatial_bias)}\n"
        f"dropout={config.dropout!r}\n"
        f"num_pois={num_pois}\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(_BINARY_MARKER)
        f.write(nn.serialize_params(params))


def load_checkpoint(path: str) -> tuple[nn.ParamTable, ModelConfig, int]:
    with open(path, "rb") as f:
        blob = f.read()
    marker = blob.index(_BINARY_MARKER)
    header = blob[:marker].decode("utf-8")
    kv = {}
    for line in header.splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        kv[key] = value
    config = ModelConfig(
        dim=int(kv["dim"]),
        num_heads=int(kv["num_heads"]),
        num_blocks=int(kv["num_blocks"]),
        hist_len=int(kv["hist_len"]),
        use_history_self_attn=bool(int(kv["use_history_self_attn"])),
        use_temporal_bias=bool(int(kv["use_temporal_bias"])),
        use_spatial_bias=bool(int(kv["use_spatial_bias"])),
        dropout=float(kv["dropout"]),
    )
    params = nn.deserialize_params(blob[marker + len(_BINARY_MARKER):])
    return params, config, int(kv["num_pois"])
