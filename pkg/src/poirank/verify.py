"""Self-checks behind the `verify` command: gradient fidelity for every
primitive and the full model, bucketizer oracles, haversine cross-check,
and the attention masking invariants.

`corrupt_param` is a test hook: analytic gradients of any parameter
whose name contains the given substring are perturbed after backward,
which the full-model finite-difference comparison must then catch and
report by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import DatasetStats
from .geo import (
    DIST_BUCKET_BOUNDARIES,
    TIME_BUCKET_BOUNDARIES,
    bucketize_dist,
    bucketize_time,
    haversine_km,
)
from .model import (
    CandidateSlate,
    ModelConfig,
    PaddedHistory,
    attention_dump,
    backward,
    forward,
    init_params,
)
from .training import ce_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _linear_scan_bucket(value: float, boundaries) -> int:
    for i, b in enumerate(boundaries):
        if value < b:
            return i
    return len(boundaries)


def _chord_distance_km(lat1, lon1, lat2, lon2) -> float:
    """Independent great-circle route: unit-sphere chord length."""
    p1, l1, p2, l2 = map(math.radians, (lat1, lon1, lat2, lon2))
    v1 = (math.cos(p1) * math.cos(l1), math.cos(p1) * math.sin(l1), math.sin(p1))
    v2 = (math.cos(p2) * math.cos(l2), math.cos(p2) * math.sin(l2), math.sin(p2))
    chord = math.sqrt(sum((a - b) ** 2 for a, b in zip(v1, v2)))
    return 2.0 * 6371.0 * math.asin(min(1.0, chord / 2.0))


def make_test_instance(rng: np.random.Generator, length: int = 6, n_cand: int = 4,
                       n_padded: int = 2, num_pois: int = 12):
    """Random small history/slate pair for structural checks."""
    poi_ids = np.zeros(length, dtype=np.int64)
    timestamps = np.zeros(length, dtype=np.int64)
    raw = np.zeros((length, 2))
    norm = np.zeros((length, 2))
    pad = np.ones(length, dtype=bool)
    t = 1_600_000_000
    for j in range(n_padded, length):
        poi_ids[j] = rng.integers(1, num_pois + 1)
        t += int(rng.integers(600, 90000))
        timestamps[j] = t
        raw[j] = (40.0 + rng.uniform(-0.5, 0.5), -74.0 + rng.uniform(-0.5, 0.5))
        norm[j] = rng.normal(size=2)
        pad[j] = False
    history = PaddedHistory(poi_ids, timestamps, norm, raw, pad, int(timestamps[-1]))
    cand_ids = rng.integers(1, num_pois + 1, size=n_cand).astype(np.int64)
    cand_coords = np.column_stack([40.0 + rng.uniform(-0.5, 0.5, n_cand),
                                   -74.0 + rng.uniform(-0.5, 0.5, n_cand)])
    slate = CandidateSlate(cand_ids, cand_coords)
    return history, slate


def _randomize_params(params: nn.ParamTable, rng: np.random.Generator,
                      scale: float = 0.2) -> None:
    """Perturb every parameter (bucket tables included) so each group
    carries signal during gradient checks; keeps the padding row zero."""
    for name, arr in params.params.items():
        arr += rng.uniform(-scale, scale, size=arr.shape)
    params.params["hist_poi_emb"][0] = 0.0


def full_model_grad_errors(seed: int = 0, corrupt_param: str | None = None,
                           eps: float = 1e-4) -> dict[str, float]:
    """Max relative analytic-vs-finite-difference error per parameter for
    the full model at the small reference configuration.

    eps = 1e-4 keeps central-difference rounding noise (about
    machine_eps/(2 eps) ~ 1e-12 absolute on an O(1) loss) well below the
    1e-4 relative bar even for entries whose true gradient is tiny.
    """
    rng = np.random.default_rng(seed)
    config = ModelConfig(dim=8, num_heads=2, num_blocks=1, hist_len=6, dropout=0.0)
    history, slate = make_test_instance(rng, length=6, n_cand=4)
    params = init_params(config, num_pois=12, seed=seed)
    _randomize_params(params, rng)

    def loss_fn(p: nn.ParamTable) -> float:
        scores, cache = forward(history, slate, p, config, train=False)
        loss, dscores = ce_loss(scores, 0, smoothing=0.1, weight=1.0)
        backward(dscores, cache, p)
        if corrupt_param is not None:
            for name in p.grads:
                if corrupt_param in name:
                    p.grads[name] += 0.1
        return loss

    return nn.grad_check(loss_fn, params, eps=eps)


def run_verification(seed: int = 0, corrupt_param: str | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def add(name: str, passed: bool, detail: str) -> None:
        results.append(CheckResult(name, bool(passed), detail))

    # Primitive gradients.
    for prim_name, err in _primitive_grad_errors(rng).items():
        add(f"grad/{prim_name}", err < 1e-6, f"max rel err {err:.3e}")

    # Full model gradients (1e-4 tolerance at the reference config).
    errors = full_model_grad_errors(seed=seed, corrupt_param=corrupt_param)
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    add("grad/full_model", worst < 1e-4,
        f"worst parameter {worst_name}: rel err {worst:.3e}")

    # Bucketizers against the linear-scan oracle.
    deltas = rng.uniform(0, 4e6, size=10_000)
    ok = all(bucketize_time(x) == _linear_scan_bucket(x, TIME_BUCKET_BOUNDARIES) for x in deltas)
    boundary_ok = all(bucketize_time(b) == i + 1 for i, b in enumerate(TIME_BUCKET_BOUNDARIES))
    add("bucket/time_oracle", ok and boundary_ok, "10000 random + boundary points")
    dists = rng.uniform(0, 30.0, size=10_000)
    ok = all(bucketize_dist(x) == _linear_scan_bucket(x, DIST_BUCKET_BOUNDARIES) for x in dists)
    boundary_ok = all(bucketize_dist(b) == i + 1 for i, b in enumerate(DIST_BUCKET_BOUNDARIES))
    add("bucket/dist_oracle", ok and boundary_ok, "10000 random + boundary points")

    # Haversine against the chord-length route and two frozen distances.
    worst_rel = 0.0
    for _ in range(2000):
        a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        d1 = haversine_km(a[0], a[1], b[0], b[1])
        d2 = _chord_distance_km(a[0], a[1], b[0], b[1])
        worst_rel = max(worst_rel, abs(d1 - d2) / max(1e-12, d2))
    add("geo/haversine_cross_check", worst_rel < 1e-9, f"max rel diff {worst_rel:.3e}")
    one_deg = haversine_km(0, 0, 0, 1)
    quarter = haversine_km(0, 0, 90, 0)
    add("geo/haversine_reference_points",
        abs(one_deg - 111.19492664455873) / 111.19492664455873 < 1e-4
        and abs(quarter - 10007.543398010286) / 10007.543398010286 < 1e-4,
        f"1 deg equator {one_deg:.6f} km, quarter meridian {quarter:.3f} km")

    # Masked softmax basics.
    probs = nn.masked_softmax(rng.normal(size=(64, 9)), rng.random((64, 9)) < 0.4)
    rows = probs.sum(axis=-1)
    all_zero_rows = np.isclose(rows, 0.0)
    sums_ok = np.all(np.abs(rows[~all_zero_rows] - 1.0) < 1e-12)
    all_masked = nn.masked_softmax(np.zeros((1, 4)), np.ones((1, 4), dtype=bool))
    add("mask/softmax_rows", sums_ok and np.all(all_masked == 0.0),
        "row sums 1, all-masked rows zero")

    # Attention mass on padded keys and padding-growth invariance.
    config = ModelConfig(dim=8, num_heads=2, num_blocks=2, hist_len=8, dropout=0.0)
    params = init_params(config, num_pois=12, seed=seed + 1)
    _randomize_params(params, rng)
    history, slate = make_test_instance(rng, length=8, n_cand=5, n_padded=3)
    dumps = attention_dump(history, slate, params, config)
    pad_mass = max(float(d[:, :, history.pad_mask].max()) for d in dumps)
    add("mask/padded_attention_mass", pad_mass < 1e-6, f"max padded mass {pad_mass:.3e}")

    scores, _ = forward(history, slate, params, config)
    grown = _grow_padding(history, extra=4)
    scores_grown, _ = forward(grown, slate, params, config)
    drift = float(np.max(np.abs(scores - scores_grown)))
    add("mask/padding_growth_invariance", drift < 1e-9, f"max score drift {drift:.3e}")

    return results


def _grow_padding(h: PaddedHistory, extra: int) -> PaddedHistory:
    length = len(h.poi_ids) + extra
    def ext(arr):
        out = np.zeros((length,) + arr.shape[1:], dtype=arr.dtype)
        out[extra:] = arr
        return out
    pad = np.ones(length, dtype=bool)
    pad[extra:] = h.pad_mask
    return PaddedHistory(ext(h.poi_ids), ext(h.timestamps), ext(h.norm_coords),
                         ext(h.raw_coords), pad, h.t_last)


def _primitive_grad_errors(rng: np.random.Generator) -> dict[str, float]:
    """Finite-difference checks for each primitive in isolation."""
    errors: dict[str, float] = {}

    def check(name: str, build):
        params, loss_fn = build()
        errs = nn.grad_check(loss_fn, params, eps=1e-6)
        errors[name] = max(errs.values())

    def affine_case():
        params = nn.ParamTable()
        params.add("w", rng.normal(size=(4, 3)))
        params.add("b", rng.normal(size=3))
        x = rng.normal(size=(5, 4))
        target = rng.normal(size=(5, 3))

        def loss_fn(p):
            y = nn.affine(x, p.params["w"], p.params["b"])
            diff = y - target
            dy = 2.0 * diff
            _, dw, db = nn.affine_backward(dy, x, p.params["w"])
            p.grads["w"] += dw
            p.grads["b"] += db
            return float((diff**2).sum())
        return params, loss_fn

    def layer_norm_case():
        params = nn.ParamTable()
        params.add("x", rng.normal(size=(4, 6)))
        params.add("g", 1.0 + 0.1 * rng.normal(size=6))
        params.add("s", 0.1 * rng.normal(size=6))
        w = rng.normal(size=(4, 6))

        def loss_fn(p):
            y, cache = nn.layer_norm(p.params["x"], p.params["g"], p.params["s"])
            dy = w
            dx, dg, ds = nn.layer_norm_backward(dy, cache, p.params["g"])
            p.grads["x"] += dx
            p.grads["g"] += dg
            p.grads["s"] += ds
            return float((y * w).sum())
        return params, loss_fn

    def gelu_case():
        params = nn.ParamTable()
        params.add("x", rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))

        def loss_fn(p):
            y = nn.gelu(p.params["x"])
            p.grads["x"] += nn.gelu_backward(w, p.params["x"])
            return float((y * w).sum())
        return params, loss_fn

    def softmax_case():
        params = nn.ParamTable()
        params.add("z", rng.normal(size=(4, 6)))
        mask = rng.random((4, 6)) < 0.3
        mask[:, 0] = False  # keep every row partially unmasked
        w = rng.normal(size=(4, 6))

        def loss_fn(p):
            probs = nn.masked_softmax(p.params["z"], mask)
            p.grads["z"] += nn.masked_softmax_backward(w, probs)
            return float((probs * w).sum())
        return params, loss_fn

    def hadamard_case():
        params = nn.ParamTable()
        params.add("a", rng.normal(size=(3, 4)))
        params.add("b", rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))

        def loss_fn(p):
            y = nn.hadamard(p.params["a"], p.params["b"])
            da, db = nn.hadamard_backward(w, p.params["a"], p.params["b"])
            p.grads["a"] += da
            p.grads["b"] += db
            return float((y * w).sum())
        return params, loss_fn

    def embed_case():
        params = nn.ParamTable()
        params.add("table", rng.normal(size=(7, 4)))
        idx = rng.integers(0, 7, size=9)
        w = rng.normal(size=(9, 4))

        def loss_fn(p):
            rows = nn.embed_lookup(p.params["table"], idx)
            p.grads["table"] += nn.embed_lookup_backward(w, p.params["table"].shape, idx)
            return float((rows * w).sum())
        return params, loss_fn

    def clamp_case():
        params = nn.ParamTable()
        # keep values away from the clip boundary where the derivative jumps
        params.add("x", rng.uniform(-40, 40, size=(3, 4)))
        w = rng.normal(size=(3, 4))

        def loss_fn(p):
            y = nn.clamp_logits(p.params["x"])
            p.grads["x"] += nn.clamp_logits_backward(w, p.params["x"])
            return float((y * w).sum())
        return params, loss_fn

    check("affine", affine_case)
    check("layer_norm", layer_norm_case)
    check("gelu", gelu_case)
    check("masked_softmax", softmax_case)
    check("hadamard", hadamard_case)
    check("embed_lookup", embed_case)
    check("clamp", clamp_case)
    return errors
