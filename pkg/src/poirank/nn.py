"""Dense numeric substrate for the ranker.

Tensors are plain float64 numpy arrays (row-major). This module provides
exactly the differentiable primitives the model needs, each with a
hand-written analytic backward, plus a central-finite-difference oracle
(`grad_check`) that verifies any scalar-valued forward against those
backwards. There is deliberately no general autodiff graph.

Backward convention: every `*_backward` takes the upstream gradient and
whatever forward intermediates it needs, and returns gradients in the
same order as the forward inputs.
"""

from __future__ import annotations

import struct

import numpy as np

MASK_NEG_CONST = 1e4
LOGIT_CLAMP_BOUND = 50.0
LAYER_NORM_EPS = 1e-12

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


class NumericError(RuntimeError):
    """Non-finite value produced where the contract requires finite output."""


class ContractViolation(ValueError):
    """Caller broke a shape or range precondition."""


class ParamTable:
    """Named float64 parameters with same-shaped gradient buffers and
    first/second moment accumulators for the optimizer."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def add(self, name: str, values: np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ParamTable":
        out = ParamTable()
        for name, arr in self.params.items():
            out.add(name, arr.copy())
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        return out

    def num_values(self) -> int:
        return sum(int(p.size) for p in self.params.values())


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x @ w + b with x of shape [..., in] and w of shape [in, out]."""
    return x @ w + b


def affine_backward(dy, x, w):
    lead = x.reshape(-1, x.shape[-1])
    dlead = dy.reshape(-1, dy.shape[-1])
    dx = (dlead @ w.T).reshape(x.shape)
    dw = lead.T @ dlead
    db = dlead.sum(axis=0)
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    inner = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(dy, x):
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner)


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray):
    """Normalize the last axis to zero mean / unit variance, then scale-shift.

    Returns (y, cache) where cache feeds layer_norm_backward.
    """
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = xc * inv
    y = xhat * gain + shift
    return y, (xhat, inv)


def layer_norm_backward(dy, cache, gain):
    xhat, inv = cache
    n = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, n).sum(axis=0)
    dshift = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dshift


def masked_softmax(logits: np.ndarray, mask: np.ndarray,
                   neg_const: float = MASK_NEG_CONST) -> np.ndarray:
    """Softmax over the last axis with masked entries pushed down by
    `neg_const`. Rows that are entirely masked come back all-zero.

    `mask` is boolean (True = masked) and must broadcast to `logits`.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if mask.shape != logits.shape:
        raise ContractViolation(f"mask shape {mask.shape} != logits shape {logits.shape}")
    z = logits - neg_const * mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    all_masked = mask.all(axis=-1)
    if all_masked.any():
        probs = probs.copy()
        probs[all_masked] = 0.0
    return probs


def masked_softmax_backward(dy, probs):
    inner = (dy * probs).sum(axis=-1, keepdims=True)
    return probs * (dy - inner)


def clamp_logits(x: np.ndarray, bound: float = LOGIT_CLAMP_BOUND) -> np.ndarray:
    """Clip entries to [-bound, bound]; backward is zero outside bounds."""
    return np.clip(x, -bound, bound)


def clamp_logits_backward(dy, x, bound: float = LOGIT_CLAMP_BOUND):
    return dy * ((x > -bound) & (x < bound))


def dropout(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout. Identity when train is False or rate == 0.

    Returns (y, keep_mask); keep_mask is None on the identity path.
    """
    if not train or rate <= 0.0:
        return x, None
    if rng is None:
        raise ContractViolation("dropout in training mode requires an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep_mask):
    if keep_mask is None:
        return dy
    return dy * keep_mask


def embed_lookup(table: np.ndarray, indices: np.ndarray) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractViolation(
            f"embedding index out of range [0, {table.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}")
    return table[idx]


def embed_lookup_backward(dy, table_shape, indices):
    dtable = np.zeros(table_shape, dtype=np.float64)
    idx = np.asarray(indices).reshape(-1)
    np.add.at(dtable, idx, dy.reshape(len(idx), -1))
    return dtable


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a * b


def hadamard_backward(dy, a, b):
    return dy * b, dy * a


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(forward, params: ParamTable, eps: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients against central finite differences.

    `forward(params)` must be deterministic (dropout off), return a scalar
    loss, and leave the analytic gradients in `params.grads`. Returns the
    max relative error per parameter name, where relative error is
    |a - n| / max(1e-8, |a| + |n|).
    """
    params.zero_grads()
    base = float(forward(params))
    if not np.isfinite(base):
        raise NumericError(f"grad_check aborted: non-finite loss {base!r}")
    analytic = {name: g.copy() for name, g in params.grads.items()}

    errors: dict[str, float] = {}
    for name, values in params.params.items():
        flat = values.reshape(-1)
        aflat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(forward(params))
            flat[i] = orig - eps
            f_minus = float(forward(params))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"grad_check aborted: non-finite loss perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = aflat[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
        errors[name] = worst
    params.zero_grads()
    forward(params)  # restore grads for the unperturbed point
    return errors


# ---------------------------------------------------------------------------
# Serialization: name-length-prefixed entries, shape, little-endian float64
# ---------------------------------------------------------------------------

_MAGIC = b"PRNK"
_VERSION = 1


def serialize_params(table: ParamTable) -> bytes:
    """Binary layout: magic, version:u32, count:u32, then per entry
    name_len:u32, name:utf8, ndim:u32, dims:u32*, raw little-endian f64."""
    out = [_MAGIC, struct.pack("<II", _VERSION, len(table.params))]
    for name, arr in table.params.items():
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def deserialize_params(blob: bytes) -> ParamTable:
    if blob[:4] != _MAGIC:
        raise ValueError("not a parameter blob (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported parameter blob version {version}")
    offset = 12
    table = ParamTable()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        table.add(name, arr.astype(np.float64).copy())
    return table
