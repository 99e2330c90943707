"""Numpy reference of the dual-encoder visual projection.

Patch embeddings of two 768-wide encoders are stacked row-wise, every five
adjacent rows are folded into one 3840-wide token, and a two-layer MLP with an
exact (erf) GELU maps the tokens into the language-model width. Everything
runs in float64.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import erf

from .errors import DomainError, ShapeError

ENCODER_DIM = 768
GROUP_SIZE = 5
GROUPED_DIM = GROUP_SIZE * ENCODER_DIM
DEFAULT_LM_DIM = 4096
INIT_SCALE = 0.02

SOURCES = ("encoder-1", "encoder-2", "fused")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    values: np.ndarray
    source: str = "fused"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != ENCODER_DIM:
            raise ShapeError(f"embeddings must be P x {ENCODER_DIM}, got {values.shape}")
        if self.source not in SOURCES:
            raise DomainError(f"unknown embedding source {self.source!r}")
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return self.values.shape[0]


ArrayLike = Union[np.ndarray, EmbeddingMatrix]


def _values(z: ArrayLike) -> np.ndarray:
    if isinstance(z, EmbeddingMatrix):
        return z.values
    return np.asarray(z, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ProjectionWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.b1.ndim != 1 or self.b2.ndim != 1:
            raise ShapeError("w1, w2 must be matrices and b1, b2 vectors")
        if self.b1.shape[0] != self.w1.shape[1] or self.w2.shape[0] != self.w1.shape[1]:
            raise ShapeError(
                f"hidden widths disagree: w1 {self.w1.shape}, b1 {self.b1.shape}, w2 {self.w2.shape}"
            )
        if self.b2.shape[0] != self.w2.shape[1]:
            raise ShapeError(f"output widths disagree: w2 {self.w2.shape}, b2 {self.b2.shape}")
        if not all(np.isfinite(a).all() for a in (self.w1, self.b1, self.w2, self.b2)):
            raise DomainError("projection weights contain non-finite entries")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def random(cls, out_dim: int = DEFAULT_LM_DIM, hidden: Optional[int] = None,
               in_dim: int = GROUPED_DIM, seed: int = 0) -> "ProjectionWeights":
        """Seeded uniform(-0.02, 0.02) initialisation; ``hidden`` defaults to ``out_dim``."""
        hidden = out_dim if hidden is None else hidden
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        return cls(u(in_dim, hidden), u(hidden), u(hidden, out_dim), u(out_dim))


def concat_embeddings(z1: ArrayLike, z2: ArrayLike) -> np.ndarray:
    a, b = _values(z1), _values(z2)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != ENCODER_DIM or b.shape[1] != ENCODER_DIM:
        raise ShapeError(f"both inputs must be P x {ENCODER_DIM}, got {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=0)


def group_tokens(z: ArrayLike, pad: bool = False) -> np.ndarray:
    """Fold every five consecutive rows into one row of width 5*dim.

    Row ``i`` of the result is ``z[5i] | z[5i+1] | ... | z[5i+4]``. A row count
    not divisible by five raises ``ShapeError`` unless ``pad`` appends zero
    rows.
    """
    z = _values(z)
    if z.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {z.shape}")
    rows, dim = z.shape
    remainder = rows % GROUP_SIZE
    if remainder:
        if not pad:
            raise ShapeError(f"P={rows} is not divisible by {GROUP_SIZE}")
        z = np.vstack([z, np.zeros((GROUP_SIZE - remainder, dim))])
    return z.reshape(-1, GROUP_SIZE * dim)


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def identity(x):
    return np.asarray(x, dtype=np.float64)


def identity_grad(x):
    return np.ones_like(np.asarray(x, dtype=np.float64))


ACTIVATIONS = {"gelu": (gelu, gelu_grad), "identity": (identity, identity_grad)}


def project(q: np.ndarray, w: ProjectionWeights, activation: Callable = gelu) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != w.in_dim:
        raise ShapeError(f"tokens must be M x {w.in_dim}, got {q.shape}")
    return activation(q @ w.w1 + w.b1) @ w.w2 + w.b2


def fused_forward(z1: ArrayLike, z2: ArrayLike, w: ProjectionWeights, pad: bool = False) -> np.ndarray:
    return project(group_tokens(concat_embeddings(z1, z2), pad=pad), w)


def patch_count(input_size: int, patch_size: int) -> int:
    if input_size % patch_size:
        raise DomainError(f"{input_size} is not a multiple of patch size {patch_size}")
    return (input_size // patch_size) ** 2


# ------------------------------------------------------------- gradient check


def _jvp(q, w, dq, dw, act, act_grad):
    w1, b1, w2, b2 = w
    d_w1, d_b1, d_w2, d_b2 = dw
    pre = q @ w1 + b1
    d_pre = dq @ w1 + q @ d_w1 + d_b1
    hidden = act(pre)
    d_hidden = act_grad(pre) * d_pre
    return d_hidden @ w2 + hidden @ d_w2 + d_b2


def _forward(q, w, act):
    w1, b1, w2, b2 = w
    return act(q @ w1 + b1) @ w2 + b2


def check_gradient(w: ProjectionWeights, q: np.ndarray, epsilon: float = 1e-5,
                   activation: str = "gelu", directions: int = 2, seed: int = 0) -> float:
    """Largest relative error between analytic JVPs and central differences.

    For every parameter block (tokens, w1, b1, w2, b2) ``directions`` random
    gaussian tangents are drawn; along each the analytic directional derivative
    (with gelu'(x) = Phi(x) + x*phi(x)) is compared to
    ``(f(theta + eps*t) - f(theta - eps*t)) / (2*eps)`` in the max norm.
    """
    if not 0 < epsilon <= 1e-2:
        raise DomainError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    act, act_grad = ACTIVATIONS[activation]
    q = np.asarray(q, dtype=np.float64)
    params = [q, w.w1, w.b1, w.w2, w.b2]
    rng = np.random.default_rng(seed)

    worst = 0.0
    for block in range(len(params)):
        for _ in range(directions):
            tangents = [np.zeros_like(p) for p in params]
            direction = rng.standard_normal(params[block].shape)
            if block in (1, 3):
                # weight tangents scaled by 1/sqrt(fan_in) keep the induced
                # activation change O(1), balancing truncation against rounding
                direction /= math.sqrt(params[block].shape[0])
            tangents[block] = direction
            analytic = _jvp(q, params[1:], tangents[0], tangents[1:], act, act_grad)
            plus = [p + epsilon * t for p, t in zip(params, tangents)]
            minus = [p - epsilon * t for p, t in zip(params, tangents)]
            numeric = (_forward(plus[0], plus[1:], act) - _forward(minus[0], minus[1:], act)) / (2 * epsilon)
            scale = max(np.abs(analytic).max(), np.abs(numeric).max(), np.finfo(float).tiny)
            worst = max(worst, float(np.abs(analytic - numeric).max() / scale))
    return worst


def gradient_report(seeds: int = 100, epsilon: float = 1e-5, activation: str = "gelu",
                    max_tokens: int = 4, max_hidden: int = 8, max_out: int = 4) -> dict:
    """Run ``check_gradient`` on small seeded instances with 3840-wide tokens."""
    errors = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, max_tokens + 1))
        h = int(rng.integers(1, max_hidden + 1))
        d = int(rng.integers(1, max_out + 1))
        w = ProjectionWeights.random(out_dim=d, hidden=h, seed=seed)
        q = rng.standard_normal((m, GROUPED_DIM))
        errors.append(check_gradient(w, q, epsilon=epsilon, activation=activation, seed=seed))
    return {"instances": seeds, "epsilon": epsilon, "activation": activation,
            "max_relative_error": max(errors) if errors else 0.0}


# ------------------------------------------------------------- binary format

_HEADER = struct.Struct("<qq")


def save_matrix(path: str, array: np.ndarray) -> None:
    """Write ``rows, cols`` as little-endian int64 followed by float64 data."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"only matrices and vectors can be stored, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def load_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ShapeError(f"{path}: missing shape header")
        rows, cols = _HEADER.unpack(head)
        if rows < 0 or cols < 0:
            raise ShapeError(f"{path}: negative shape {rows}x{cols}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ShapeError(f"{path}: header says {rows}x{cols}, found {data.size} values")
    return data.reshape(rows, cols).astype(np.float64)


def save_weights(directory: str, w: ProjectionWeights) -> None:
    os.makedirs(directory, exist_ok=True)
    for name in ("w1", "b1", "w2", "b2"):
        save_matrix(os.path.join(directory, f"{name}.bin"), getattr(w, name))


def load_weights(directory: str) -> ProjectionWeights:
    arrays = {name: load_matrix(os.path.join(directory, f"{name}.bin")) for name in ("w1", "b1", "w2", "b2")}
    return ProjectionWeights(arrays["w1"], arrays["b1"].ravel(), arrays["w2"], arrays["b2"].ravel())
