"""Two-layer graph convolutional network with exact analytic backprop.

Forward map, for normalized adjacency A, features X and parameters
(W1, b1, W2, b2):

    H_pre = A X W1 + b1
    H     = relu(H_pre)
    Z     = A H W2 + b2
    P     = row-softmax(Z)

Everything is float64 and deterministic. The ReLU subgradient at exactly
zero is fixed to zero.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graphs import EmbeddingMatrix, NormalizedAdjacency, load_embeddings, save_embeddings


@dataclass
class GcnParams:
    """Weights and biases; also used as the container for their gradients."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self):
        d, h = self.w1.shape
        c = self.w2.shape[1]
        return d, h, c

    @property
    def n_params(self) -> int:
        d, h, c = self.dims
        return d * h + h + h * c + c

    def tensors(self):
        return (self.w1, self.b1, self.w2, self.b2)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def from_vector(self, vec: np.ndarray) -> "GcnParams":
        d, h, c = self.dims
        shapes = [(d, h), (h,), (h, c), (c,)]
        parts, pos = [], 0
        for shape in shapes:
            size = int(np.prod(shape))
            parts.append(np.asarray(vec[pos:pos + size], dtype=np.float64).reshape(shape).copy())
            pos += size
        return GcnParams(*parts)

    def copy(self) -> "GcnParams":
        return GcnParams(*(t.copy() for t in self.tensors()))


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass (ax/ah are cached products)."""

    h_pre: np.ndarray
    h: np.ndarray
    z: np.ndarray
    p: np.ndarray
    ax: np.ndarray = field(repr=False, default=None)
    ah: np.ndarray = field(repr=False, default=None)


def init_params(d: int, h: int, c: int, seed: int) -> GcnParams:
    """Glorot-uniform weights, zero biases, reproducible by seed."""
    if min(d, h, c) < 1:
        raise ValueError("layer sizes must be >= 1")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d + h))
    lim2 = np.sqrt(6.0 / (h + c))
    return GcnParams(
        w1=rng.uniform(-lim1, lim1, size=(d, h)),
        b1=np.zeros(h),
        w2=rng.uniform(-lim2, lim2, size=(h, c)),
        b2=np.zeros(c),
    )


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_row(z: np.ndarray) -> np.ndarray:
    """Stable softmax of a single score vector."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def forward(params: GcnParams, a_hat: NormalizedAdjacency, x, ax: np.ndarray = None) -> ForwardTrace:
    """Run the two-layer convolution; `ax` may carry a precomputed A @ X."""
    x = x.data if isinstance(x, EmbeddingMatrix) else np.asarray(x, dtype=np.float64)
    d, h, c = params.dims
    if x.shape[1] != d:
        raise ValueError(f"features have {x.shape[1]} columns, params expect {d}")
    if x.shape[0] != a_hat.n:
        raise ValueError("feature rows do not match the adjacency")
    if ax is None:
        ax = a_hat @ x
    h_pre = ax @ params.w1 + params.b1
    hidden = np.maximum(h_pre, 0.0)
    ah = a_hat @ hidden
    z = ah @ params.w2 + params.b2
    return ForwardTrace(h_pre=h_pre, h=hidden, z=z, p=softmax_rows(z), ax=ax, ah=ah)


def backward(
    params: GcnParams,
    a_hat: NormalizedAdjacency,
    x,
    trace: ForwardTrace,
    d_z: np.ndarray,
) -> GcnParams:
    """Exact gradients of any scalar loss whose logit gradient is `d_z`.

    Uses the symmetry of the adjacency operator (A^T = A). Returns a
    GcnParams-shaped container of gradients.
    """
    if d_z.shape != trace.z.shape:
        raise ValueError(f"upstream gradient shape {d_z.shape} != logits {trace.z.shape}")
    ax = trace.ax
    if ax is None:
        x = x.data if isinstance(x, EmbeddingMatrix) else np.asarray(x, dtype=np.float64)
        ax = a_hat @ x
    ah = trace.ah if trace.ah is not None else a_hat @ trace.h
    d_w2 = ah.T @ d_z
    d_b2 = d_z.sum(axis=0)
    a_dz = a_hat @ d_z
    d_hidden = (a_dz @ params.w2.T) * (trace.h_pre > 0.0)
    d_w1 = ax.T @ d_hidden
    d_b1 = d_hidden.sum(axis=0)
    return GcnParams(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2)


def save_params(out_dir, params: GcnParams, seed: int = None) -> None:
    """Write one text matrix per tensor plus a manifest of shapes."""
    os.makedirs(out_dir, exist_ok=True)
    names = ["w1", "b1", "w2", "b2"]
    manifest = {"tensors": {}, "seed": seed}
    for name, tensor in zip(names, params.tensors()):
        mat = tensor if tensor.ndim == 2 else tensor[None, :]
        save_embeddings(os.path.join(out_dir, f"{name}.txt"), EmbeddingMatrix(mat))
        manifest["tensors"][name] = list(tensor.shape)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_params(out_dir) -> GcnParams:
    with open(os.path.join(out_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    loaded = {}
    for name, shape in manifest["tensors"].items():
        mat = load_embeddings(os.path.join(out_dir, f"{name}.txt")).data
        loaded[name] = mat.reshape(shape)
    return GcnParams(**loaded)
