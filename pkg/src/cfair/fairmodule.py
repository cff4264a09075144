"""The fairness module: normalize -> (d, 2d, d) ReLU MLP -> residual add.

``g(x) = n + W2 relu(W1 n + b1) + b2`` with ``n = x / |x|``.  The module also
owns K learnable centroids; its pseudo-scores are ``cos(g(x_i), mu_k)``.
With all MLP weights at zero the module returns ``n`` unchanged, so starting
from the pre-trained centroids reproduces the pre-trained pseudo-scores.

Gradients are written out by hand (no autodiff) and checked against finite
differences in the test suite.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from cfair._io import atomic_write_bytes, atomic_write_json, crc32, read_json
from cfair.centroids import CentroidSet
from cfair.dataset import DatasetError

__all__ = [
    "NumericalError",
    "ModuleParams",
    "AdamState",
    "init_from_pretrained",
    "forward",
    "forward_batch",
    "module_pseudo_score",
    "backward",
    "mlp_backward",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

BLOCK_NAMES = ("w1", "b1", "w2", "b2", "centroids")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericalError(ArithmeticError):
    """Non-finite loss, gradient or degenerate norm during training."""


@dataclass
class ModuleParams:
    w1: np.ndarray  # (2d, d)
    b1: np.ndarray  # (2d,)
    w2: np.ndarray  # (d, 2d)
    b2: np.ndarray  # (d,)
    centroids: np.ndarray  # (K, d)

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def blocks(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCK_NAMES}

    def copy(self) -> "ModuleParams":
        return ModuleParams(*(getattr(self, n).copy() for n in BLOCK_NAMES))

    def zeros_like(self) -> "ModuleParams":
        return ModuleParams(*(np.zeros_like(getattr(self, n)) for n in BLOCK_NAMES))

    def check_shapes(self) -> None:
        d, k = self.d, self.k
        expected = {"w1": (2 * d, d), "b1": (2 * d,), "w2": (d, 2 * d), "b2": (d,), "centroids": (k, d)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")


def init_from_pretrained(cs: CentroidSet) -> ModuleParams:
    """Zero MLP (identity on normalized inputs) and a copy of the pre-trained centroids."""
    d = cs.d
    return ModuleParams(
        w1=np.zeros((2 * d, d)),
        b1=np.zeros(2 * d),
        w2=np.zeros((d, 2 * d)),
        b2=np.zeros(d),
        centroids=np.array(cs.centroids, dtype=np.float64, copy=True),
    )


def forward_batch(p: ModuleParams, xn: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Module output for already-normalized rows ``xn``; also returns the pre-activations."""
    h = xn @ p.w1.T + p.b1
    g = xn + np.maximum(h, 0.0) @ p.w2.T + p.b2
    return g, h


def forward(p: ModuleParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("the fairness module is undefined for a zero input vector")
    g, _ = forward_batch(p, np.atleast_2d(x / norm))
    return g[0] if x.ndim == 1 else g


def module_pseudo_score(p: ModuleParams, x, k: int) -> float:
    """``cos(g(x), mu_k)`` clamped to [-1, 1]."""
    g = forward(p, x)
    mu = p.centroids[k]
    ng, nm = np.linalg.norm(g), np.linalg.norm(mu)
    if ng == 0.0 or nm == 0.0:
        raise NumericalError("degenerate norm in module pseudo-score")
    return min(1.0, max(-1.0, float(g @ mu) / (ng * nm)))


def mlp_backward(p: ModuleParams, xn: np.ndarray, h: np.ndarray, dg: np.ndarray):
    """Gradients of the MLP weights given the output gradient ``dg`` (rows match ``xn``)."""
    r = np.maximum(h, 0.0)
    dw2 = dg.T @ r
    db2 = dg.sum(axis=0)
    dh = (dg @ p.w2) * (h > 0.0)
    dw1 = dh.T @ xn
    db1 = dh.sum(axis=0)
    return dw1, db1, dw2, db2


def backward(p: ModuleParams, x, k: int, residual_grad: float) -> ModuleParams:
    """Gradient of ``residual_grad * cos(g(x), mu_k)`` with respect to all parameters.

    Only row ``k`` of the centroid gradient is nonzero.
    """
    x = np.asarray(x, dtype=np.float64)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        raise ValueError("the fairness module is undefined for a zero input vector")
    xn = (x / nx)[None, :]
    g, h = forward_batch(p, xn)
    u, v = g[0], p.centroids[k]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericalError("degenerate norm in backward pass")
    cos = float(u @ v) / (nu * nv)
    du = residual_grad * (v / (nu * nv) - cos * u / nu**2)
    dv = residual_grad * (u / (nu * nv) - cos * v / nv**2)
    dw1, db1, dw2, db2 = mlp_backward(p, xn, h, du[None, :])
    dmu = np.zeros_like(p.centroids)
    dmu[k] = dv
    return ModuleParams(dw1, db1, dw2, db2, dmu)


@dataclass
class AdamState:
    m: ModuleParams
    v: ModuleParams
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, p: ModuleParams) -> "AdamState":
        return cls(p.zeros_like(), p.zeros_like(), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(p: ModuleParams, state: AdamState, grads: ModuleParams, lr: float):
    """One bias-corrected Adam update of every block; returns new ``(params, state)``."""
    for name, g in grads.blocks().items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
    new_p, new_s = p.copy(), state.copy()
    new_s.t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**new_s.t
    c2 = 1.0 - b2**new_s.t
    for name in BLOCK_NAMES:
        g = getattr(grads, name)
        m = getattr(new_s.m, name)
        v = getattr(new_s.v, name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        getattr(new_p, name)[...] -= step
    return new_p, new_s


def save_checkpoint(p: ModuleParams, path, epoch: int, loss: Optional[float], extra=None) -> None:
    """``checkpoint.bin`` (all blocks, float64 little-endian, in block order) + ``checkpoint.json``."""
    path = Path(path)
    data = b"".join(np.ascontiguousarray(getattr(p, n), dtype="<f8").tobytes() for n in BLOCK_NAMES)
    header = {
        "d": p.d,
        "k": p.k,
        "epoch": int(epoch),
        "loss": None if loss is None else float(loss),
        "layout": [[n, list(getattr(p, n).shape)] for n in BLOCK_NAMES],
        "checksum": crc32(data),
    }
    if extra:
        header.update(extra)
    atomic_write_bytes(path / "checkpoint.bin", data)
    atomic_write_json(path / "checkpoint.json", header)


def load_checkpoint(path) -> Tuple[ModuleParams, dict]:
    path = Path(path)
    try:
        header = read_json(path / "checkpoint.json")
        data = (path / "checkpoint.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file: {exc.filename}") from None
    if crc32(data) != header["checksum"]:
        raise DatasetError("checkpoint.bin: checksum mismatch")
    arrays, offset = [], 0
    for name, shape in header["layout"]:
        size = int(np.prod(shape)) * 8
        if offset + size > len(data):
            raise DatasetError("checkpoint.bin: truncated")
        arrays.append(np.frombuffer(data[offset:offset + size], dtype="<f8").reshape(shape).astype(np.float64))
        offset += size
    if offset != len(data):
        raise DatasetError("checkpoint.bin: trailing bytes")
    p = ModuleParams(*arrays)
    p.check_shapes()
    return p, header
