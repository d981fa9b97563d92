"""Per-sample temperature regressor and the scalar indicators it consumes.

The net maps one normalized scalar to a positive temperature::

    T = softplus(W2 . relu(W1 * x + b1) + b2) + eps,   x = (s - mu) / sigma

with ``3d + 1`` trainable parameters. Forward and backward are vectorized
over samples; a scalar input is treated as a batch of one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from smartcal.errors import DataError

log = logging.getLogger(__name__)

DEFAULT_WIDTH = 16
DEFAULT_EPS = 1e-6
SIGMA_FLOOR = 1e-12
# softplus^-1(1) = log(e - 1): initial temperature of ~1
IDENTITY_BIAS = float(np.log(np.expm1(1.0)))

INDICATORS = ("gap", "entropy", "maxlogit", "confidence", "meandev")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit_gap(z) -> np.ndarray | float:
    """Top-1 minus top-2 logit, per row. Exact ties give 0."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 2:
        raise DataError("logit gap needs at least 2 classes")
    top2 = np.partition(z, -2, axis=-1)[..., -2:]
    g = top2[..., 1] - top2[..., 0]
    return float(g) if g.ndim == 0 else g


def indicator(z, name: str = "gap") -> np.ndarray:
    """Scalar summary of each logit row used as the regressor input."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if name == "gap":
        return np.atleast_1d(logit_gap(z))
    if name == "maxlogit":
        return z.max(axis=1)
    if name == "meandev":
        return z.max(axis=1) - z.mean(axis=1)
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    if name == "confidence":
        return np.exp(logp.max(axis=1))
    if name == "entropy":
        return -np.sum(np.exp(logp) * logp, axis=1)
    raise ValueError(f"unknown indicator {name!r}; choose from {INDICATORS}")


def fit_gap_stats(values) -> tuple[float, float, bool]:
    """Population mean/std; std below 1e-12 is replaced by 1 and flagged."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 1:
        raise DataError("need at least one value")
    mu = float(values.mean())
    sigma = float(values.std())
    if sigma < SIGMA_FLOOR:
        log.warning("indicator has zero spread (std=%g); using sigma=1", sigma)
        return mu, 1.0, True
    return mu, sigma, False


@dataclass
class GradientBuffer:
    dW1: np.ndarray
    db1: np.ndarray
    dW2: np.ndarray
    db2: float = 0.0

    @classmethod
    def zeros(cls, d: int) -> "GradientBuffer":
        return cls(np.zeros(d), np.zeros(d), np.zeros(d), 0.0)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dW1, self.db1, self.dW2, [self.db2]])


@dataclass
class TemperatureNet:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    eps: float = DEFAULT_EPS
    mu_g: float = 0.0
    sigma_g: float = 1.0
    sigma_fallback: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64).reshape(-1)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.W2 = np.asarray(self.W2, dtype=np.float64).reshape(-1)
        self.b2 = float(self.b2)
        d = self.W1.size
        if d < 1 or self.b1.size != d or self.W2.size != d:
            raise ValueError("W1, b1, W2 must all have the same length d >= 1")
        if not self.sigma_g > 0:
            raise ValueError("sigma_g must be positive")

    @property
    def d(self) -> int:
        return self.W1.size

    @property
    def n_params(self) -> int:
        return 3 * self.d + 1

    def params(self) -> np.ndarray:
        return np.concatenate([self.W1, self.b1, self.W2, [self.b2]])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        d = self.d
        if flat.shape != (3 * d + 1,):
            raise ValueError(f"expected {3 * d + 1} parameters, got {flat.shape}")
        self.W1 = flat[:d].copy()
        self.b1 = flat[d : 2 * d].copy()
        self.W2 = flat[2 * d : 3 * d].copy()
        self.b2 = float(flat[3 * d])

    def copy(self) -> "TemperatureNet":
        return TemperatureNet(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2,
            self.eps, self.mu_g, self.sigma_g, self.sigma_fallback,
        )

    def normalize(self, s) -> np.ndarray:
        return (np.asarray(s, dtype=np.float64) - self.mu_g) / self.sigma_g

    def forward(self, s):
        """Temperatures for raw indicator values ``s`` and the activation cache."""
        x = np.atleast_1d(self.normalize(s))
        pre = x[:, None] * self.W1[None, :] + self.b1[None, :]
        hid = np.maximum(pre, 0.0)
        out = hid @ self.W2 + self.b2
        T = softplus(out) + self.eps
        return T, (x, pre, hid, out)

    def __call__(self, s) -> np.ndarray:
        return self.forward(s)[0]

    def backward(self, cache, dL_dT, grads: GradientBuffer) -> GradientBuffer:
        """Accumulate parameter gradients given upstream ``dL/dT`` per sample."""
        x, pre, hid, out = cache
        dL_dT = np.atleast_1d(np.asarray(dL_dT, dtype=np.float64))
        if dL_dT.shape != x.shape:
            raise ValueError(f"dL_dT shape {dL_dT.shape} does not match batch {x.shape}")
        if grads.dW1.shape != self.W1.shape:
            raise ValueError("gradient buffer does not match network width")
        dout = dL_dT * sigmoid(out)
        grads.dW2 += hid.T @ dout
        grads.db2 += float(dout.sum())
        dpre = dout[:, None] * self.W2[None, :] * (pre > 0)
        grads.dW1 += dpre.T @ x
        grads.db1 += dpre.sum(axis=0)
        return grads


def init(d: int = DEFAULT_WIDTH, seed: int = 0, eps: float = DEFAULT_EPS) -> TemperatureNet:
    """Uniform(+-1/sqrt(d)) weights, zero hidden bias, output bias for T ~ 1."""
    if d < 1:
        raise ValueError("d must be >= 1")
    gen = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    W1 = gen.uniform(-bound, bound, size=d)
    W2 = gen.uniform(-bound, bound, size=d)
    return TemperatureNet(W1, np.zeros(d), W2, IDENTITY_BIAS, eps)
