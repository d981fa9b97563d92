"""Soft-binned ECE: Gaussian-kernel bin membership and its analytic gradient.

Each confidence ``p_i`` belongs to bin ``b`` with weight

    w[i, b] = softmax_b(-alpha * (p_i - c_b)^2),   c_b = (b - 0.5) / B

and the objective is

    SoftECE = ( sum_b m_b / N * |acc_b - conf_b|^q )^(1/q)

with ``m_b = sum_i w[i, b]`` and ``acc_b``, ``conf_b`` the ``w``-weighted means
of correctness and confidence within bin ``b``. Since
``m_b * |acc_b - conf_b| = |A_b - C_b|`` for the unnormalized weighted sums
``A_b``, ``C_b``, the q=1 objective is ``sum_b |A_b - C_b| / N``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MASS_EPS = 1e-12


@dataclass(frozen=True)
class SoftBinConfig:
    n_bins: int = 15
    alpha: float = 50.0
    q: float = 1.0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.q >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) / self.n_bins

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins, "alpha": self.alpha, "q": self.q}


@dataclass
class SoftBinState:
    weights: np.ndarray  # (N, B)
    soft_acc: np.ndarray  # (B,)
    soft_conf: np.ndarray  # (B,)
    bin_mass: np.ndarray  # (B,)
    empty: np.ndarray  # (B,) bool, mass below MASS_EPS


def membership(conf, cfg: SoftBinConfig) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    u = -cfg.alpha * (conf[:, None] - cfg.centers[None, :]) ** 2
    u -= u.max(axis=1, keepdims=True)
    w = np.exp(u)
    return w / w.sum(axis=1, keepdims=True)


def soft_accuracy(weights, correct) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin weighted accuracy and a mask of (near-)empty bins, which get 0."""
    weights = np.asarray(weights, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    mass = weights.sum(axis=0)
    empty = mass < MASS_EPS
    num = correct @ weights
    acc = np.divide(num, mass, out=np.zeros_like(mass), where=~empty)
    return acc, empty


def soft_state(conf, correct, cfg: SoftBinConfig) -> SoftBinState:
    conf = np.asarray(conf, dtype=np.float64)
    w = membership(conf, cfg)
    acc, empty = soft_accuracy(w, correct)
    mass = w.sum(axis=0)
    mconf = np.divide(conf @ w, mass, out=np.zeros_like(mass), where=~empty)
    return SoftBinState(w, acc, mconf, mass, empty)


def soft_ece(conf, correct, cfg: SoftBinConfig = SoftBinConfig()) -> float:
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    n = conf.size
    w = membership(conf, cfg)
    mass = w.sum(axis=0)
    live = mass >= MASS_EPS
    if not live.all():
        log.debug("soft-ECE: %d empty bins at alpha=%g", int((~live).sum()), cfg.alpha)
    diff = np.abs((correct - conf) @ w)[live]
    if cfg.q == 1:
        return float(diff.sum() / n)
    total = np.sum(diff**cfg.q * mass[live] ** (1 - cfg.q)) / n
    return float(total ** (1.0 / cfg.q))


def soft_ece_grad(conf, correct, cfg: SoftBinConfig = SoftBinConfig()) -> tuple[float, np.ndarray]:
    """SoftECE and its gradient with respect to every confidence.

    Only ``q`` in {1, 2} is supported; the |.| subgradient at 0 is 0, and for
    q=2 the gradient at SoftECE == 0 is reported as 0.
    """
    if cfg.q not in (1, 2):
        raise ValueError(f"gradient only implemented for q in (1, 2), got {cfg.q}")
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    n = conf.size
    centers = cfg.centers

    w = membership(conf, cfg)
    du = -2.0 * cfg.alpha * (conf[:, None] - centers[None, :])
    dw = w * (du - np.sum(w * du, axis=1, keepdims=True))  # d w[i,b] / d conf_i

    mass = w.sum(axis=0)
    live = mass >= MASS_EPS
    gap = (correct - conf) @ w  # A_b - C_b
    gap = np.where(live, gap, 0.0)
    # d(A_b - C_b)/d conf_i = (correct_i - conf_i) * dw[i,b] - w[i,b]
    dgap = (correct - conf)[:, None] * dw - w

    if cfg.q == 1:
        value = float(np.abs(gap).sum() / n)
        grad = dgap @ np.sign(gap) / n
        return value, grad

    safe_mass = np.where(live, mass, 1.0)
    total = float(np.sum(gap**2 / safe_mass) / n)
    if total <= 0.0:
        return 0.0, np.zeros(n)
    value = total**0.5
    coef_gap = np.where(live, 2.0 * gap / safe_mass, 0.0)
    coef_mass = np.where(live, -(gap**2) / safe_mass**2, 0.0)
    dtotal = (dgap @ coef_gap + dw @ coef_mass) / n
    return value, dtotal / (2.0 * value)
