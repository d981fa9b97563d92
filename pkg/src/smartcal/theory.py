"""Temperature needed to hit a target confidence, its logit-gap bounds, and a
synthetic logit generator with gap-dependent miscalibration.

For a logit vector ``z`` with maximum at ``M`` the confidence after scaling is

    conf(T) = 1 / (1 + sum_{j != M} exp((z_j - z_M) / T))

which strictly decreases in ``T`` when the maximum is unique. Writing
``S = 1/p - 1`` and ``g`` for the top-2 gap, every solution of ``conf(T) = p``
with ``p > 0.5`` satisfies

    -g / log(S / (K - 1))  <=  T  <  -g / log(S)

with equality on the left iff all non-maximal logits are equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from smartcal import rng
from smartcal.dataio import LogitSet
from smartcal.tempnet import logit_gap

BRACKET = (1e-6, 1e6)
CONF_TOL = 1e-10
MAX_ITER = 200


class InfeasibleTarget(ValueError):
    """No finite positive temperature reaches the requested confidence."""


def confidence_at(z, T: float) -> float:
    z = np.asarray(z, dtype=np.float64)
    m = int(np.argmax(z))
    rest = np.delete(z, m) - z[m]
    return 1.0 / (1.0 + float(np.sum(np.exp(rest / T))))


def solve_temperature(z, target_p: float) -> float:
    """Bisection (on log T) for ``softmax(z / T)_max == target_p``."""
    z = np.asarray(z, dtype=np.float64)
    k = z.size
    if k < 2:
        raise ValueError("need at least 2 logits")
    if not 1.0 / k < target_p < 1.0:
        raise InfeasibleTarget(f"target confidence {target_p} outside (1/K, 1) for K={k}")
    top = np.sort(z)[-2:]
    if top[1] == top[0]:
        raise InfeasibleTarget("tied maximum: confidence cannot exceed 1/2")

    lo, hi = BRACKET
    for _ in range(MAX_ITER):
        if confidence_at(z, lo) > target_p:
            break
        lo /= 2.0
    else:
        raise InfeasibleTarget(f"could not bracket target {target_p} from below")
    for _ in range(MAX_ITER):
        if confidence_at(z, hi) < target_p:
            break
        hi *= 2.0
    else:
        raise InfeasibleTarget(f"could not bracket target {target_p} from above")

    for _ in range(MAX_ITER):
        mid = math.sqrt(lo * hi)
        c = confidence_at(z, mid)
        if c > target_p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    T = math.sqrt(lo * hi)
    if abs(confidence_at(z, T) - target_p) >= CONF_TOL:
        raise InfeasibleTarget(f"bisection stalled at T={T}")
    return T


def uniform_gap_temperature(delta: float, k: int, target_p: float) -> float:
    """Closed form when every non-maximal logit sits ``delta`` below the max."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 1.0 / k < target_p < 1.0:
        raise InfeasibleTarget(f"target confidence {target_p} outside (1/K, 1) for K={k}")
    s = 1.0 / target_p - 1.0
    return -delta / math.log(s / (k - 1))


def temperature_bounds(g: float, k: int, target_p: float) -> tuple[float, float]:
    s = 1.0 / target_p - 1.0
    return -g / math.log(s / (k - 1)), -g / math.log(s)


@dataclass(frozen=True)
class BoundCheckRecord:
    g: float
    p: float
    K: int
    T: float
    lower: float
    upper: float
    ok: bool

    def csv_row(self) -> str:
        return f"{self.g!r},{self.p!r},{self.K},{self.T!r},{self.lower!r},{self.upper!r},{str(self.ok).lower()}"


BOUNDS_HEADER = "g,p,K,T,lower,upper,ok"


def check_bounds(z, target_p: float, rtol: float = 1e-8) -> BoundCheckRecord:
    """Solve for T and test it against the gap bounds.

    ``rtol`` absorbs solver rounding on both sides: the lower bound is attained
    when the non-maximal logits tie, and T collapses onto the upper bound in
    floating point once every logit below the runner-up underflows.
    """
    if not target_p > 0.5:
        raise ValueError("bounds are only meaningful for target confidence > 0.5")
    z = np.asarray(z, dtype=np.float64)
    k = z.size
    g = logit_gap(z)
    T = solve_temperature(z, target_p)
    lower, upper = temperature_bounds(g, k, target_p)
    ok = lower * (1.0 - rtol) <= T < upper * (1.0 + rtol)
    return BoundCheckRecord(float(g), float(target_p), k, T, lower, upper, bool(ok))


def bounds_trials(k: int, target_p: float, trials: int, seed: int, scale: float = 1.0) -> list[BoundCheckRecord]:
    """Bound checks on i.i.d. Gaussian logit vectors, one child seed per trial."""
    records = []
    for t in range(trials):
        gen = np.random.default_rng(rng.derive_seed(seed, t))
        records.append(check_bounds(gen.normal(0.0, scale, size=k), target_p))
    return records


# -- synthetic data ---------------------------------------------------------

DISTORTIONS = ("identity", "constant", "affine", "logistic")
AFFINE_FLOOR = 0.05


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian logits with labels drawn from their own softmax (calibrated),
    then each row is multiplied by a gap-dependent distortion temperature.

    Multiplying by ``t`` means recalibrating with temperature ``t`` undoes it.
    The distortion is a function of the clean row's logit gap.
    """

    n: int = 10_000
    k: int = 10
    seed: int = 0
    scale: float = 8.0
    distortion: str = "identity"
    t_const: float = 1.0
    affine_a: float = 1.0
    affine_b: float = 0.0
    lo: float = 0.6
    hi: float = 1.8
    mid: float = 1.0
    # negative width: over-confident at small gaps, under-confident at large ones
    width: float = -0.5

    def __post_init__(self):
        if self.n < 1 or self.k < 2:
            raise ValueError("need n >= 1 and k >= 2")
        if self.distortion not in DISTORTIONS:
            raise ValueError(f"unknown distortion {self.distortion!r}; choose from {DISTORTIONS}")
        if self.distortion == "constant" and not self.t_const > 0:
            raise ValueError("constant distortion temperature must be positive")
        if self.distortion == "logistic" and not (self.lo > 0 and self.hi > 0 and self.width != 0):
            raise ValueError("logistic distortion needs lo, hi > 0 and a nonzero width")

    def distortion_temperature(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        if self.distortion == "identity":
            t = np.ones_like(g)
        elif self.distortion == "constant":
            t = np.full_like(g, self.t_const)
        elif self.distortion == "affine":
            t = np.maximum(self.affine_a + self.affine_b * g, AFFINE_FLOOR)
        else:
            t = self.lo + (self.hi - self.lo) / (1.0 + np.exp(-(g - self.mid) / self.width))
        if not np.all(t > 0):
            raise ValueError("distortion temperature must be positive")
        return t


def synthesize(cfg: SynthConfig) -> tuple[LogitSet, LogitSet]:
    gen = np.random.default_rng(cfg.seed)
    # float32-representable so the binary format round-trips exactly
    clean = gen.normal(0.0, cfg.scale, size=(cfg.n, cfg.k)).astype(np.float32).astype(np.float64)
    z = clean - clean.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    u = gen.random(cfg.n)
    labels = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), cfg.k - 1)
    if cfg.distortion == "identity":
        distorted = clean
    else:
        t = cfg.distortion_temperature(logit_gap(clean))
        distorted = (clean * t[:, None]).astype(np.float32).astype(np.float64)
    return LogitSet(clean, labels), LogitSet(distorted, labels)
