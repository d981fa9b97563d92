"""Hard-binned calibration metrics and proper scoring rules.

All functions take an ``(N, K)`` probability matrix and ``N`` integer labels.
Confidence is the row maximum; the predicted class is the row argmax with
ties broken toward the lowest class index (``np.argmax`` semantics).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from smartcal.errors import DataError

DEFAULT_BINS = 15
NLL_FLOOR = 1e-12


@dataclass(frozen=True)
class BinRow:
    bin_id: int
    lo: float
    hi: float
    count: int
    conf: float
    acc: float


@dataclass
class MetricReport:
    ece: float
    adaece: float
    cece: float
    nll: float
    brier: float
    accuracy: float
    n: int
    n_bins: int
    bins: list[BinRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def softmax_rows(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DataError(f"shape mismatch: probs {probs.shape}, labels {labels.shape}")
    return probs, labels


def confidence_and_correct(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    probs, labels = _check(probs, labels)
    pred = probs.argmax(axis=1)
    return probs[np.arange(len(labels)), pred], (pred == labels).astype(np.float64)


def bin_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    """0-based bin of each confidence for bins ``((b-1)/B, b/B]``; 0 goes to
    the first bin."""
    upper = np.arange(1, n_bins + 1) / n_bins
    idx = np.searchsorted(upper, np.asarray(conf, dtype=np.float64), side="left")
    return np.clip(idx, 0, n_bins - 1)


def binned_error(conf, correct, n_bins: int = DEFAULT_BINS) -> tuple[float, list[BinRow]]:
    """Equal-width ECE of arbitrary (confidence, 0/1 outcome) pairs."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    n = conf.size
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    rows, total = [], 0.0
    for b in range(n_bins):
        c = int(counts[b])
        mc = conf_sum[b] / c if c else 0.0
        ma = acc_sum[b] / c if c else 0.0
        if c:
            total += c / n * abs(mc - ma)
        rows.append(BinRow(b + 1, b / n_bins, (b + 1) / n_bins, c, float(mc), float(ma)))
    return float(total), rows


def ece(probs, labels, n_bins: int = DEFAULT_BINS) -> tuple[float, list[BinRow]]:
    conf, correct = confidence_and_correct(probs, labels)
    return binned_error(conf, correct, n_bins)


def adaptive_bins(n: int, n_bins: int) -> np.ndarray:
    """Sizes of ``n_bins`` equal-mass bins; the first ``n % n_bins`` get one extra."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if n_bins > n:
        raise ValueError(f"n_bins={n_bins} exceeds sample count {n}")
    sizes = np.full(n_bins, n // n_bins, dtype=np.int64)
    sizes[: n % n_bins] += 1
    return sizes


def adaece(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    conf, correct = confidence_and_correct(probs, labels)
    n = conf.size
    sizes = adaptive_bins(n, n_bins)
    order = np.argsort(conf, kind="stable")
    conf, correct = conf[order], correct[order]
    total, start = 0.0, 0
    for size in sizes:
        sl = slice(start, start + size)
        total += size / n * abs(conf[sl].mean() - correct[sl].mean())
        start += size
    return float(total)


def classwise_ece(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    probs, labels = _check(probs, labels)
    k = probs.shape[1]
    total = 0.0
    for j in range(k):
        err, _ = binned_error(probs[:, j], (labels == j).astype(np.float64), n_bins)
        total += err
    return total / k


def nll(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, NLL_FLOOR))))


def brier(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def accuracy(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    return float(np.mean(probs.argmax(axis=1) == labels))


def evaluate(probs, labels, n_bins: int = DEFAULT_BINS) -> MetricReport:
    probs, labels = _check(probs, labels)
    e, rows = ece(probs, labels, n_bins)
    ada = adaece(probs, labels, min(n_bins, len(labels)))
    return MetricReport(
        ece=e,
        adaece=ada,
        cece=classwise_ece(probs, labels, n_bins),
        nll=nll(probs, labels),
        brier=brier(probs, labels),
        accuracy=accuracy(probs, labels),
        n=len(labels),
        n_bins=n_bins,
        bins=rows,
    )


def reliability_csv(rows: list[BinRow]) -> str:
    out = ["bin,lo,hi,count,conf,acc"]
    for r in rows:
        out.append(f"{r.bin_id},{r.lo!r},{r.hi!r},{r.count},{r.conf!r},{r.acc!r}")
    return "\n".join(out) + "\n"
