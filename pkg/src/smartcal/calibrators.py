"""SMART and global temperature scaling: training, application, persistence.

Both calibrators divide each logit row by a positive temperature, so the
argmax (and therefore accuracy) never changes. Losses are differentiated
with respect to the per-sample temperature using

    d log softmax(z / T)_k / dT = (sum_j p_j z_j - z_k) / T^2

and then chained through the temperature net.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smartcal import optim, tempnet
from smartcal.dataio import LogitSet, atomic_write
from smartcal.errors import DataError, NumericError
from smartcal.metrics import NLL_FLOOR
from smartcal.softbin import SoftBinConfig, soft_ece_grad

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOSSES = ("softece", "ce", "mse", "brier")
METHODS = ("smart", "ts")
TS_GRID = (0.05, 20.0, 200)
TS_TOL = 1e-4
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ModelFormatError(DataError):
    """Model file is truncated, has the wrong version, or violates the schema."""


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "softece"
    epochs: int = 300
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    seed: int = 0
    width: int = tempnet.DEFAULT_WIDTH
    indicator: str = "gap"
    softbin: SoftBinConfig = field(default_factory=SoftBinConfig)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.indicator not in tempnet.INDICATORS:
            raise ValueError(f"unknown indicator {self.indicator!r}")


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(data, LogitSet):
        return data.logits, data.labels
    z = np.asarray(data, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DataError(f"logits must be (N, K>=2), got {z.shape}")
    return z, None


def scaled_softmax(z: np.ndarray, T: np.ndarray) -> np.ndarray:
    zs = z / T[:, None]
    zs = zs - zs.max(axis=1, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=1, keepdims=True)


def calibration_loss(z, labels, T, loss: str = "softece", softbin: SoftBinConfig = SoftBinConfig()):
    """Loss of ``softmax(z / T)`` and its gradient with respect to each ``T_i``."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (z.shape[0],))
    n = z.shape[0]
    rows = np.arange(n)
    p = scaled_softmax(z, T)
    zbar = np.sum(p * z, axis=1)
    inv_t2 = 1.0 / (T * T)
    pred = z.argmax(axis=1)
    correct = (pred == labels).astype(np.float64)
    conf = p[rows, pred]
    dconf = conf * (zbar - z[rows, pred]) * inv_t2

    if loss == "softece":
        value, gconf = soft_ece_grad(conf, correct, softbin)
        return value, gconf * dconf
    if loss == "mse":
        r = conf - correct
        return float(np.mean(r * r)), 2.0 * r * dconf / n
    if loss == "ce":
        zs = z / T[:, None]
        m = zs.max(axis=1)
        logp_y = zs[rows, labels] - m - np.log(np.exp(zs - m[:, None]).sum(axis=1))
        logp_y = np.maximum(logp_y, math.log(NLL_FLOOR))
        return float(-np.mean(logp_y)), -(zbar - z[rows, labels]) * inv_t2 / n
    if loss == "brier":
        onehot = np.zeros_like(p)
        onehot[rows, labels] = 1.0
        r = p - onehot
        dp = p * (zbar[:, None] - z) * inv_t2[:, None]
        return float(np.mean(np.sum(r * r, axis=1))), 2.0 * np.sum(r * dp, axis=1) / n
    raise ValueError(f"unknown loss {loss!r}")


@dataclass
class CalibratorModel:
    method: str
    T: float | None = None
    net: tempnet.TemperatureNet | None = None
    indicator: str = "gap"
    softbin: SoftBinConfig | None = None
    meta: dict = field(default_factory=dict)
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "ts":
            if self.T is None or not (self.T > 0 and math.isfinite(self.T)):
                raise ValueError(f"ts temperature must be positive and finite, got {self.T}")
        elif self.net is None:
            raise ValueError("smart model needs a temperature net")

    def temperatures(self, data) -> np.ndarray:
        z, _ = _as_arrays(data)
        if self.method == "ts":
            return np.full(z.shape[0], float(self.T))
        return self.net(tempnet.indicator(z, self.indicator))

    def apply(self, data) -> np.ndarray:
        z, _ = _as_arrays(data)
        return scaled_softmax(z, self.temperatures(z))

    def to_dict(self) -> dict:
        doc = {"format_version": FORMAT_VERSION, "method": self.method}
        if self.method == "ts":
            doc["ts"] = {"T": float(self.T)}
        else:
            net = self.net
            doc["smart"] = {
                "d": net.d,
                "W1": net.W1.tolist(),
                "b1": net.b1.tolist(),
                "W2": net.W2.tolist(),
                "b2": net.b2,
                "eps": net.eps,
                "mu_g": net.mu_g,
                "sigma_g": net.sigma_g,
                "indicator": self.indicator,
            }
        if self.softbin is not None:
            doc["softbin"] = self.softbin.to_dict()
        doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc) -> "CalibratorModel":
        if not isinstance(doc, dict):
            raise ModelFormatError("model document must be a JSON object")
        if doc.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format_version {doc.get('format_version')!r}")
        method = doc.get("method")
        softbin = None
        try:
            if "softbin" in doc:
                sb = doc["softbin"]
                softbin = SoftBinConfig(int(sb["n_bins"]), float(sb["alpha"]), float(sb["q"]))
            if method == "ts":
                return cls("ts", T=float(doc["ts"]["T"]), softbin=softbin, meta=doc.get("meta", {}))
            if method == "smart":
                s = doc["smart"]
                net = tempnet.TemperatureNet(
                    s["W1"], s["b1"], s["W2"], s["b2"], float(s["eps"]), float(s["mu_g"]), float(s["sigma_g"])
                )
                if net.d != int(s["d"]):
                    raise ModelFormatError(f"declared d={s['d']} but weights have length {net.d}")
                indicator = s.get("indicator", "gap")
                if indicator not in tempnet.INDICATORS:
                    raise ModelFormatError(f"unknown indicator {indicator!r}")
                return cls("smart", net=net, indicator=indicator, softbin=softbin, meta=doc.get("meta", {}))
        except ModelFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"schema violation: {exc}") from exc
        raise ModelFormatError(f"unknown method {method!r}")


def train_smart(val: LogitSet, cfg: TrainConfig = TrainConfig()) -> CalibratorModel:
    """Fit the per-sample temperature net by full-batch gradient descent.

    The returned net holds the parameters with the lowest training loss seen;
    ``model.history`` has the loss after 0, 1, ..., epochs updates.
    """
    if val.n < 2:
        raise DataError("need at least 2 validation samples")
    z, y = val.logits, val.labels
    s = tempnet.indicator(z, cfg.indicator)
    mu, sigma, fallback = tempnet.fit_gap_stats(s)
    net = tempnet.init(cfg.width, cfg.seed)
    net.mu_g, net.sigma_g, net.sigma_fallback = mu, sigma, fallback
    opt = optim.make(cfg.optimizer, cfg.learning_rate)

    params = net.params()
    best_loss, best_params = math.inf, params
    history = []
    for epoch in range(cfg.epochs + 1):
        T, cache = net.forward(s)
        loss, dT = calibration_loss(z, y, T, cfg.loss, cfg.softbin)
        if not (math.isfinite(loss) and np.all(np.isfinite(dT))):
            raise NumericError(f"non-finite loss or gradient at epoch {epoch} (loss={loss})")
        history.append(loss)
        if loss < best_loss:
            best_loss, best_params = loss, params
        if epoch == cfg.epochs:
            break
        grads = net.backward(cache, dT, tempnet.GradientBuffer.zeros(net.d))
        params = opt.step(params, grads.flat())
        net.set_params(params)

    net.set_params(best_params)
    meta = {
        "seed": cfg.seed,
        "loss": cfg.loss,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "optimizer": cfg.optimizer,
        "n_val": val.n,
        "best_loss": best_loss,
        "sigma_fallback": fallback,
    }
    return CalibratorModel("smart", net=net, indicator=cfg.indicator, softbin=cfg.softbin, meta=meta, history=history)


def train_ts(val: LogitSet, cfg: TrainConfig = TrainConfig()) -> CalibratorModel:
    """Global temperature by log-grid search then golden-section refinement."""
    if val.n < 2:
        raise DataError("need at least 2 validation samples")
    z, y = val.logits, val.labels

    def objective(t: float) -> float:
        return calibration_loss(z, y, t, cfg.loss, cfg.softbin)[0]

    lo, hi, num = TS_GRID
    grid = np.geomspace(lo, hi, num)
    values = [objective(float(t)) for t in grid]
    i = int(np.argmin(values))
    best_t, best_v = float(grid[i]), values[i]

    a, b = float(grid[max(i - 1, 0)]), float(grid[min(i + 1, num - 1)])
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > TS_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = objective(d)
    for t, v in ((c, fc), (d, fd)):
        if v < best_v:
            best_t, best_v = t, v
    if not math.isfinite(best_v):
        raise NumericError("temperature search produced a non-finite loss")
    meta = {"seed": cfg.seed, "loss": cfg.loss, "n_val": val.n, "best_loss": best_v}
    return CalibratorModel("ts", T=best_t, softbin=cfg.softbin, meta=meta)


def apply(model: CalibratorModel, data) -> np.ndarray:
    return model.apply(data)


def save_model(model: CalibratorModel, path) -> None:
    text = json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n"
    atomic_write(path, text.encode("utf-8"))


def load_model(path) -> CalibratorModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid model JSON: {exc}") from exc
    return CalibratorModel.from_dict(doc)
