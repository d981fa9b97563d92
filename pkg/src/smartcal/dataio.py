"""Logit/label datasets: validation, CSV and binary I/O, seeded splits.

CSV layout: one row per sample, ``K`` logit columns followed by an integer
label column. A single optional header line starting with ``#`` is allowed.

Binary layout (all little-endian)::

    b"SMLG"  magic
    u32      format version (1)
    u64      N
    u32      K
    f32[N*K] logits, row-major
    u32[N]   labels
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from smartcal import rng
from smartcal.errors import DataError

MAGIC = b"SMLG"
BIN_VERSION = 1
_HEADER = struct.Struct("<4sIQI")


@dataclass(frozen=True, eq=False)
class LogitSet:
    """N x K raw classifier scores with integer labels in ``[0, K)``."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        labels = np.asarray(self.labels)
        if logits.ndim != 2:
            raise DataError(f"logits must be 2-D, got shape {logits.shape}")
        n, k = logits.shape
        if n < 1:
            raise DataError("empty dataset")
        if k < 2:
            raise DataError(f"need at least 2 classes, got {k}")
        if labels.shape != (n,):
            raise DataError(f"labels shape {labels.shape} does not match {n} rows")
        if labels.dtype.kind not in "iu":
            if labels.dtype.kind == "f" and np.all(labels == np.round(labels)):
                labels = labels.astype(np.int64)
            else:
                raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        bad = np.flatnonzero(~np.isfinite(logits).all(axis=1))
        if bad.size:
            raise DataError(f"non-finite logit at row {bad[0]}")
        bad = np.flatnonzero((labels < 0) | (labels >= k))
        if bad.size:
            raise DataError(f"label out of range at row {bad[0]}")
        logits.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def subset(self, idx) -> "LogitSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LogitSet(self.logits[idx], self.labels[idx])

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other):
        if not isinstance(other, LogitSet):
            return NotImplemented
        return (
            self.logits.shape == other.logits.shape
            and np.array_equal(self.logits, other.logits)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class SplitSpec:
    """Validation size as either a count or a fraction of N, plus shuffle seed."""

    val_count: int | None = None
    val_fraction: float | None = None
    seed: int = 0
    stratified: bool = False

    def resolve(self, n: int) -> int:
        if (self.val_count is None) == (self.val_fraction is None):
            raise DataError("specify exactly one of val_count or val_fraction")
        if self.val_count is not None:
            count = int(self.val_count)
        else:
            if not 0.0 < self.val_fraction < 1.0:
                raise DataError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
            count = int(round(self.val_fraction * n))
        if count < 1:
            raise DataError(f"validation split resolves to {count} rows; need at least 1")
        if count >= n:
            raise DataError(f"val_count {count} must be smaller than N={n}")
        return count


def infer_format(path, fmt: str | None = None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise DataError(f"unknown format {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix == ".bin":
        return "bin"
    raise DataError(f"cannot infer format from {path!r}; use .csv or .bin")


def load_logits(path, fmt: str | None = None) -> LogitSet:
    fmt = infer_format(path, fmt)
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if fmt == "bin":
        return _load_bin(path)
    return _load_csv(path)


def _load_csv(path: Path) -> LogitSet:
    rows, labels = [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        lines = lines[1:]
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        row = len(rows)
        parts = line.split(",")
        if width is None:
            width = len(parts)
            if width < 3:
                raise DataError(f"row {row} has {width} columns; need >= 2 logits plus a label")
        elif len(parts) != width:
            raise DataError(f"malformed row width at row {row}: expected {width}, got {len(parts)}")
        try:
            vals = [float(p) for p in parts[:-1]]
        except ValueError:
            raise DataError(f"unparseable logit at row {row}") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"non-finite logit at row {row}")
        try:
            lab = int(parts[-1])
        except ValueError:
            raise DataError(f"unparseable label at row {row}") from None
        if not 0 <= lab < width - 1:
            raise DataError(f"label out of range at row {row}")
        rows.append(vals)
        labels.append(lab)
    if not rows:
        raise DataError("empty dataset")
    return LogitSet(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64))


def _load_bin(path: Path) -> LogitSet:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DataError("truncated header")
    magic, version, n, k = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}")
    if version != BIN_VERSION:
        raise DataError(f"unsupported binary version {version}")
    if n == 0:
        raise DataError("empty dataset")
    expected = _HEADER.size + 4 * n * k + 4 * n
    if len(data) != expected:
        raise DataError(f"file size {len(data)} does not match header (expected {expected})")
    off = _HEADER.size
    logits = np.frombuffer(data, dtype="<f4", count=n * k, offset=off).reshape(n, k)
    labels = np.frombuffer(data, dtype="<u4", count=n, offset=off + 4 * n * k)
    return LogitSet(logits.astype(np.float64), labels.astype(np.int64))


def _encode(ls: LogitSet, fmt: str, precision: int = 9) -> bytes:
    if fmt == "bin":
        head = _HEADER.pack(MAGIC, BIN_VERSION, ls.n, ls.n_classes)
        body = ls.logits.astype("<f4").tobytes() + ls.labels.astype("<u4").tobytes()
        return head + body
    fmt_num = f"%.{precision}g"
    lines = [f"# {ls.n_classes} logits, label"]
    for row, lab in zip(ls.logits, ls.labels):
        lines.append(",".join(fmt_num % v for v in row) + f",{int(lab)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def atomic_write(path, payload: bytes) -> None:
    """Write via temp file + rename so readers never see a partial file."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_logits(ls: LogitSet, path, fmt: str | None = None) -> None:
    """Persist ``ls``. Binary stores float32, so only float32-representable
    logits round-trip bit-exactly."""
    if ls is None or ls.n == 0:
        raise DataError("empty dataset")
    fmt = infer_format(path, fmt)
    try:
        atomic_write(path, _encode(ls, fmt))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def split(ls: LogitSet, spec: SplitSpec) -> tuple[LogitSet, LogitSet]:
    """Seeded disjoint (val, test) partition. Row order within each side
    follows the original order."""
    n_val = spec.resolve(ls.n)
    if spec.stratified:
        val_idx = _stratified_pick(ls.labels, n_val, spec.seed)
    else:
        val_idx = np.array(rng.permutation(ls.n, spec.seed)[:n_val], dtype=np.int64)
    mask = np.zeros(ls.n, dtype=bool)
    mask[val_idx] = True
    return ls.subset(np.flatnonzero(mask)), ls.subset(np.flatnonzero(~mask))


def _stratified_pick(labels: np.ndarray, n_val: int, seed: int) -> np.ndarray:
    # per-class quotas by largest remainder, ties to lower class id
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * n_val / labels.size
    quota = np.floor(exact).astype(np.int64)
    order = sorted(range(len(classes)), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[: n_val - int(quota.sum())]:
        quota[c] += 1
    gen = rng.Xoshiro256(seed)
    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c).tolist()
        gen.shuffle(members)
        picked.extend(members[:q])
    return np.array(sorted(picked), dtype=np.int64)
