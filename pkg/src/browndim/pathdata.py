"""Regularly sampled multivariate paths: increments, thinning and CSV I/O.

CSV layout is ``time,x1,...,xd`` with one observation per line. Times must
start at 0 and be equally spaced; after loading they are implicit
(row ``i`` sits at ``i * T / n``).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPACING_TOL = 1e-6
FLOAT_FMT = "%.17g"


class PathFormatError(ValueError):
    """Malformed path CSV. ``line`` is the 1-based line number, if known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class SamplePath:
    """Observations ``X_{iT/n}``, ``i = 0..n``, stored as an ``(n+1, d)`` array."""

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError(f"values must be (n+1, d), got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValueError("need >= 2 observations")
        if not np.all(np.isfinite(v)):
            raise ValueError("path has non-finite entries")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "T", float(self.T))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * (self.T / self.n)

    def scaled(self, factor: float) -> "SamplePath":
        """The path multiplied by a constant."""
        return SamplePath(self.values * factor, self.T)


def increments(path: SamplePath) -> np.ndarray:
    """``(n, d)`` array whose row ``i-1`` is ``X_{iT/n} - X_{(i-1)T/n}``."""
    return np.diff(path.values, axis=0)


def subsample(path: SamplePath, m: int) -> SamplePath:
    """Keep every ``n/m``-th observation, giving ``m`` intervals on the same horizon."""
    m = int(m)
    if m < 1 or path.n % m != 0:
        raise ValueError(f"m = {m} must divide n = {path.n}")
    return SamplePath(path.values[:: path.n // m], path.T)


def _format_rows(times, values) -> str:
    buf = io.StringIO()
    d = values.shape[1]
    buf.write("time," + ",".join(f"x{j + 1}" for j in range(d)) + "\n")
    block = np.column_stack([times, values])
    np.savetxt(buf, block, fmt=FLOAT_FMT, delimiter=",", newline="\n")
    return buf.getvalue()


def save_csv(path: SamplePath, sink) -> None:
    """Write ``path`` to a filename or text stream with 17 significant digits."""
    text = _format_rows(path.times, path.values)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        Path(sink).write_text(text, encoding="utf-8", newline="\n")


def _read_text(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_text(encoding="utf-8")


def load_csv(source) -> SamplePath:
    """Parse a ``time,x1,...,xd`` CSV from a filename or text stream."""
    lines = _read_text(source).split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise PathFormatError("empty input", line=1)
    header = [h.strip() for h in lines[0].split(",")]
    d = len(header) - 1
    if d < 1 or header[0] != "time" or header[1:] != [f"x{j + 1}" for j in range(d)]:
        raise PathFormatError(f"expected header time,x1,...,xd; got {lines[0]!r}", line=1)

    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw.strip() == "":
            raise PathFormatError("blank line", line=lineno)
        cells = raw.split(",")
        if len(cells) != d + 1:
            raise PathFormatError(f"expected {d + 1} fields, found {len(cells)}", line=lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise PathFormatError(f"non-numeric cell in {raw!r}", line=lineno) from None
    if len(rows) < 2:
        raise PathFormatError("need >= 2 observations", line=len(lines))

    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        bad = int(np.argmax(~np.all(np.isfinite(data), axis=1)))
        raise PathFormatError("non-finite value", line=bad + 2)
    t = data[:, 0]
    n = len(t) - 1
    T = t[-1]
    if t[0] != 0.0:
        raise PathFormatError(f"times must start at 0, got {t[0]!r}", line=2)
    if not T > 0:
        raise PathFormatError("last time must be positive", line=n + 2)
    step = t[1] - t[0]
    if not step > 0:
        raise PathFormatError("times must be strictly increasing", line=3)
    jitter = np.abs(np.diff(t) - step) / step
    if np.any(jitter > SPACING_TOL):
        bad = int(np.argmax(jitter > SPACING_TOL))
        raise PathFormatError("times are not equally spaced and increasing", line=bad + 3)
    return SamplePath(data[:, 1:], T)
