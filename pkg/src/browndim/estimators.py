"""Sliding-window minor-sum statistics of a sampled path.

For window length ``r`` the local matrix is the sum of ``r`` consecutive
increment outer products,

    zeta(r)_i = sum_{j=1..r} D_{i+j-1} D_{i+j-1}^T,

and the statistics are normalised sums of ``det(r; zeta(r)_i)``:

    Lbar(r)_t = (n/T)^(r-1) / r! * sum_{i=1}^{[nt/T]-r+1} det(r; zeta(r)_i)

    Z(r,r')_t = (n/T)^(r+r'-1) / (r! r'!) * sum_{i=1}^{[nt/T]-d-r'+1}
                det(r; zeta(r)_i) * (det(r'; zeta(r')_i) - det(r'; zeta(r')_{d+i}))

Indices ``i`` are 1-based in the formulas; arrays here are 0-based.
Whole curves over ``k = [nt/T] = 0..n`` are built once with a cumulative
sum, so evaluating at many times costs nothing extra.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .minors import minor_sums
from .pathdata import FLOAT_FMT, SamplePath, increments


def grid_index(t: float, T: float, n: int) -> int:
    """``[n t / T]``, robust to rounding when ``t`` sits on the grid."""
    x = n * t / T
    k = math.floor(x + 1e-9 * max(1.0, abs(x)))
    return min(max(k, 0), n)


def _as_increments(inc) -> np.ndarray:
    a = np.asarray(inc, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"increments must be (n, d), got shape {a.shape}")
    return a


def window_covs(inc, r: int) -> np.ndarray:
    """All windows ``zeta(r)_i``, ``i = 1..n-r+1``, as an ``(n-r+1, d, d)`` stack."""
    a = _as_increments(inc)
    n, d = a.shape
    if r < 1:
        raise ValueError(f"window length must be >= 1, got {r}")
    m = n - r + 1
    if m <= 0:
        return np.zeros((0, d, d))
    outer = a[:, :, None] * a[:, None, :]
    acc = outer[0:m].copy()
    for j in range(1, r):
        acc += outer[j : j + m]
    return acc


def window_cov(inc, i: int, r: int) -> np.ndarray:
    """The single window ``zeta(r)_i`` (``i`` is 1-based)."""
    a = _as_increments(inc)
    n = a.shape[0]
    if i < 1 or r < 1 or i + r - 1 > n:
        raise IndexError(f"window i={i}, r={r} overruns {n} increments")
    block = a[i - 1 : i - 1 + r]
    return block.T @ block


def window_minors(inc, r: int) -> np.ndarray:
    """``det(r; zeta(r)_i)`` for every window ``i = 1..n-r+1``."""
    z = window_covs(inc, r)
    if len(z) == 0:
        return np.zeros(0)
    return minor_sums(z, psd=True)[:, r - 1]


def lbar_curve(inc, r: int, T: float) -> np.ndarray:
    """``Lbar(r)^n`` at every ``k = [nt/T] = 0..n`` (length ``n + 1``)."""
    a = _as_increments(inc)
    n, d = a.shape
    if not 1 <= r <= d:
        raise ValueError(f"r must be in 1..{d}, got {r}")
    w = window_minors(a, r)
    norm = (n / T) ** (r - 1) / math.factorial(r)
    curve = np.zeros(n + 1)
    # curve[k] sums windows 1..k-r+1, i.e. w[0 : k-r+1]
    if len(w):
        curve[r:] = norm * np.cumsum(w)
    return curve


def lbar_n(inc, r: int, t: float, T: float, n: int | None = None) -> float:
    """``Lbar(r)^n_t``; zero when fewer than one full window fits in ``[0, t]``."""
    a = _as_increments(inc)
    if n is not None and n != a.shape[0]:
        raise ValueError(f"n = {n} does not match {a.shape[0]} increments")
    k = grid_index(t, T, a.shape[0])
    return float(lbar_curve(a, r, T)[k])


def z_curve(inc, r: int, rp: int, T: float) -> np.ndarray:
    """``Z(r, r')^n`` at every ``k = 0..n``; evaluated exactly as written (not symmetrised)."""
    a = _as_increments(inc)
    n, d = a.shape
    if not (1 <= r <= d and 1 <= rp <= d):
        raise ValueError(f"r, r' must be in 1..{d}, got {r}, {rp}")
    w_r = window_minors(a, r)
    w_rp = w_r if rp == r else window_minors(a, rp)
    m = n - d - rp + 1
    curve = np.zeros(n + 1)
    if m <= 0:
        return curve
    terms = w_r[:m] * (w_rp[:m] - w_rp[d : d + m])
    norm = (n / T) ** (r + rp - 1) / (math.factorial(r) * math.factorial(rp))
    curve[d + rp :] = norm * np.cumsum(terms)
    return curve


def z_n(inc, r: int, rp: int, t: float, T: float, n: int | None = None) -> float:
    a = _as_increments(inc)
    if n is not None and n != a.shape[0]:
        raise ValueError(f"n = {n} does not match {a.shape[0]} increments")
    return float(z_curve(a, r, rp, T)[grid_index(t, T, a.shape[0])])


def xi_value(lbar_r: float, lbar_next: float, r: int, t: float) -> float:
    """``t^(1/r) Lbar(r+1) / Lbar(r)^((r+1)/r)`` with ``0/0 = 0``."""
    if lbar_r <= 0.0:
        return 0.0
    return power_ratio(t ** (1.0 / r), lbar_next, lbar_r, (r + 1.0) / r)


def power_ratio(pref: float, num: float, den: float, p: float) -> float:
    """``pref * num / den**p`` for ``den > 0``, in log form so tiny ``den`` cannot underflow to 0/0."""
    if num == 0.0:
        return 0.0
    try:
        mag = math.exp(math.log(pref) + math.log(abs(num)) - p * math.log(den))
    except OverflowError:
        mag = math.inf
    return math.copysign(mag, num)


def v_n(lbar_n_value: float, lbar_true_value: float, n: int) -> float:
    """Rescaled error ``sqrt(n) (Lbar^n - Lbar)``."""
    return math.sqrt(n) * (lbar_n_value - lbar_true_value)


@dataclass
class EstimatorPanel:
    """Estimator values on a set of evaluation times.

    ``lbar[j, r-1]`` is ``Lbar(r)^n`` at ``times[j]``; ``xi[j, r-1]`` is the
    scale-free ratio for ``r = 1..rmax-1``; ``z[(r, r')][j]`` holds the
    requested companion statistics.
    """

    d: int
    T: float
    n: int
    times: np.ndarray
    lbar: np.ndarray
    xi: np.ndarray
    z: dict = field(default_factory=dict)

    @property
    def rmax(self) -> int:
        return self.lbar.shape[1]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-12))
        if len(hits) == 0:
            raise KeyError(f"t = {t} is not an evaluation time of this panel")
        return int(hits[0])

    def lbar_at(self, t: float) -> np.ndarray:
        return self.lbar[self.index(t)]

    def xi_at(self, r: int, t: float) -> float:
        return float(self.xi[self.index(t), r - 1])

    def z_at(self, r: int, rp: int, t: float) -> float:
        if (r, rp) not in self.z:
            raise KeyError(f"Z({r},{rp}) was not computed for this panel")
        return float(self.z[(r, rp)][self.index(t)])


def xi_n(panel: EstimatorPanel, r: int, t: float) -> float:
    """``xi(r)^n_t`` read off a panel (requires ``r + 1 <= panel.rmax``)."""
    lb = panel.lbar_at(t)
    return xi_value(lb[r - 1], lb[r], r, t)


def build_panel(source, times: Iterable[float] | None = None, rmax: int | None = None,
                z_pairs: Sequence[tuple[int, int]] = (), T: float | None = None) -> EstimatorPanel:
    """Evaluate all statistics of a path (or an increment matrix plus ``T``).

    Parameters
    ----------
    source : SamplePath or array_like
        The observed path, or its ``(n, d)`` increments (then ``T`` is required).
    times : iterable of float, optional
        Evaluation times in ``(0, T]``; defaults to ``[T]``.
    rmax : int, optional
        Highest order computed; defaults to ``d``.
    z_pairs : sequence of (r, r')
        Which ``Z(r, r')`` to evaluate.
    """
    if isinstance(source, SamplePath):
        inc = increments(source)
        T = source.T
    else:
        if T is None:
            raise ValueError("T is required when passing raw increments")
        inc = _as_increments(source)
    n, d = inc.shape
    rmax = d if rmax is None else int(rmax)
    if not 1 <= rmax <= d:
        raise ValueError(f"rmax must be in 1..{d}, got {rmax}")
    times = np.array([T] if times is None else list(times), dtype=float)
    if np.any(times <= 0) or np.any(times > T * (1 + 1e-12)):
        raise ValueError("evaluation times must lie in (0, T]")
    ks = np.array([grid_index(t, T, n) for t in times], dtype=int)

    lbar = np.column_stack([lbar_curve(inc, r, T)[ks] for r in range(1, rmax + 1)])
    xi = np.zeros((len(times), max(rmax - 1, 0)))
    for j, t in enumerate(times):
        for r in range(1, rmax):
            xi[j, r - 1] = xi_value(lbar[j, r - 1], lbar[j, r], r, t)
    z = {}
    for r, rp in dict.fromkeys(tuple(p) for p in z_pairs):
        z[(r, rp)] = z_curve(inc, r, rp, T)[ks]
    return EstimatorPanel(d=d, T=float(T), n=n, times=times, lbar=lbar, xi=xi, z=z)


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def panel_lbar_csv(panel: EstimatorPanel) -> str:
    """Long-format CSV ``t,r,lbar,xi`` (``xi`` blank for ``r = rmax``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "r", "lbar", "xi"])
    for j, t in enumerate(panel.times):
        for r in range(1, panel.rmax + 1):
            xi = _fmt(panel.xi[j, r - 1]) if r < panel.rmax else ""
            w.writerow([_fmt(t), r, _fmt(panel.lbar[j, r - 1]), xi])
    return buf.getvalue()


def panel_z_csv(panel: EstimatorPanel) -> str:
    """Long-format CSV ``t,r,rprime,z``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "r", "rprime", "z"])
    for j, t in enumerate(panel.times):
        for (r, rp), vals in panel.z.items():
            w.writerow([_fmt(t), r, rp, _fmt(vals[j])])
    return buf.getvalue()
