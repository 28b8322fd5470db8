"""Decision rules turning ``Lbar(r)^n_t`` values into a Brownian dimension.

Every rule takes either an :class:`~browndim.estimators.EstimatorPanel`
(values are looked up at ``t``) or a plain sequence
``[Lbar(1), ..., Lbar(d)]`` at time ``t``.

Absolute rules compare ``Lbar(r)`` with ``rho * t`` and depend on the unit
of the data. Relative rules compare ``Lbar(r+1)`` with a power of ``Lbar(r)``
or ``Lbar(1)`` and are unchanged when the path is rescaled.

The ``r = 0`` clause of :func:`decide_relative` (and the mirrored ``r = 1``
clause of :func:`decide_relative_sup`) has no well-defined scale-free form.
``zero_clause="exact"`` (default) declares dimension 0 only when
``Lbar(1) == 0``, which keeps the rules scale-invariant;
``zero_clause="absolute"`` uses the absolute test ``Lbar(1) < rho * t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .estimators import EstimatorPanel, power_ratio, xi_value

SUP_RULE_WARNING = "no asymptotic guarantee for the sup-form relative rule"


class DegeneratePanelError(ValueError):
    """The statistic is undefined because ``Lbar(1)^n_t = 0``."""


@dataclass(frozen=True)
class ThresholdSchedule:
    """Threshold ``rho_n``: a fixed value, or ``c * n**(-theta)``."""

    kind: str = "fixed"
    rho: float = 0.01
    c: float = 1.0
    theta: float = 0.25

    def __post_init__(self):
        if self.kind == "fixed":
            if not 0 < self.rho <= 1:
                raise ValueError(f"fixed threshold must be in (0, 1], got {self.rho}")
        elif self.kind == "power":
            if not self.c > 0 or not 0 < self.theta < 0.5:
                raise ValueError(f"power-law threshold needs c > 0 and 0 < theta < 1/2, "
                                 f"got c={self.c}, theta={self.theta}")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def value(self, n: int) -> float:
        if self.kind == "fixed":
            return self.rho
        return self.c * n ** (-self.theta)


@dataclass
class DecisionReport:
    rule: str
    r_hat: int | None
    t: float
    rho: float | None
    statistics: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    warning: str | None = None
    # confidence-interval test only
    r: int | None = None
    s_stat: float | None = None
    z_stat: float | None = None
    eta: float | None = None
    gamma: float | None = None
    eps: float | None = None
    alpha: float | None = None
    reject: bool | None = None

    def as_row(self) -> dict:
        row = {"rule": self.rule, "t": self.t, "rho": self.rho, "r_hat": self.r_hat}
        for k in ("r", "s_stat", "z_stat", "eta", "gamma", "eps", "alpha", "reject"):
            v = getattr(self, k)
            if v is not None:
                row[k] = v
        return row

    def to_text(self) -> str:
        lines = [f"rule: {self.rule}", f"t: {self.t:g}"]
        if self.rho is not None:
            lines.append(f"rho_n: {self.rho:g}")
        if self.reject is None:
            for k, v in self.statistics.items():
                lines.append(f"{k}: {v:.6g}")
            for k, v in self.thresholds.items():
                lines.append(f"threshold {k}: {v:.6g}")
        else:
            lines += [f"S_n,t: {self.s_stat:.6g}", f"Z_n,t: {self.z_stat:.6g}",
                      f"eta_n,t: {self.eta:.6g}", f"gamma: {self.gamma:.6g}",
                      f"epsilon: {self.eps:g}", f"alpha: {self.alpha:g}",
                      f"verdict: {'reject S_t >= epsilon' if self.reject else 'no rejection'}"]
        if self.r_hat is not None:
            lines.append(f"r_hat = {self.r_hat}")
        if self.warning:
            lines.append(f"warning: {self.warning}")
        return "\n".join(lines)


def _lbar(source, t: float) -> np.ndarray:
    if isinstance(source, EstimatorPanel):
        return np.asarray(source.lbar_at(t), dtype=float)
    return np.asarray(source, dtype=float)


def _check_t(t: float) -> None:
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")


def _zero_clause_holds(l1: float, rho: float, t: float, zero_clause: str) -> bool:
    if zero_clause == "exact":
        return l1 <= 0.0
    if zero_clause == "absolute":
        return l1 < rho * t
    raise ValueError(f"zero_clause must be 'exact' or 'absolute', got {zero_clause!r}")


def decide_absolute(source, t: float, rho: float) -> DecisionReport:
    """Smallest ``r`` in ``0..d-1`` with ``Lbar(r+1) < rho t``; ``d`` if none."""
    _check_t(t)
    lb = _lbar(source, t)
    d = len(lb)
    r_hat = next((r for r in range(d) if lb[r] < rho * t), d)
    return DecisionReport("absolute", r_hat, t, rho,
                          {f"lbar({r})": lb[r - 1] for r in range(1, d + 1)},
                          {"rho*t": rho * t})


def decide_absolute_sup(source, t: float, rho: float) -> DecisionReport:
    """Largest ``r`` in ``1..d`` with ``Lbar(r) >= rho t``; 0 if none."""
    _check_t(t)
    lb = _lbar(source, t)
    d = len(lb)
    r_hat = max((r for r in range(1, d + 1) if lb[r - 1] >= rho * t), default=0)
    return DecisionReport("absolute_sup", r_hat, t, rho,
                          {f"lbar({r})": lb[r - 1] for r in range(1, d + 1)},
                          {"rho*t": rho * t})


def decide_relative(source, t: float, rho: float, zero_clause: str = "exact") -> DecisionReport:
    """Smallest ``r`` with ``xi(r) < rho`` (``r >= 1``), after the ``r = 0`` clause."""
    _check_t(t)
    lb = _lbar(source, t)
    d = len(lb)
    xis = [xi_value(lb[r - 1], lb[r], r, t) for r in range(1, d)]
    if _zero_clause_holds(lb[0], rho, t, zero_clause):
        r_hat = 0
    else:
        r_hat = next((r for r in range(1, d) if xis[r - 1] < rho), d)
    stats = {f"lbar({r})": lb[r - 1] for r in range(1, d + 1)}
    stats.update({f"xi({r})": xis[r - 1] for r in range(1, d)})
    return DecisionReport("relative", r_hat, t, rho, stats, {"rho": rho})


def decide_relative_prime(source, t: float, rho: float) -> DecisionReport:
    """Smallest ``r`` with ``t^r Lbar(r+1) / Lbar(1)^(r+1) < rho``.

    The ``r = 0`` clause reads ``Lbar(1) < rho Lbar(1)`` and never holds for
    ``rho <= 1``, so the answer is at least 1.
    """
    _check_t(t)
    lb = _lbar(source, t)
    d = len(lb)
    l1 = lb[0]
    ratios = [0.0 if l1 <= 0 else power_ratio(t ** r, lb[r], l1, r + 1) for r in range(1, d)]
    if l1 < rho * l1:
        r_hat = 0
    else:
        r_hat = next((r for r in range(1, d) if ratios[r - 1] < rho), d)
    stats = {f"lbar({r})": lb[r - 1] for r in range(1, d + 1)}
    stats.update({f"ratio({r})": ratios[r - 1] for r in range(1, d)})
    return DecisionReport("relative_prime", r_hat, t, rho, stats, {"rho": rho})


def decide_relative_sup(source, t: float, rho: float, zero_clause: str = "exact") -> DecisionReport:
    """Largest ``r`` with ``xi(r-1) >= rho`` (``r >= 2``) or the ``r = 1`` clause; 0 if none.

    Carries a warning: unlike the inf-form rules, this one has no
    consistency guarantee.
    """
    _check_t(t)
    lb = _lbar(source, t)
    d = len(lb)
    xis = [xi_value(lb[r - 1], lb[r], r, t) for r in range(1, d)]
    holds = [not _zero_clause_holds(lb[0], rho, t, zero_clause)]
    holds += [xis[r - 2] >= rho for r in range(2, d + 1)]
    r_hat = max((r for r in range(1, d + 1) if holds[r - 1]), default=0)
    stats = {f"lbar({r})": lb[r - 1] for r in range(1, d + 1)}
    stats.update({f"xi({r})": xis[r - 1] for r in range(1, d)})
    return DecisionReport("relative_sup", r_hat, t, rho, stats, {"rho": rho},
                          warning=SUP_RULE_WARNING)


RULES = {
    "absolute": decide_absolute,
    "absolute_sup": decide_absolute_sup,
    "relative": decide_relative,
    "relative_prime": decide_relative_prime,
    "relative_sup": decide_relative_sup,
}


def normal_quantile(alpha: float) -> float:
    """Upper-``alpha`` point ``g`` of N(0, 1), i.e. ``P(G > g) = alpha``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return -NormalDist().inv_cdf(alpha)


def s_statistic(panel: EstimatorPanel, r: int, t: float) -> tuple[float, float]:
    """Return ``(S_{n,t}, Z_{n,t})``.

    ``S = t^(r-1) Lbar(r) / Lbar(1)^r`` and ``Z_{n,t}`` is the plug-in
    estimate of its asymptotic variance,

        T t^(2(r-1)) / Lbar(1)^(2r) * [Z(r,r) - 2r Z(1,r) Lbar(r)/Lbar(1)
                                       + r^2 Z(1,1) (Lbar(r)/Lbar(1))^2],

    the expanded form of the variance with no division by ``Lbar(r)``.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    lb = panel.lbar_at(t)
    l1, lr = float(lb[0]), float(lb[r - 1])
    if l1 <= 0:
        raise DegeneratePanelError(f"Lbar(1) = 0 at t = {t}; S statistic undefined")
    s = t ** (r - 1) * lr / l1 ** r
    if r == 1:
        return 1.0, 0.0
    zrr = panel.z_at(r, r, t)
    z1r = panel.z_at(1, r, t)
    z11 = panel.z_at(1, 1, t)
    u = lr / l1
    bracket = zrr - 2 * r * z1r * u + r * r * z11 * u * u
    z = panel.T * t ** (2 * (r - 1)) / l1 ** (2 * r) * bracket
    return float(s), float(z)


def ci_test(panel: EstimatorPanel, r: int, t: float, eps: float, alpha: float) -> DecisionReport:
    """Test ``S_t >= eps``: reject when ``S_{n,t} < eps - gamma sqrt(|Z_{n,t}| / n)``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    gamma = normal_quantile(alpha)
    s, z = s_statistic(panel, r, t)
    eta = eps - gamma * math.sqrt(abs(z)) / math.sqrt(panel.n)
    reject = s < eta
    return DecisionReport("ci", None, t, None, {"S": s, "Z": z}, {"eta": eta},
                          r=r, s_stat=s, z_stat=z, eta=eta, gamma=gamma,
                          eps=eps, alpha=alpha, reject=bool(reject))


def ci_lbar(panel: EstimatorPanel, r: int, t: float, alpha: float) -> tuple[float, float]:
    """Two-sided level-``1 - alpha`` interval for ``Lbar(r)_t``.

    Uses ``sqrt(n) (Lbar^n - Lbar) / sqrt(T Z(r,r)^n) -> N(0, 1)``.
    """
    g = normal_quantile(alpha / 2)
    center = float(panel.lbar_at(t)[r - 1])
    half = g * math.sqrt(panel.T * abs(panel.z_at(r, r, t))) / math.sqrt(panel.n)
    return center - half, center + half


def decide(source, t: float, rule: str, rho: float, **kwargs) -> DecisionReport:
    try:
        fn = RULES[rule]
    except KeyError:
        raise ValueError(f"unknown rule {rule!r}; choose from {sorted(RULES)}") from None
    return fn(source, t, rho, **kwargs)


def ci_pairs(r: int) -> list[tuple[int, int]]:
    """``Z`` pairs needed for the S statistic of order ``r``."""
    return list(dict.fromkeys([(1, 1), (1, r), (r, r)]))
