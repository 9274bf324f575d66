"""Empirical reward-risk measures on a window of daily returns.

Every function takes simple returns ``r`` and a risk-free rate ``rf`` (scalar
or array aligned with ``r``). Values are per-day and unannualized. Tail
measures use the lower order statistic at index ``ceil(eta * n)``, so CVaR is
exactly the mean of a well-defined worst set of observations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, UndefinedMeasureError, ValidationError


class MeasureKind(str, enum.Enum):
    VOLATILITY = "volatility"
    VARIANCE = "variance"
    SHARPE = "sharpe"
    MAX_DRAWDOWN = "max_drawdown"
    CALMAR = "calmar"
    VAR = "var"
    CVAR = "cvar"
    STAR = "star"
    RACHEV = "rachev"

    @property
    def is_ratio(self):
        return self in RATIO_KINDS

    @property
    def is_risk(self):
        return not self.is_ratio


RATIO_KINDS = frozenset({MeasureKind.SHARPE, MeasureKind.CALMAR, MeasureKind.STAR, MeasureKind.RACHEV})
# measured on realized paths only; no model counterpart
PATH_KINDS = frozenset({MeasureKind.MAX_DRAWDOWN, MeasureKind.CALMAR})
TAIL_KINDS = frozenset({MeasureKind.VAR, MeasureKind.CVAR, MeasureKind.STAR, MeasureKind.RACHEV})


class Source(str, enum.Enum):
    EMPIRICAL = "empirical"
    MODEL = "model"


@dataclass(frozen=True)
class MeasureSpec:
    kind: MeasureKind
    eta: float = 0.05
    zeta: float = 0.05
    source: Source = Source.EMPIRICAL

    def __post_init__(self):
        object.__setattr__(self, "kind", MeasureKind(self.kind))
        object.__setattr__(self, "source", Source(self.source))
        if not 0.0 < self.eta < 1.0:
            raise ValidationError(f"eta must be in (0, 1), got {self.eta}")
        if not 0.0 < self.zeta < 1.0:
            raise ValidationError(f"zeta must be in (0, 1), got {self.zeta}")
        if self.source is Source.MODEL and self.kind in PATH_KINDS:
            raise ValidationError(f"{self.kind.value} is only defined on realized returns")

    @property
    def label(self):
        """Human-readable name in the style of the published tables."""
        k = self.kind
        cond = self.source is Source.MODEL
        if k is MeasureKind.SHARPE:
            return "Cond. Sharpe" if cond else "Sharpe"
        if k is MeasureKind.VOLATILITY:
            return "Cond. Std." if cond else "Std."
        if k is MeasureKind.VARIANCE:
            return "Cond. Variance" if cond else "Variance"
        if k is MeasureKind.MAX_DRAWDOWN:
            return "Max Drawdown"
        if k is MeasureKind.CALMAR:
            return "Calmar"
        lvl = _pct(1 - self.eta)
        if k is MeasureKind.VAR:
            return f"VaR({lvl}%)"
        if k is MeasureKind.CVAR:
            return f"CVaR({lvl}%)"
        if k is MeasureKind.STAR:
            return f"STAR({lvl}%)"
        return f"R({lvl}%,{_pct(1 - self.zeta)}%)"


def _pct(x):
    v = round(100 * x, 6)
    return f"{v:g}"


@dataclass(frozen=True)
class MeasureValue:
    value: float
    kind: MeasureKind

    def __post_init__(self):
        if math.isnan(self.value):
            raise UndefinedMeasureError(f"{self.kind.value}: NaN value")
        if self.kind in (MeasureKind.VOLATILITY, MeasureKind.VARIANCE, MeasureKind.MAX_DRAWDOWN) and self.value < 0:
            raise ValidationError(f"{self.kind.value} must be non-negative")


def _excess(r, rf):
    r = np.asarray(r, dtype=float)
    rf = np.broadcast_to(np.asarray(rf, dtype=float), r.shape) if np.ndim(rf) == 0 else np.asarray(rf, dtype=float)
    if rf.shape != r.shape:
        raise ValidationError(f"return and risk-free lengths differ ({r.shape} vs {rf.shape})")
    return r - rf


def mean_excess(r, rf=0.0):
    x = _excess(r, rf)
    if len(x) < 2:
        raise InsufficientDataError("mean_excess needs at least two observations")
    return float(np.mean(x))


def volatility(r):
    """Sample standard deviation (divisor n - 1)."""
    r = np.asarray(r, dtype=float)
    if len(r) < 2:
        raise InsufficientDataError("volatility needs at least two observations")
    if np.ptp(r) == 0.0:
        # np.std leaves rounding noise from the mean on constant input
        return 0.0
    return float(np.std(r, ddof=1))


def variance(r):
    return volatility(r) ** 2


def sharpe(r, rf=0.0):
    x = _excess(r, rf)
    sd = volatility(x)
    if sd == 0.0:
        raise UndefinedMeasureError("Sharpe ratio undefined: zero volatility of excess returns")
    return float(np.mean(x)) / sd


def wealth_path(r):
    """Compounded wealth including the initial unit, length n + 1."""
    return np.concatenate(([1.0], np.cumprod(1.0 + np.asarray(r, dtype=float))))


def max_drawdown(r):
    """Largest peak-to-trough loss of the compounded wealth path, in [0, 1]."""
    r = np.asarray(r, dtype=float)
    if len(r) == 0:
        raise InsufficientDataError("max_drawdown needs a non-empty series")
    w = wealth_path(r)
    peak = np.maximum.accumulate(w)
    return float(max(0.0, np.max(1.0 - w / peak)))


def cumulative_return(r):
    return float(np.prod(1.0 + np.asarray(r, dtype=float)) - 1.0)


def calmar(r, annualize=False, periods_per_year=252):
    """Return over maximum drawdown.

    On a formation window the numerator is the cumulative return over the
    window. With ``annualize=True`` it is the arithmetic annualized mean,
    which is how full-sample performance is reported.
    """
    mdd = max_drawdown(r)
    if mdd == 0.0:
        raise UndefinedMeasureError("Calmar ratio undefined: zero maximum drawdown")
    num = float(np.mean(r)) * periods_per_year if annualize else cumulative_return(r)
    return num / mdd


def calmar_rank_value(r):
    """Calmar for ranking: a window without drawdown maps to ``+inf``."""
    try:
        return calmar(r)
    except UndefinedMeasureError:
        return math.inf if cumulative_return(r) > 0 else 0.0


def tail_count(n, eta):
    # tolerance keeps e.g. ceil(0.07 * 100) at 7
    return max(1, math.ceil(eta * n - 1e-9))


def _check_tail(x, eta):
    if not 0.0 < eta < 1.0:
        raise ValidationError(f"tail level must be in (0, 1), got {eta}")
    need = math.ceil(1.0 / eta - 1e-9)
    if len(x) < need:
        raise InsufficientDataError(f"need at least {need} observations for tail level {eta}, got {len(x)}")


def empirical_var(r, rf=0.0, eta=0.05):
    """VaR at confidence (1 - eta): minus the ``ceil(eta n)``-th smallest excess return."""
    x = _excess(r, rf)
    _check_tail(x, eta)
    k = tail_count(len(x), eta)
    return float(-np.partition(x, k - 1)[k - 1])


def empirical_cvar(r, rf=0.0, eta=0.05):
    """CVaR at confidence (1 - eta): minus the mean of the ``ceil(eta n)`` worst excess returns."""
    x = _excess(r, rf)
    _check_tail(x, eta)
    k = tail_count(len(x), eta)
    worst = np.sort(x)[:k]
    # correctly rounded sum, independent of summation order
    return -(math.fsum(worst) / k)


def star_ratio(r, rf=0.0, eta=0.05):
    cv = empirical_cvar(r, rf, eta)
    if cv <= 0.0:
        raise UndefinedMeasureError(f"STAR ratio undefined: non-positive CVaR ({cv})")
    return mean_excess(r, rf) / cv


def rachev_ratio(r, rf=0.0, eta=0.05, zeta=0.05):
    """Upper-tail CVaR of ``rf - r`` at ``eta`` over lower-tail CVaR of ``r - rf`` at ``zeta``."""
    r = np.asarray(r, dtype=float)
    rf_arr = np.asarray(rf, dtype=float)
    den = empirical_cvar(r, rf_arr, zeta)
    if den <= 0.0:
        raise UndefinedMeasureError(f"Rachev ratio undefined: non-positive denominator CVaR ({den})")
    num = empirical_cvar(-r, -rf_arr, eta)
    return num / den


def evaluate(spec: MeasureSpec, r, rf=0.0):
    """Empirical value of ``spec`` on a return window.

    Calmar windows without drawdown evaluate to ``+inf`` rather than raising.
    """
    k = spec.kind
    if k is MeasureKind.VOLATILITY:
        v = volatility(r)
    elif k is MeasureKind.VARIANCE:
        v = variance(r)
    elif k is MeasureKind.SHARPE:
        v = sharpe(r, rf)
    elif k is MeasureKind.MAX_DRAWDOWN:
        v = max_drawdown(r)
    elif k is MeasureKind.CALMAR:
        v = calmar_rank_value(r)
    elif k is MeasureKind.VAR:
        v = empirical_var(r, rf, spec.eta)
    elif k is MeasureKind.CVAR:
        v = empirical_cvar(r, rf, spec.eta)
    elif k is MeasureKind.STAR:
        v = star_ratio(r, rf, spec.eta)
    else:
        v = rachev_ratio(r, rf, spec.eta, spec.zeta)
    return MeasureValue(float(v), k)
