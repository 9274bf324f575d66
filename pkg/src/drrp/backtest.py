"""Overlapping-tranche backtest and summary statistics.

Every ``step`` trading days a new tranche is formed from measures computed on
the trailing ``formation`` returns and held for ``holding`` days, so after
warm-up ``tranches`` of them are live at once and each carries an equal share
of capital. Within a tranche, weights drift with realized returns.

Indexing: a rebalance at row ``k`` uses returns ``k - formation + 1 .. k`` and
the new tranche earns returns from row ``k + 1`` on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import armagarch, measures
from .allocation import AllocationRule, Family, WeightVector, compute_weights
from .errors import DrrpError, InsufficientDataError, UndefinedMeasureError, ValidationError
from .marketdata import MONTH_DAYS, SIX_MONTHS, TRADING_DAYS, ReturnPanel, RiskFreeSeries, active_universe
from .measures import MeasureSpec, Source

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    formation: int = SIX_MONTHS
    holding: int = SIX_MONTHS
    step: int = MONTH_DAYS
    tranches: int = 6
    min_coverage: float = 0.9

    def __post_init__(self):
        for name in ("formation", "holding", "step", "tranches"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if not (self.formation == self.holding == self.tranches * self.step):
            raise ValidationError(
                "schedule needs formation = holding = tranches * step, "
                f"got {self.formation}, {self.holding}, {self.tranches} x {self.step}"
            )
        if not 0.0 < self.min_coverage <= 1.0:
            raise ValidationError("min_coverage must be in (0, 1]")


@dataclass(frozen=True)
class Strategy:
    """A measure paired with an allocation rule; ``measure`` is ``None`` for equal weight."""

    rule: AllocationRule
    measure: MeasureSpec | None = None

    def __post_init__(self):
        if self.measure is None and self.rule.family is not Family.EQUAL:
            raise ValidationError("a non-equal rule needs a measure")

    @property
    def measure_label(self):
        return "Equal Weight" if self.measure is None else self.measure.label

    @property
    def rule_label(self):
        return self.rule.label

    @property
    def key(self):
        """Filesystem-safe identifier."""
        if self.measure is None:
            return "equal"
        m = self.measure
        return f"{self.rule.spec}|{m.kind.value}|{m.source.value}|eta={m.eta:g}|zeta={m.zeta:g}"

    @classmethod
    def equal_weight(cls):
        return cls(AllocationRule.equal())


@dataclass(frozen=True)
class RebalanceRecord:
    index: int
    date: np.datetime64
    target: WeightVector
    turnover: float
    flags: tuple = ()


@dataclass(frozen=True)
class SummaryStats:
    mean_ann: float
    std_ann: float
    skew: float
    excess_kurtosis: float
    cumulative_pct: float
    sharpe_ann: float
    cond_sharpe_ann: float
    calmar_full: float
    mdd_pct: float
    var95_daily_pct: float
    cvar95_daily_pct: float
    var_95_99_ratio: float
    cvar_95_99_ratio: float
    turnover_pct: float
    flags: tuple = ()

    COLUMNS = (
        "mean_ann",
        "std_ann",
        "skew",
        "excess_kurtosis",
        "cumulative_pct",
        "sharpe_ann",
        "cond_sharpe_ann",
        "calmar_full",
        "mdd_pct",
        "var95_daily_pct",
        "cvar95_daily_pct",
        "var_95_99_ratio",
        "cvar_95_99_ratio",
        "turnover_pct",
    )

    def values(self):
        return tuple(getattr(self, c) for c in self.COLUMNS)


@dataclass(frozen=True)
class BacktestReport:
    strategy: Strategy
    assets: tuple
    dates: np.ndarray
    daily_returns: np.ndarray
    weights: np.ndarray
    tranche_counts: np.ndarray
    rebalance_log: tuple
    stats: SummaryStats | None = None
    flags: tuple = field(default=())

    @property
    def turnovers(self):
        return np.array([r.turnover for r in self.rebalance_log if not math.isnan(r.turnover)])


def turnover_at_rebalance(pre, post):
    """One-way turnover ``0.5 * sum |post - pre|`` over the union of assets.

    Accepts arrays aligned on the same assets, or mappings ticker -> weight.
    """
    if isinstance(pre, WeightVector):
        pre = pre.as_dict()
    if isinstance(post, WeightVector):
        post = post.as_dict()
    if isinstance(pre, dict) or isinstance(post, dict):
        keys = set(pre) | set(post)
        return 0.5 * sum(abs(post.get(k, 0.0) - pre.get(k, 0.0)) for k in keys)
    pre = np.asarray(pre, dtype=float)
    post = np.asarray(post, dtype=float)
    return float(0.5 * np.sum(np.abs(post - pre)))


def rebalance_indices(panel: ReturnPanel, schedule: Schedule):
    """Rows at which tranches are formed; the first has a full formation window."""
    rows = np.flatnonzero(np.isfinite(panel.returns).any(axis=1))
    if len(rows) == 0:
        raise InsufficientDataError("panel has no returns")
    k0 = int(rows[0]) + schedule.formation - 1
    n = len(panel.dates)
    if n - 1 - k0 < schedule.holding:
        raise InsufficientDataError(
            f"panel has {n} dates; need formation + holding = {schedule.formation + schedule.holding} return days"
        )
    return list(range(k0, n - 1, schedule.step))


def window(panel: ReturnPanel, rf_daily, j, k, formation):
    """Finite returns of asset column ``j`` over the formation window ending at row ``k``."""
    lo = k - formation + 1
    r = panel.returns[lo : k + 1, j]
    ok = np.isfinite(r)
    return r[ok], rf_daily[lo : k + 1][ok]


def tail_levels(strategies):
    """Tail levels the model-based strategies will ask for."""
    out = set()
    for st in strategies:
        m = st.measure
        if m is not None and m.source is Source.MODEL:
            out.update((m.eta, m.zeta))
    return tuple(sorted(out))


class ModelFits:
    """Cache of compact ARMA-GARCH-CTS fits keyed by ``(asset column, rebalance row)``.

    Fits depend only on the data window, never on the strategy, so one cache
    serves every model-based strategy of a run. Failures are cached as the
    raised exception.
    """

    def __init__(self, panel: ReturnPanel, rf_daily, schedule: Schedule, etas=(0.05,)):
        self.panel = panel
        self.rf = rf_daily
        self.schedule = schedule
        self.etas = tuple(sorted(set(etas)))
        self._fits = {}

    def compute(self, j, k):
        r, _ = window(self.panel, self.rf, j, k, self.schedule.formation)
        return fit_window(r, self.etas)

    def tasks(self):
        """Every ``(j, k)`` a model strategy may request, in a fixed order."""
        out = []
        for k in rebalance_indices(self.panel, self.schedule):
            cols, _ = investable(self.panel, k, self.schedule)
            out.extend((j, k) for j in cols)
        return out

    def get(self, j, k):
        key = (j, k)
        if key not in self._fits:
            self._fits[key] = self.compute(j, k)
        return self._fits[key]

    def put(self, j, k, value):
        self._fits[(j, k)] = value

    def __len__(self):
        return len(self._fits)


def fit_window(r, etas):
    """Compact fit of one window, or the :class:`DrrpError` it raised."""
    try:
        return armagarch.fit_compact(r, etas)
    except DrrpError as exc:
        return exc


def investable(panel, k, schedule):
    """Active universe at row ``k`` as column indices, with a fallback flag."""
    try:
        names = active_universe(panel, k, schedule.formation, schedule.min_coverage)
        return [panel.assets.index(t) for t in names], ()
    except InsufficientDataError:
        cols = np.flatnonzero(panel.member[k] & np.isfinite(panel.returns[k]))
        if len(cols) == 0:
            cols = np.flatnonzero(np.isfinite(panel.returns[k]))
        return [int(c) for c in cols], ("no-investable-assets",)


def asset_measure(panel, rf_daily, j, k, spec: MeasureSpec, schedule, fits: ModelFits | None):
    """Measure value of asset ``j`` at rebalance ``k``; flags are returned alongside."""
    if spec.source is Source.EMPIRICAL:
        r, rf = window(panel, rf_daily, j, k, schedule.formation)
        return measures.evaluate(spec, r, rf).value, ()
    fit = fits.get(j, k)
    if isinstance(fit, Exception):
        raise fit
    flags = (f"student-t-fallback:{panel.assets[j]}",) if fit.cts_fallback else ()
    return fit.measure(spec, rf_daily[k]).value, flags


def form_weights(panel, rf_daily, k, strategy: Strategy, schedule, fits=None):
    """Target weights over all panel columns for a tranche formed at row ``k``."""
    cols, flags = investable(panel, k, schedule)
    flags = list(flags)
    n_all = len(panel.assets)
    w = np.zeros(n_all)
    if not cols:
        flags.append("empty-universe")
        return w, flags
    if strategy.measure is None:
        vw = compute_weights(np.ones(len(cols)), strategy.rule)
        w[cols] = vw.weights
        return w, flags
    keep, vals = [], []
    for j in cols:
        try:
            v, f = asset_measure(panel, rf_daily, j, k, strategy.measure, schedule, fits)
        except DrrpError as exc:
            flags.append(f"dropped:{panel.assets[j]}:{type(exc).__name__}")
            continue
        if strategy.rule.family in (Family.RISK_INVERSE, Family.RISK_INVERSE_LINEAR) and not v > 0:
            flags.append(f"dropped:{panel.assets[j]}:non-positive-risk")
            continue
        flags.extend(f)
        keep.append(j)
        vals.append(v)
    if not keep:
        flags.append("equal-weight-fallback")
        w[cols] = 1.0 / len(cols)
        return w, flags
    vw = compute_weights(vals, strategy.rule)
    if vw.fallback:
        flags.append("equal-weight-fallback")
    w[keep] = vw.weights
    return w, flags


def run(
    panel: ReturnPanel,
    rf: RiskFreeSeries | np.ndarray | float,
    strategy: Strategy,
    schedule: Schedule | None = None,
    seed=None,
    fits: ModelFits | None = None,
    summarize_stats=True,
) -> BacktestReport:
    """Simulate one strategy over the panel.

    ``seed`` is accepted for interface stability; the engine itself draws no
    random numbers.
    """
    schedule = schedule or Schedule()
    rf_daily = _rf_array(rf, panel.dates)
    if strategy.measure is not None and strategy.measure.source is Source.MODEL and fits is None:
        fits = ModelFits(panel, rf_daily, schedule, tail_levels([strategy]))
    rebal = rebalance_indices(panel, schedule)
    rebal_set = set(rebal)
    n, n_assets = panel.returns.shape
    ret = np.nan_to_num(panel.returns, nan=0.0)
    finite = np.isfinite(panel.returns)
    last_valid = np.array([np.flatnonzero(finite[:, j])[-1] if finite[:, j].any() else -1 for j in range(n_assets)])

    tranches = []  # drifted weight vectors, oldest first
    hold_rows = range(rebal[0] + 1, n)
    out_r = np.empty(len(hold_rows))
    out_w = np.empty((len(hold_rows), n_assets))
    counts = np.empty(len(hold_rows), dtype=int)
    records = []
    run_flags = []

    def aggregate():
        return np.mean(tranches, axis=0) if tranches else np.zeros(n_assets)

    for i, t in enumerate(hold_rows):
        k = t - 1
        if k in rebal_set:
            pre = aggregate()
            target, flags = form_weights(panel, rf_daily, k, strategy, schedule, fits)
            tranches.append(target.copy())
            if len(tranches) > schedule.tranches:
                tranches.pop(0)
            post = aggregate()
            to = math.nan if len(records) == 0 else turnover_at_rebalance(pre, post)
            names = [a for a, x in zip(panel.assets, target) if x > 0]
            tw = WeightVector(tuple(names), target[target > 0]) if names else None
            records.append(RebalanceRecord(k, panel.dates[k], tw, to, tuple(flags)))
        w_agg = aggregate()
        out_w[i] = w_agg
        counts[i] = len(tranches)
        r_t = ret[t]
        out_r[i] = float(np.dot(w_agg, r_t))
        # drift each tranche
        for q, w in enumerate(tranches):
            grown = w * (1.0 + r_t)
            total = grown.sum()
            tranches[q] = grown / total if total > 0 else grown
        # delisting: move weight of assets whose data end today onto the rest
        gone = np.flatnonzero(last_valid == t) if t < n - 1 else ()
        for j in gone:
            for q, w in enumerate(tranches):
                if w[j] > 0:
                    rest = w.copy()
                    rest[j] = 0.0
                    if rest.sum() > 0:
                        tranches[q] = rest / rest.sum()
                    msg = f"delisted:{panel.assets[j]}@{panel.dates[t]}"
                    if msg not in run_flags:
                        run_flags.append(msg)
    dates = panel.dates[list(hold_rows)]
    st = None
    if summarize_stats:
        tos = [r.turnover for r in records if not math.isnan(r.turnover)]
        st = summarize(out_r, rf_daily[list(hold_rows)], tos)
    return BacktestReport(
        strategy=strategy,
        assets=panel.assets,
        dates=dates,
        daily_returns=out_r,
        weights=out_w,
        tranche_counts=counts,
        rebalance_log=tuple(records),
        stats=st,
        flags=tuple(run_flags),
    )


def _rf_array(rf, dates):
    if isinstance(rf, RiskFreeSeries):
        return np.asarray(rf.align(dates), dtype=float)
    arr = np.asarray(rf, dtype=float)
    if arr.ndim == 0:
        return np.full(len(dates), float(arr))
    if len(arr) != len(dates):
        raise ValidationError("risk-free array length differs from panel dates")
    return arr


def _safe(fn, *args):
    try:
        return fn(*args)
    except (UndefinedMeasureError, InsufficientDataError):
        return math.nan


def summarize(daily_returns, rf=0.0, turnovers=(), conditional=True) -> SummaryStats:
    """Table-style statistics of a daily return series.

    Means and volatilities are annualized with 252 days and expressed in
    percent. VaR and CVaR are daily, in percent, on excess returns.
    Conditional Sharpe averages the fitted ARMA-GARCH conditional means and
    volatilities over the sample.
    """
    r = np.asarray(daily_returns, dtype=float)
    if len(r) < TRADING_DAYS:
        raise InsufficientDataError(f"summarize needs at least {TRADING_DAYS} observations, got {len(r)}")
    rf = np.broadcast_to(np.asarray(rf, dtype=float), r.shape) if np.ndim(rf) == 0 else np.asarray(rf, dtype=float)
    flags = []
    mean_ann = float(np.mean(r)) * TRADING_DAYS * 100
    std_ann = measures.volatility(r) * math.sqrt(TRADING_DAYS) * 100
    if np.ptp(r) == 0.0:
        skew = kurt = math.nan
    else:
        skew = float(stats.skew(r))
        kurt = float(stats.kurtosis(r, fisher=True))
    cum = measures.cumulative_return(r) * 100
    sh = _safe(measures.sharpe, r, rf)
    sharpe_ann = sh * math.sqrt(TRADING_DAYS)
    mdd_pct = measures.max_drawdown(r) * 100
    if mdd_pct > 0:
        calmar_full = mean_ann / mdd_pct
    else:
        calmar_full = math.nan
        flags.append("calmar-undefined")
    cond = math.nan
    if conditional:
        try:
            f = armagarch.fit(r, fit_innovations=False)
            cond = (float(np.mean(f.cond_means)) - float(np.mean(rf))) / float(np.mean(f.cond_sigmas))
            cond *= math.sqrt(TRADING_DAYS)
        except DrrpError as exc:
            flags.append(f"cond-sharpe-omitted:{type(exc).__name__}")
    v95 = _safe(measures.empirical_var, r, rf, 0.05)
    v99 = _safe(measures.empirical_var, r, rf, 0.01)
    c95 = _safe(measures.empirical_cvar, r, rf, 0.05)
    c99 = _safe(measures.empirical_cvar, r, rf, 0.01)
    to = float(np.mean(turnovers)) * 100 if len(turnovers) else math.nan
    return SummaryStats(
        mean_ann=mean_ann,
        std_ann=std_ann,
        skew=skew,
        excess_kurtosis=kurt,
        cumulative_pct=cum,
        sharpe_ann=sharpe_ann,
        cond_sharpe_ann=cond,
        calmar_full=calmar_full,
        mdd_pct=mdd_pct,
        var95_daily_pct=v95 * 100,
        cvar95_daily_pct=c95 * 100,
        var_95_99_ratio=v95 / v99 if v99 else math.nan,
        cvar_95_99_ratio=c95 / c99 if c99 else math.nan,
        turnover_pct=to,
        flags=tuple(flags),
    )
