"""Monthly aggregation and Carhart four-factor regressions."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ParseError, RankDeficientError, ValidationError

log = logging.getLogger(__name__)

FACTOR_NAMES = ("mkt_rf", "smb", "hml", "mom")
FACTOR_HEADER = ("date", "Mkt-RF", "SMB", "HML", "MOM", "RF")
MIN_MONTH_DAYS = 15
MIN_MONTHS = 24
# two-sided normal critical values for 5% and 1%
STAR_LEVELS = ((2.5758293035489004, "**"), (1.959963984540054, "*"))


def _months(dates):
    return np.asarray(dates, dtype="datetime64[D]").astype("datetime64[M]")


@dataclass(frozen=True)
class MonthlySeries:
    months: np.ndarray
    values: np.ndarray
    dropped: tuple = ()


def to_monthly(dates, daily_returns, min_days=MIN_MONTH_DAYS):
    """Compound daily simple returns into calendar-month percent returns.

    A first or last month with fewer than ``min_days`` observations is
    dropped and listed in ``dropped``; interior months are always kept.
    """
    m = _months(dates)
    r = np.asarray(daily_returns, dtype=float)
    if len(m) != len(r):
        raise ValidationError("dates and returns differ in length")
    if len(r) == 0:
        raise InsufficientDataError("no daily returns to aggregate")
    if np.any(np.diff(np.asarray(dates, dtype="datetime64[D]")) <= np.timedelta64(0, "D")):
        raise ValidationError("dates must be strictly increasing")
    months, start, counts = np.unique(m, return_index=True, return_counts=True)
    vals = np.array([(np.prod(1.0 + r[s : s + c]) - 1.0) * 100 for s, c in zip(start, counts)])
    keep = np.ones(len(months), dtype=bool)
    for i in {0, len(months) - 1}:
        if counts[i] < min_days:
            keep[i] = False
    dropped = tuple(str(x) for x in months[~keep])
    if dropped:
        log.info("dropped partial edge months: %s", ", ".join(dropped))
    return MonthlySeries(months[keep], vals[keep], dropped)


@dataclass(frozen=True)
class FactorPanel:
    """Monthly factor returns in percent."""

    months: np.ndarray
    mkt_rf: np.ndarray
    smb: np.ndarray
    hml: np.ndarray
    mom: np.ndarray
    rf: np.ndarray

    def __post_init__(self):
        months = np.asarray(self.months, dtype="datetime64[M]")
        object.__setattr__(self, "months", months)
        for name in (*FACTOR_NAMES, "rf"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != months.shape:
                raise ValidationError(f"factor column {name} has the wrong length")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"factor column {name} has non-finite values")
            object.__setattr__(self, name, a)
        if len(months) > 1 and np.any(np.diff(months) != np.timedelta64(1, "M")):
            raise ValidationError("factor months must be consecutive without gaps")

    def matrix(self):
        return np.column_stack([getattr(self, n) for n in FACTOR_NAMES])


def _parse_factor_date(text, line, path):
    s = text.strip()
    try:
        if len(s) == 8 and s.isdigit():
            return np.datetime64(f"{s[:4]}-{s[4:6]}-{s[6:]}", "D"), "D"
        if len(s) == 6 and s.isdigit():
            return np.datetime64(f"{s[:4]}-{s[4:]}", "M"), "M"
        if len(s) == 7:
            return np.datetime64(s, "M"), "M"
        return np.datetime64(s, "D"), "D"
    except ValueError:
        raise ParseError(f"bad date {text!r}", line=line, path=path) from None


def load_factors(path) -> FactorPanel:
    """Read ``date,Mkt-RF,SMB,HML,MOM,RF`` (percent) at daily or monthly frequency.

    Dates may be ``YYYYMMDD``, ``YYYYMM``, ``YYYY-MM`` or ISO days. Daily rows
    are compounded into months.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FACTOR_HEADER:
            raise ParseError(f"expected header {','.join(FACTOR_HEADER)}", line=1, path=path)
        for line, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(FACTOR_HEADER):
                raise ParseError(f"expected {len(FACTOR_HEADER)} fields, got {len(row)}", line=line, path=path)
            d, unit = _parse_factor_date(row[0], line, path)
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError:
                raise ParseError("non-numeric factor value", line=line, path=path) from None
            rows.append((d, unit, vals))
    if not rows:
        raise InsufficientDataError(f"{path}: no factor rows")
    units = {u for _, u, _ in rows}
    if len(units) > 1:
        raise ParseError("mixed daily and monthly rows", path=path)
    dates = np.array([d for d, _, _ in rows])
    data = np.array([v for _, _, v in rows])
    order = np.argsort(dates, kind="stable")
    dates, data = dates[order], data[order]
    if np.any(dates[1:] == dates[:-1]):
        raise ParseError("duplicate factor date", path=path)
    if units == {"D"}:
        cols = [to_monthly(dates, data[:, c] / 100.0, min_days=1) for c in range(data.shape[1])]
        months = cols[0].months
        data = np.column_stack([c.values for c in cols])
    else:
        months = dates.astype("datetime64[M]")
    return FactorPanel(months, *(data[:, c] for c in range(5)))


def write_factors(panel: FactorPanel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FACTOR_HEADER)
        for i, m in enumerate(panel.months):
            w.writerow([str(m)] + [repr(float(getattr(panel, n)[i])) for n in (*FACTOR_NAMES, "rf")])


def stars_for(t, levels=STAR_LEVELS):
    for crit, mark in levels:
        if abs(t) >= crit:
            return mark
    return ""


@dataclass(frozen=True)
class RegressionResult:
    alpha: float
    betas: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    stars: tuple
    r_squared: float
    n_obs: int
    residuals: np.ndarray

    @property
    def coefficients(self):
        return np.concatenate(([self.alpha], self.betas))


def ols(y, X, levels=STAR_LEVELS):
    """OLS with an intercept prepended; plain (homoskedastic) standard errors."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n = len(y)
    Z = np.column_stack([np.ones(n), X])
    k = Z.shape[1]
    if n <= k:
        raise InsufficientDataError(f"need more than {k} observations, got {n}")
    rank = np.linalg.matrix_rank(Z)
    if rank < k:
        raise RankDeficientError(f"design matrix has rank {rank} < {k}")
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    sse = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    s2 = sse / (n - k)
    cov = s2 * np.linalg.inv(Z.T @ Z)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.copysign(np.inf, coef)))
    return RegressionResult(
        alpha=float(coef[0]),
        betas=coef[1:],
        std_errors=se,
        t_stats=t,
        stars=tuple(stars_for(x, levels) for x in t),
        r_squared=r2,
        n_obs=n,
        residuals=resid,
    )


def carhart_regress(portfolio: MonthlySeries, factors: FactorPanel, min_months=MIN_MONTHS, levels=STAR_LEVELS):
    """Regress excess monthly portfolio returns on the four factors over common months."""
    common, ip, iff = np.intersect1d(portfolio.months, factors.months, return_indices=True)
    if len(common) < min_months:
        raise InsufficientDataError(f"only {len(common)} overlapping months; need {min_months}")
    y = portfolio.values[ip] - factors.rf[iff]
    X = factors.matrix()[iff]
    if len(y) != len(X):
        raise ValidationError("portfolio and factor lengths differ after intersection")
    return ols(y, X, levels)


def format_coef(value, star, digits=4):
    if math.isnan(value):
        return ""
    return f"{value:.{digits}f}{star}"
