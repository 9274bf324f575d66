"""Loading, validating and aligning daily market data.

All file formats are plain UTF-8 CSV with a header row:

* prices: ``date,ticker,adj_close``
* membership: ``ticker,start_date,end_date``
* risk-free: ``date,annual_yield_percent``

Dates are ISO-8601 (``YYYY-MM-DD``). Arrays held by the panel objects are
made read-only so a panel can be shared between concurrent readers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
MONTH_DAYS = 21
SIX_MONTHS = 126
DEFAULT_MIN_COVERAGE = 0.9

PRICE_HEADER = ("date", "ticker", "adj_close")
MEMBERSHIP_HEADER = ("ticker", "start_date", "end_date")
RISK_FREE_HEADER = ("date", "annual_yield_percent")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def parse_date(text):
    try:
        return np.datetime64(text.strip(), "D")
    except ValueError as exc:
        raise ValueError(f"bad date {text!r}") from exc


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        prices = np.asarray(self.prices, dtype=float)
        if dates.shape != prices.shape or dates.ndim != 1:
            raise ValidationError(f"{self.ticker}: dates and prices must be 1-d and equal length")
        if len(dates) > 1:
            step = np.diff(dates).astype(np.int64)
            if np.any(step == 0):
                dup = dates[1:][step == 0][0]
                raise ValidationError(f"{self.ticker}: duplicate date {dup}")
            if np.any(step < 0):
                raise ValidationError(f"{self.ticker}: dates not strictly increasing")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise ValidationError(f"{self.ticker}: prices must be finite and positive")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "prices", _frozen(prices))

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class UniverseMembership:
    """Index membership of ``ticker`` on the half-open interval [start, end).

    A replacement joining on the day another constituent leaves is therefore
    the only member of the two on that day.
    """

    ticker: str
    start_date: np.datetime64
    end_date: np.datetime64

    def __post_init__(self):
        start = np.datetime64(self.start_date, "D")
        end = np.datetime64(self.end_date, "D")
        if start > end:
            raise ValidationError(f"{self.ticker}: start_date {start} after end_date {end}")
        object.__setattr__(self, "start_date", start)
        object.__setattr__(self, "end_date", end)

    def contains(self, dates):
        dates = np.asarray(dates, dtype="datetime64[D]")
        return (dates >= self.start_date) & (dates < self.end_date)


@dataclass(frozen=True)
class RiskFreeSeries:
    dates: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        rates = np.asarray(self.rates, dtype=float)
        if dates.shape != rates.shape:
            raise ValidationError("risk-free dates and rates differ in length")
        if len(dates) > 1 and np.any(np.diff(dates).astype(np.int64) <= 0):
            raise ValidationError("risk-free dates not strictly increasing")
        if not np.all(np.isfinite(rates)):
            raise ValidationError("risk-free rates must be finite")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "rates", _frozen(rates))

    @classmethod
    def constant(cls, dates, rate=0.0):
        dates = np.asarray(dates, dtype="datetime64[D]")
        return cls(dates, np.full(len(dates), float(rate)))

    def align(self, dates):
        """Daily rates on ``dates``, carrying the last prior quote forward.

        Dates before the first quote take the first quote.
        """
        dates = np.asarray(dates, dtype="datetime64[D]")
        if len(self.dates) == 0:
            raise InsufficientDataError("empty risk-free series")
        idx = np.searchsorted(self.dates, dates, side="right") - 1
        if np.any(idx < 0):
            logger.warning("risk-free series starts after %s; back-filling first quote", dates[0])
        return self.rates[np.clip(idx, 0, None)]


@dataclass(frozen=True)
class ReturnPanel:
    """Simple daily returns on a shared calendar.

    ``returns`` holds NaN wherever an asset has no return on that date;
    ``member`` records index membership. ``mask`` is their conjunction.
    """

    dates: np.ndarray
    assets: tuple
    returns: np.ndarray
    member: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        returns = np.asarray(self.returns, dtype=float)
        member = np.asarray(self.member, dtype=bool)
        assets = tuple(self.assets)
        if returns.shape != (len(dates), len(assets)) or member.shape != returns.shape:
            raise ValidationError("panel matrix shape does not match dates x assets")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "returns", _frozen(returns))
        object.__setattr__(self, "member", _frozen(member))

    @property
    def valid(self):
        return np.isfinite(self.returns)

    @property
    def mask(self):
        return self.member & np.isfinite(self.returns)

    def index_of(self, date):
        date = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, date))
        if i >= len(self.dates) or self.dates[i] != date:
            raise KeyError(f"{date} not in panel")
        return i

    def column(self, ticker):
        return self.assets.index(ticker)

    def subset(self, tickers):
        cols = [self.column(t) for t in tickers]
        return ReturnPanel(self.dates, tuple(tickers), self.returns[:, cols], self.member[:, cols])

    def __eq__(self, other):
        if not isinstance(other, ReturnPanel):
            return NotImplemented
        return (
            self.assets == other.assets
            and np.array_equal(self.dates, other.dates)
            and np.array_equal(self.member, other.member)
            and self.returns.tobytes() == other.returns.tobytes()
        )

    __hash__ = None


def _read_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1, path=path) from None
        got = tuple(h.strip() for h in first)
        if got[: len(header)] != header:
            raise ParseError(f"expected header {','.join(header)}, got {','.join(got)}", line=1, path=path)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=reader.line_num, path=path)
            yield reader.line_num, [c.strip() for c in row]


def load_prices(path):
    """Read a long-format price CSV into one validated series per ticker."""
    by_ticker = {}
    seen = {}
    for line, (d, ticker, px) in _read_rows(path, PRICE_HEADER):
        try:
            date = parse_date(d)
            price = float(px)
        except ValueError as exc:
            raise ParseError(str(exc), line=line, path=path) from None
        if not ticker:
            raise ParseError("empty ticker", line=line, path=path)
        if not math.isfinite(price) or price <= 0:
            raise ValidationError(f"{path}:{line}: non-positive price {px!r} for {ticker}")
        key = (ticker, date)
        if key in seen:
            raise ValidationError(
                f"{path}:{line}: duplicate row for {ticker} on {date} (first seen on line {seen[key]})"
            )
        seen[key] = line
        by_ticker.setdefault(ticker, []).append((date, price))
    out = []
    for ticker in sorted(by_ticker):
        obs = sorted(by_ticker[ticker], key=lambda o: o[0])
        out.append(PriceSeries(ticker, [o[0] for o in obs], [o[1] for o in obs]))
    return out


def load_membership(path):
    out = []
    for line, (ticker, start, end) in _read_rows(path, MEMBERSHIP_HEADER):
        try:
            m = UniverseMembership(ticker, parse_date(start), parse_date(end))
        except ValueError as exc:
            raise ParseError(str(exc), line=line, path=path) from None
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from None
        out.append(m)
    _check_non_overlapping(out)
    return out


def _check_non_overlapping(membership):
    by_ticker = {}
    for m in membership:
        by_ticker.setdefault(m.ticker, []).append(m)
    for ticker, spans in by_ticker.items():
        spans.sort(key=lambda m: m.start_date)
        for a, b in zip(spans, spans[1:]):
            if b.start_date < a.end_date:
                raise ValidationError(f"{ticker}: overlapping membership intervals")


def load_risk_free(path):
    raw = []
    for line, (d, y) in _read_rows(path, RISK_FREE_HEADER):
        try:
            raw.append((parse_date(d), float(y)))
        except ValueError as exc:
            raise ParseError(str(exc), line=line, path=path) from None
    raw.sort(key=lambda o: o[0])
    return daily_risk_free(raw)


def daily_risk_free(raw_yields):
    """Convert annual percentage yields to per-day rates, ``(y / 100) / 252``."""
    dates, rates = [], []
    for date, y in raw_yields:
        y = float(y)
        if y < 0:
            logger.warning("negative yield %s on %s passed through", y, date)
        dates.append(np.datetime64(date, "D"))
        rates.append(y / 100.0 / TRADING_DAYS)
    return RiskFreeSeries(np.array(dates, dtype="datetime64[D]"), np.array(rates))


def compute_returns(prices):
    """Simple returns ``P_t / P_{t-1} - 1`` of a price series or array."""
    p = prices.prices if isinstance(prices, PriceSeries) else np.asarray(prices, dtype=float)
    if len(p) < 2:
        raise InsufficientDataError("need at least two prices to compute a return")
    return p[1:] / p[:-1] - 1.0


def align_panel(series: Sequence[PriceSeries], membership: Iterable[UniverseMembership] | None = None):
    """Place every series on the union trading calendar.

    Returns are computed between consecutive observed prices of each ticker and
    stamped on the later date, so a gap yields NaN on the missing days and one
    return spanning the gap afterwards. Nothing is forward-filled. With
    ``membership`` given, a ticker is a member only inside its intervals and
    tickers that are never members on the calendar are dropped.
    """
    series = list(series)
    if not series:
        raise InsufficientDataError("align_panel needs at least one price series")
    spans = None
    if membership is not None:
        spans = {}
        for m in membership:
            spans.setdefault(m.ticker, []).append(m)

    def member_mask(ticker, dates):
        if spans is None:
            return np.ones(len(dates), dtype=bool)
        mask = np.zeros(len(dates), dtype=bool)
        for m in spans.get(ticker, ()):
            mask |= m.contains(dates)
        return mask

    kept = [s for s in series if member_mask(s.ticker, s.dates).any()]
    dropped = sorted({s.ticker for s in series} - {s.ticker for s in kept})
    if dropped:
        logger.info("excluded tickers never in the universe: %s", ", ".join(dropped))
    if not kept:
        raise InsufficientDataError("no ticker is a universe member on any of its price dates")
    kept.sort(key=lambda s: s.ticker)
    calendar = np.unique(np.concatenate([s.dates for s in kept]))
    if len(calendar) == 0:
        raise InsufficientDataError("empty trading calendar")

    returns = np.full((len(calendar), len(kept)), np.nan)
    member = np.zeros_like(returns, dtype=bool)
    for j, s in enumerate(kept):
        pos = np.searchsorted(calendar, s.dates)
        if len(s) >= 2:
            returns[pos[1:], j] = compute_returns(s)
        member[:, j] = member_mask(s.ticker, calendar)
    return ReturnPanel(calendar, tuple(s.ticker for s in kept), returns, member)


def active_universe(panel, date, lookback_days=SIX_MONTHS, min_coverage=DEFAULT_MIN_COVERAGE):
    """Tickers investable when forming a portfolio on ``date``.

    An asset qualifies when it is an index member on ``date`` and has a valid
    return on at least ``min_coverage`` of the ``lookback_days`` dates ending
    at ``date`` (inclusive).
    """
    if lookback_days < 1:
        raise ValueError("lookback_days must be >= 1")
    i = panel.index_of(date) if not isinstance(date, (int, np.integer)) else int(date)
    lo = max(0, i - lookback_days + 1)
    counts = np.isfinite(panel.returns[lo : i + 1]).sum(axis=0)
    ok = (counts >= min_coverage * lookback_days - 1e-9) & panel.member[i]
    tickers = [t for t, flag in zip(panel.assets, ok) if flag]
    if not tickers:
        raise InsufficientDataError(f"no investable assets on {panel.dates[i]}")
    return tickers


def _fmt(x):
    return repr(float(x))


def write_prices(series, path):
    rows = []
    for s in series:
        rows.extend((str(d), s.ticker, _fmt(p)) for d, p in zip(s.dates, s.prices))
    rows.sort()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_HEADER)
        w.writerows(rows)


def write_membership(membership, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEMBERSHIP_HEADER)
        for m in membership:
            w.writerow((m.ticker, str(m.start_date), str(m.end_date)))


def write_risk_free_yields(dates, annual_percent, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RISK_FREE_HEADER)
        for d, y in zip(dates, annual_percent):
            w.writerow((str(np.datetime64(d, "D")), _fmt(y)))


def write_panel(panel, path):
    """Long CSV ``date,ticker,return,member``; floats use round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "ticker", "return", "member"))
        for i, d in enumerate(panel.dates):
            for j, t in enumerate(panel.assets):
                w.writerow((str(d), t, _fmt(panel.returns[i, j]), int(panel.member[i, j])))


def read_panel(path):
    cells = {}
    dates, assets = [], []
    for line, (d, t, r, m) in _read_rows(path, ("date", "ticker", "return", "member")):
        try:
            date = parse_date(d)
            cells[(date, t)] = (float(r), m == "1")
        except ValueError as exc:
            raise ParseError(str(exc), line=line, path=path) from None
        if not dates or dates[-1] != date:
            dates.append(date)
        if t not in assets:
            assets.append(t)
    dates = np.array(dates, dtype="datetime64[D]")
    returns = np.full((len(dates), len(assets)), np.nan)
    member = np.zeros_like(returns, dtype=bool)
    for i, d in enumerate(dates):
        for j, t in enumerate(assets):
            returns[i, j], member[i, j] = cells[(d, t)]
    return ReturnPanel(dates, tuple(assets), returns, member)
