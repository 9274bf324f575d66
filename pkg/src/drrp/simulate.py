"""Deterministic synthetic universes for tests and demonstrations.

A universe descriptor is a JSON object::

    {
      "days": 640,                      # price observations per full-span asset
      "start": "2015-01-02",            # first business day
      "risk_free_percent": 2.0,         # flat annual yield, or
      "risk_free": {"start": 2.0, "vol": 0.02},   # random walk in percent
      "factors": {"mkt_vol": 1.0, "other_vol": 0.5},  # daily percent vols
      "assets": [
        {"ticker": "AAA", "price0": 100.0, "beta": 0.8,
         "garch": {"c": 3e-4, "ar": 0.0, "ma": 0.0, "omega": 2e-6, "arch": 0.08, "garch": 0.9},
         "cts": {"alpha": 1.3, "lambda_plus": 2.0, "lambda_minus": 1.5},
         "first_day": 0, "last_day": null, "gaps": [[100, 3]]}
      ],
      "membership": [{"ticker": "AAA", "start": 0, "end": null}]
    }

Innovations are unit-variance CTS when ``cts`` is given, else Student-t with
``garch.nu`` degrees of freedom. ``beta`` adds ``beta * Mkt`` to the asset's
daily return so factor regressions have something to find. Day indices in
``first_day``, ``last_day``, ``gaps`` and ``membership`` refer to the
business-day calendar. Each asset draws from its own named random stream, so
adding an asset never changes another asset's path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import armagarch, cts
from .errors import ConfigError, ValidationError
from .factoranalysis import FactorPanel, to_monthly, write_factors
from .marketdata import PriceSeries, UniverseMembership, write_membership, write_prices, write_risk_free_yields

log = logging.getLogger(__name__)


def named_rng(seed, *names):
    """Generator for a stream identified by ``names`` under a master ``seed``."""
    digest = hashlib.sha256("/".join(str(n) for n in names).encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))


@dataclass(frozen=True)
class Universe:
    prices: list
    membership: list
    dates: np.ndarray
    risk_free_percent: np.ndarray
    factors: FactorPanel | None


def _asset_params(spec):
    g = dict(spec.get("garch", {}))
    g.setdefault("c", 0.0)
    g.setdefault("ar", 0.0)
    g.setdefault("ma", 0.0)
    g.setdefault("nu", 8.0)
    try:
        params = armagarch.ArmaGarchParams(
            float(g["c"]), float(g["ar"]), float(g["ma"]), float(g["omega"]), float(g["arch"]), float(g["garch"]), float(g["nu"])
        )
    except KeyError as exc:
        raise ValidationError(f"asset {spec.get('ticker')!r}: garch spec missing {exc}") from None
    law = None
    if "cts" in spec:
        c = spec["cts"]
        law = armagarch.CtsLaw(cts.CtsParams.standard(float(c["alpha"]), float(c["lambda_plus"]), float(c["lambda_minus"])))
    return params, law


def generate(desc: dict, seed) -> Universe:
    """Build the universe described by ``desc``; identical for identical ``seed``."""
    try:
        days = int(desc["days"])
        assets = desc["assets"]
    except KeyError as exc:
        raise ValidationError(f"universe descriptor missing {exc}") from None
    if days < 2:
        raise ValidationError("days must be at least 2")
    if not assets:
        raise ValidationError("universe needs at least one asset")
    start = np.datetime64(desc.get("start", "2015-01-02"), "D")
    first = np.busday_offset(start, 0, roll="forward")
    dates = np.busday_offset(first, np.arange(days), roll="forward")

    fac = desc.get("factors") or {}
    frng = named_rng(seed, "factors")
    mkt_vol = float(fac.get("mkt_vol", 1.0))
    other_vol = float(fac.get("other_vol", 0.5))
    daily_f = np.column_stack(
        [frng.normal(0.03, mkt_vol, days)] + [frng.normal(0.0, other_vol, days) for _ in range(3)]
    )

    if "risk_free" in desc:
        rf0 = float(desc["risk_free"].get("start", 2.0))
        rvol = float(desc["risk_free"].get("vol", 0.02))
        steps = named_rng(seed, "risk_free").normal(0.0, rvol, days)
        rf_pct = np.maximum(rf0 + np.cumsum(steps), 0.0)
    else:
        rf_pct = np.full(days, float(desc.get("risk_free_percent", 2.0)))

    tickers = [a["ticker"] for a in assets]
    if len(set(tickers)) != len(tickers):
        raise ValidationError("duplicate ticker in universe descriptor")
    series = []
    for spec in assets:
        tk = spec["ticker"]
        params, law = _asset_params(spec)
        rng = named_rng(seed, "asset", tk)
        sim = armagarch.simulate(params, days - 1, rng, law=law)
        r = sim.returns + float(spec.get("beta", 0.0)) * daily_f[1:, 0] / 100.0
        if np.any(r <= -1.0):
            raise ValidationError(f"asset {tk}: simulated return below -100%")
        p0 = float(spec.get("price0", 100.0))
        prices = p0 * np.concatenate(([1.0], np.cumprod(1.0 + r)))
        keep = np.zeros(days, dtype=bool)
        lo = int(spec.get("first_day", 0))
        hi = spec.get("last_day")
        hi = days - 1 if hi is None else int(hi)
        keep[lo : hi + 1] = True
        for g0, glen in spec.get("gaps", ()):
            keep[int(g0) : int(g0) + int(glen)] = False
        series.append(PriceSeries(tk, dates[keep], prices[keep]))

    membership = []
    end_cap = np.busday_offset(dates[-1], 1, roll="forward")
    spans = desc.get("membership")
    if spans is None:
        spans = [{"ticker": s.ticker, "start": None, "end": None} for s in series]
    for m in spans:
        s0 = dates[int(m["start"])] if m.get("start") is not None else dates[0]
        e0 = dates[int(m["end"])] if m.get("end") is not None else end_cap
        membership.append(UniverseMembership(m["ticker"], s0, e0))

    mf = [to_monthly(dates, daily_f[:, c] / 100.0, min_days=1) for c in range(4)]
    rf_daily = rf_pct / 100.0 / 252.0
    mrf = to_monthly(dates, rf_daily, min_days=1)
    factors = FactorPanel(mf[0].months, *(x.values for x in mf), mrf.values)
    return Universe(series, membership, dates, rf_pct, factors)


def write_universe(u: Universe, out_dir):
    """Write ``prices.csv``, ``membership.csv``, ``risk_free.csv`` and ``factors.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "prices": os.path.join(out_dir, "prices.csv"),
        "membership": os.path.join(out_dir, "membership.csv"),
        "risk_free": os.path.join(out_dir, "risk_free.csv"),
        "factors": os.path.join(out_dir, "factors.csv"),
    }
    write_prices(u.prices, paths["prices"])
    write_membership(u.membership, paths["membership"])
    write_risk_free_yields(u.dates, u.risk_free_percent, paths["risk_free"])
    write_factors(u.factors, paths["factors"])
    return paths


def load_descriptor(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"universe descriptor not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
