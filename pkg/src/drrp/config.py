"""Flat ``key = value`` run configuration.

Example::

    prices     = data/prices.csv
    membership = data/membership.csv
    risk_free  = data/risk_free.csv
    factors    = data/factors.csv
    output_dir = out
    seed       = 7
    model      = cts
    strategy   = rule=ratio-raw measure=sharpe source=empirical
    strategy   = rule=ratio-linear:a=1,b=1 measure=rachev eta=0.5 zeta=0.1

Relative paths resolve against the config file's directory. ``strategy`` may
repeat; each line holds whitespace-separated ``name=value`` tokens. A strategy
without ``source`` takes it from ``model`` (``historical`` means empirical,
``cts`` means the ARMA-GARCH-CTS model), except that drawdown-based measures
are always empirical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .allocation import AllocationRule, check_rule_for_measure, parse_rule
from .backtest import Schedule, Strategy
from .errors import ConfigError, ValidationError
from .measures import PATH_KINDS, MeasureKind, MeasureSpec, Source

PATH_KEYS = ("prices", "membership", "risk_free", "factors", "output_dir")
SCHEDULE_KEYS = ("formation", "holding", "step", "tranches", "min_coverage")
SCALAR_KEYS = ("seed", "model")
MODELS = {"historical": Source.EMPIRICAL, "cts": Source.MODEL}

MEASURE_ALIASES = {
    "std": MeasureKind.VOLATILITY,
    "vol": MeasureKind.VOLATILITY,
    "mdd": MeasureKind.MAX_DRAWDOWN,
    "maxdd": MeasureKind.MAX_DRAWDOWN,
}


@dataclass(frozen=True)
class RunConfig:
    prices: str
    output_dir: str
    membership: str | None = None
    risk_free: str | None = None
    factors: str | None = None
    schedule: Schedule = field(default_factory=Schedule)
    strategies: tuple = ()
    model: str = "cts"
    seed: int = 0
    source_path: str | None = None
    echo: tuple = ()

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def check_paths(self):
        """Raise :class:`ConfigError` naming the first missing input path."""
        for key in ("prices", "membership", "risk_free"):
            p = getattr(self, key)
            if p is not None and not os.path.isfile(p):
                raise ConfigError(f"{key} file not found: {p}")


def _parse_measure(name):
    name = name.strip().lower()
    if name in MEASURE_ALIASES:
        return MEASURE_ALIASES[name]
    try:
        return MeasureKind(name)
    except ValueError:
        known = ", ".join(k.value for k in MeasureKind)
        raise ConfigError(f"unknown measure {name!r} (known: {known})") from None


def parse_strategy(text, default_source=Source.MODEL) -> Strategy:
    fields = {}
    for tok in text.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ConfigError(f"strategy token {tok!r} is not name=value")
        if key in fields:
            raise ConfigError(f"strategy repeats {key!r}: {text!r}")
        fields[key] = val
    unknown = set(fields) - {"rule", "measure", "eta", "zeta", "source"}
    if unknown:
        raise ConfigError(f"unknown strategy field(s) {sorted(unknown)} in {text!r}")
    if "rule" not in fields:
        raise ConfigError(f"strategy needs rule=...: {text!r}")
    rule = parse_rule(fields["rule"])
    if "measure" not in fields:
        if rule.family.value != "equal":
            raise ConfigError(f"strategy needs measure=...: {text!r}")
        return Strategy.equal_weight()
    kind = _parse_measure(fields["measure"])
    if "source" in fields:
        try:
            source = Source(fields["source"])
        except ValueError:
            raise ConfigError(f"source must be empirical or model, got {fields['source']!r}") from None
    else:
        source = Source.EMPIRICAL if kind in PATH_KINDS else default_source
    try:
        eta = float(fields.get("eta", 0.05))
        zeta = float(fields.get("zeta", 0.05))
        spec = MeasureSpec(kind, eta, zeta, source)
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"bad measure in {text!r}: {exc}") from None
    check_rule_for_measure(kind, rule)
    return Strategy(rule, spec)


def parse_config(text, base_dir=".", source_path=None) -> RunConfig:
    values = {}
    strategies = []
    echo = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {line_no}: expected key = value")
        echo.append((key, val))
        if key == "strategy":
            strategies.append((line_no, val))
        elif key in PATH_KEYS or key in SCHEDULE_KEYS or key in SCALAR_KEYS:
            if key in values:
                raise ConfigError(f"line {line_no}: duplicate key {key!r}")
            values[key] = val
        else:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
    model = values.get("model", "cts")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {sorted(MODELS)}, got {model!r}")
    parsed = []
    for line_no, val in strategies:
        try:
            parsed.append(parse_strategy(val, MODELS[model]))
        except ConfigError as exc:
            raise ConfigError(f"line {line_no}: {exc}") from None
    if not parsed:
        raise ConfigError("config lists no strategy")
    keys = [s.key for s in parsed]
    if len(set(keys)) != len(keys):
        raise ConfigError("config lists the same strategy twice")
    for key in ("prices", "output_dir"):
        if key not in values:
            raise ConfigError(f"config is missing {key!r}")

    def path(key):
        v = values.get(key)
        if v is None:
            return None
        return v if os.path.isabs(v) else os.path.normpath(os.path.join(base_dir, v))

    sched = {}
    try:
        for key in SCHEDULE_KEYS:
            if key in values:
                sched[key] = float(values[key]) if key == "min_coverage" else int(values[key])
        schedule = Schedule(**sched)
        seed = int(values.get("seed", 0))
    except (ValueError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        prices=path("prices"),
        output_dir=path("output_dir"),
        membership=path("membership"),
        risk_free=path("risk_free"),
        factors=path("factors"),
        schedule=schedule,
        strategies=tuple(parsed),
        model=model,
        seed=seed,
        source_path=source_path,
        echo=tuple(echo),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)), source_path=path)


def with_benchmark(strategies):
    """Strategy list with the equal-weight benchmark first, exactly once."""
    rest = [s for s in strategies if s.measure is not None]
    return (Strategy(AllocationRule.equal()), *rest)
