"""Map per-asset measure values to long-only portfolio weights.

Each rule turns a measure ``rho_i`` into a non-negative score ``Phi(rho_i)``
and the weights are the normalized scores. Ratio measures (higher is better)
use the ``Ratio*`` families; risk measures (lower is better) use ``Risk*``.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidMeasureError, NumericError, ValidationError
from .measures import MeasureKind

log = logging.getLogger(__name__)

# cap for the Calmar +inf sentinel, relative to the median positive score
SENTINEL_CAP = 1e6


class Family(str, enum.Enum):
    EQUAL = "equal"
    RATIO_RAW = "ratio-raw"
    RATIO_LINEAR = "ratio-linear"
    RATIO_FLOOR_ALL = "ratio-floor-all"
    RISK_INVERSE = "risk-inverse"
    RISK_LINEAR = "risk-linear"
    RISK_INVERSE_LINEAR = "risk-inverse-linear"


RATIO_FAMILIES = frozenset({Family.RATIO_RAW, Family.RATIO_LINEAR, Family.RATIO_FLOOR_ALL})
RISK_FAMILIES = frozenset({Family.RISK_INVERSE, Family.RISK_LINEAR, Family.RISK_INVERSE_LINEAR})

_DEFAULT_AB = {
    Family.EQUAL: (0.0, 0.0),
    Family.RATIO_RAW: (0.0, 1.0),
    Family.RATIO_LINEAR: (1.0, 1.0),
    Family.RATIO_FLOOR_ALL: (1.0, 1.0),
    Family.RISK_INVERSE: (0.0, 1.0),
    Family.RISK_LINEAR: (1.0, 1.0),
    Family.RISK_INVERSE_LINEAR: (1.0, 1.0),
}

_LABELS = {
    Family.EQUAL: "1",
    Family.RATIO_RAW: "rho|+",
    Family.RATIO_LINEAR: "1+rho|+",
    Family.RATIO_FLOOR_ALL: "(1+rho)|+",
    Family.RISK_INVERSE: "1/rho",
    Family.RISK_LINEAR: "1-rho",
    Family.RISK_INVERSE_LINEAR: "1+1/rho",
}


@dataclass(frozen=True)
class AllocationRule:
    family: Family
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        da, db = _DEFAULT_AB[fam]
        a = da if self.a is None else float(self.a)
        b = db if self.b is None else float(self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not (math.isfinite(a) and math.isfinite(b)) or a < 0 or b < 0:
            raise ValidationError(f"coefficients must be finite and non-negative, got a={a}, b={b}")
        if fam is not Family.EQUAL and a + b <= 0:
            raise ValidationError("a + b must be positive")

    @property
    def label(self):
        """Row label in the style of the published tables; non-default coefficients are spelled out."""
        base = _LABELS[self.family]
        if (self.a, self.b) == _DEFAULT_AB[self.family] or self.family is Family.EQUAL:
            return base
        return f"{base}[a={self.a:g},b={self.b:g}]"

    @property
    def spec(self):
        """Inverse of :func:`parse_rule`."""
        if self.family is Family.EQUAL:
            return "equal"
        return f"{self.family.value}:a={self.a:g},b={self.b:g}"

    @classmethod
    def equal(cls):
        return cls(Family.EQUAL)


_RULE_RE = re.compile(r"^\s*([a-z-]+)\s*(?::\s*(.*))?$")


def parse_rule(text) -> AllocationRule:
    """Parse ``family[:a=..,b=..]``, e.g. ``ratio-linear:a=1,b=1``."""
    m = _RULE_RE.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse allocation rule {text!r}")
    try:
        fam = Family(m.group(1))
    except ValueError:
        known = ", ".join(f.value for f in Family)
        raise ConfigError(f"unknown rule family {m.group(1)!r} (known: {known})") from None
    kw = {}
    if m.group(2):
        for part in m.group(2).split(","):
            key, sep, val = part.partition("=")
            key = key.strip()
            if not sep or key not in ("a", "b"):
                raise ConfigError(f"bad coefficient {part!r} in rule {text!r}")
            try:
                kw[key] = float(val)
            except ValueError:
                raise ConfigError(f"coefficient {key} is not a number in rule {text!r}") from None
    try:
        return AllocationRule(fam, **kw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class WeightVector:
    assets: tuple
    weights: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(w) != len(self.assets):
            raise ValidationError("weights and assets differ in length")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and non-negative")
        if abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {np.sum(w)!r}, not 1")

    def as_dict(self):
        return dict(zip(self.assets, self.weights.tolist()))


def _scores(rho, rule: AllocationRule):
    a, b = rule.a, rule.b
    f = rule.family
    if f is Family.EQUAL:
        return np.ones_like(rho)
    if f in (Family.RATIO_RAW, Family.RATIO_FLOOR_ALL):
        return np.maximum(a + b * rho, 0.0)
    if f is Family.RATIO_LINEAR:
        return a + b * np.maximum(rho, 0.0)
    if f is Family.RISK_LINEAR:
        return np.maximum(a - b * rho, 0.0)
    # inverse families need strictly positive risk
    bad = np.flatnonzero(~(rho > 0))
    if len(bad):
        raise InvalidMeasureError(f"inverse-risk rule needs positive measures; asset index {int(bad[0])} has {rho[bad[0]]}")
    return a + b / rho


def _cap_sentinels(rho):
    """Replace ``+inf`` (Calmar without drawdown) by a large finite surrogate."""
    inf = np.isposinf(rho)
    if not inf.any():
        return rho
    pos = rho[np.isfinite(rho) & (rho > 0)]
    cap = SENTINEL_CAP * (float(np.median(pos)) if len(pos) else 1.0)
    out = rho.copy()
    out[inf] = cap
    return out


def compute_weights(rho, rule: AllocationRule, assets=None) -> WeightVector:
    """Normalized scores of ``rule`` applied to ``rho``.

    ``rho`` may be floats or :class:`MeasureValue`. If every score is zero the
    result falls back to equal weights with ``fallback=True``.
    """
    vals = np.array([getattr(v, "value", v) for v in rho], dtype=float)
    n = len(vals)
    if n == 0:
        raise ValidationError("compute_weights needs at least one asset")
    if assets is None:
        assets = tuple(range(n))
    nan = np.flatnonzero(np.isnan(vals))
    if len(nan):
        raise NumericError(f"NaN measure for asset {assets[nan[0]]!r}", index=int(nan[0]))
    if rule.family is not Family.EQUAL:
        if np.isneginf(vals).any() or (np.isposinf(vals).any() and rule.family in RISK_FAMILIES):
            raise InvalidMeasureError("infinite measure is only accepted as the ratio +inf sentinel")
        vals = _cap_sentinels(vals)
    s = _scores(vals, rule)
    bad = np.flatnonzero(~np.isfinite(s))
    if len(bad):
        raise NumericError(f"non-finite score for asset {assets[bad[0]]!r}", index=int(bad[0]))
    total = float(np.sum(s))
    if total <= 0.0:
        log.info("all %s scores are zero; equal-weight fallback", rule.family.value)
        return WeightVector(assets, np.full(n, 1.0 / n), fallback=True)
    if (s == s[0]).all():
        # identical scores (e.g. b = 0): exact 1/N rather than a / (N a)
        return WeightVector(assets, np.full(n, 1.0 / n))
    return WeightVector(assets, s / total)


def decompose_linear(rho, rule: AllocationRule):
    """Split linear-rule weights into ``1/N`` and a zero-sum deviation part.

    ``w_i = 1/N + b (rho_i|+ - mean(rho|+)) / sum_j (a + b rho_j|+)``.
    """
    if rule.family is not Family.RATIO_LINEAR:
        raise ValidationError("decompose_linear applies to the ratio-linear family only")
    x = np.maximum(np.array([getattr(v, "value", v) for v in rho], dtype=float), 0.0)
    n = len(x)
    den = float(np.sum(rule.a + rule.b * x))
    if den <= 0.0:
        raise InvalidMeasureError("zero denominator in linear decomposition")
    return np.full(n, 1.0 / n), rule.b * (x - np.mean(x)) / den


def rule_for_measure(kind, variant) -> AllocationRule:
    """Default rule for a measure: ``raw``/``linear`` for ratios, ``inverse``/``linear`` for risks."""
    kind = MeasureKind(kind)
    variant = str(variant).lower()
    if variant == "equal":
        return AllocationRule.equal()
    if kind.is_ratio:
        table = {"raw": Family.RATIO_RAW, "linear": Family.RATIO_LINEAR}
    else:
        table = {"inverse": Family.RISK_INVERSE, "linear": Family.RISK_LINEAR}
    if variant not in table:
        raise ConfigError(f"variant {variant!r} not available for {kind.value}; choose from {sorted(table)}")
    return AllocationRule(table[variant])


def check_rule_for_measure(kind, rule: AllocationRule):
    """Reject ratio families on risk measures and vice versa."""
    kind = MeasureKind(kind)
    if rule.family is Family.EQUAL:
        return
    if kind.is_risk and rule.family in RATIO_FAMILIES:
        raise ConfigError(f"risk measure {kind.value} cannot use ratio rule {rule.family.value}")
    if kind.is_ratio and rule.family in RISK_FAMILIES:
        raise ConfigError(f"ratio measure {kind.value} cannot use risk rule {rule.family.value}")
