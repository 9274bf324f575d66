"""ARMA(1,1)-GARCH(1,1) with Student-t quasi-likelihood and CTS innovations.

Estimation runs in two stages. The first maximizes a Student-t likelihood
over the filter parameters. The second refits the standardized innovations
``z_t = eps_t / sigma_t`` with :func:`drrp.cts.fit_mle`, and the resulting law
drives the model-based (conditional) measures.

Recursion, for t = 1..T::

    mu_t      = c + ar * r_{t-1} + ma * eps_{t-1}
    eps_t     = r_t - mu_t
    sigma_t^2 = omega + arch * eps_{t-1}^2 + garch * sigma_{t-1}^2

The presample state ``(r_0, eps_0, sigma_0^2)`` defaults to the window mean,
zero, and the window sample variance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal, special, stats

from . import cts
from .errors import (
    ConvergenceError,
    DrrpError,
    InsufficientDataError,
    NumericError,
    UndefinedMeasureError,
    ValidationError,
)
from .measures import MeasureKind, MeasureSpec, MeasureValue, Source

log = logging.getLogger(__name__)

MIN_FILTER_LENGTH = 30
MIN_FIT_LENGTH = 100
# innovation windows are 126 days, below the standalone CTS minimum
CTS_MIN_SAMPLES = 100
NU_MAX = 200.0


@dataclass(frozen=True)
class ArmaGarchParams:
    c: float
    ar: float
    ma: float
    omega: float
    arch: float
    garch: float
    nu: float = 8.0

    def __post_init__(self):
        vals = self.astuple()
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite ARMA-GARCH parameter in {vals}")
        if abs(self.ar) >= 1.0:
            raise ValidationError(f"|ar| must be < 1, got {self.ar}")
        if self.omega <= 0.0:
            raise ValidationError("omega must be positive")
        if self.arch < 0.0 or self.garch < 0.0:
            raise ValidationError("arch and garch must be non-negative")
        if self.arch + self.garch >= 1.0:
            raise ValidationError(f"arch + garch must be < 1, got {self.arch + self.garch}")
        if self.nu <= 2.0:
            raise ValidationError(f"nu must exceed 2, got {self.nu}")

    def astuple(self):
        return (self.c, self.ar, self.ma, self.omega, self.arch, self.garch, self.nu)

    @property
    def persistence(self):
        return self.arch + self.garch


@dataclass(frozen=True)
class FilterInit:
    """Presample state feeding the first step of the recursion."""

    r0: float
    eps0: float
    sigma2_0: float

    @classmethod
    def from_data(cls, r):
        r = np.asarray(r, dtype=float)
        return cls(float(np.mean(r)), 0.0, float(np.var(r, ddof=1)))


@dataclass(frozen=True)
class FilterResult:
    residuals: np.ndarray
    sigmas: np.ndarray
    means: np.ndarray

    @property
    def innovations(self):
        return self.residuals / self.sigmas


def _recursion(c, ar, ma, omega, arch, garch, r, init: FilterInit):
    r_lag = np.concatenate(([init.r0], r[:-1]))
    # eps_t + ma * eps_{t-1} = r_t - c - ar * r_{t-1}
    eps, _ = signal.lfilter([1.0], [1.0, ma], r - c - ar * r_lag, zi=[-ma * init.eps0])
    eps_lag = np.concatenate(([init.eps0], eps[:-1]))
    drive = omega + arch * eps_lag * eps_lag
    s2, _ = signal.lfilter([1.0], [1.0, -garch], drive, zi=[garch * init.sigma2_0])
    return eps, s2, r - eps


def filter(params: ArmaGarchParams, r, init: FilterInit | None = None) -> FilterResult:  # noqa: A001
    """Run the recursion over ``r``; raises :class:`NumericError` at the first bad index."""
    r = np.asarray(r, dtype=float)
    if len(r) < MIN_FILTER_LENGTH:
        raise InsufficientDataError(f"filter needs at least {MIN_FILTER_LENGTH} observations, got {len(r)}")
    if init is None:
        init = FilterInit.from_data(r)
    p = params
    with np.errstate(all="ignore"):
        eps, s2, mu = _recursion(p.c, p.ar, p.ma, p.omega, p.arch, p.garch, r, init)
        sig = np.sqrt(s2)
    bad = ~(np.isfinite(eps) & np.isfinite(sig) & (sig > 0))
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericError(f"non-finite filter state at index {i}", index=i)
    return FilterResult(eps, sig, mu)


def student_t_loglik(eps, sigma, nu):
    """Log-density sum of ``eps`` under a unit-variance Student-t scaled by ``sigma``."""
    z2 = (eps / sigma) ** 2
    const = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(math.pi * (nu - 2))
    return float(len(eps) * const - np.sum(np.log(sigma)) - (nu + 1) / 2 * np.sum(np.log1p(z2 / (nu - 2))))


# ---------------------------------------------------------------------------
# innovation laws


class StudentTLaw:
    """Unit-variance Student-t innovations; fallback when the CTS refit fails."""

    def __init__(self, nu):
        self.nu = float(nu)
        self.scale = math.sqrt((self.nu - 2.0) / self.nu)

    name = "student-t"

    def mean(self):
        return 0.0

    def variance(self):
        return 1.0

    def quantile(self, p):
        return float(self.scale * stats.t.ppf(p, self.nu))

    def lower_cvar(self, eta):
        q = stats.t.ppf(eta, self.nu)
        tail_mean = -(self.nu + q * q) / (self.nu - 1.0) * stats.t.pdf(q, self.nu) / eta
        return float(-self.scale * tail_mean)

    def upper_mean(self, eta):
        return self.lower_cvar(eta)

    def sample(self, n, rng):
        return self.scale * rng.standard_t(self.nu, size=n)


class CtsLaw:
    name = "cts"

    def __init__(self, params: cts.CtsParams):
        self.params = params
        self.table = cts.tabulate(params)

    def mean(self):
        return self.params.m

    def variance(self):
        return cts.cumulant(self.params, 2)

    def quantile(self, p):
        return self.table.quantile(p)

    def lower_cvar(self, eta):
        return self.table.lower_cvar(eta)

    def upper_mean(self, eta):
        """``E[X | X >= q_{1-eta}]``."""
        return cts.upper_cvar_level(self.params, eta)

    def sample(self, n, rng):
        return self.table.sample(n, rng)


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class ArmaGarchFit:
    params: ArmaGarchParams
    returns: np.ndarray
    innovations: np.ndarray
    cond_means: np.ndarray
    cond_sigmas: np.ndarray
    residuals: np.ndarray
    log_likelihood: float
    init: FilterInit
    cts: cts.CtsParams | None = None
    at_boundary: bool = False
    cts_fallback: bool = False
    messages: tuple = ()
    law: object = field(default=None, compare=False, repr=False)

    def diagnostics(self):
        """JSON-ready summary of the fit."""
        p = self.params
        out = {
            "params": dict(zip(("c", "ar", "ma", "omega", "arch", "garch", "nu"), p.astuple())),
            "log_likelihood": self.log_likelihood,
            "n_obs": int(len(self.returns)),
            "at_boundary": self.at_boundary,
            "innovation_law": self.law.name if self.law is not None else None,
            "cts_fallback": self.cts_fallback,
            "messages": list(self.messages),
        }
        if self.cts is not None:
            out["cts"] = dict(zip(("alpha", "c_plus", "c_minus", "lambda_plus", "lambda_minus", "m"), self.cts.astuple()))
        return out


# transformed coordinates: c/scale, atanh(ar), atanh(ma), log(omega/var),
# logit(persistence), logit(arch share), log(nu - 2)
_P_MAX = 0.9999
_BOX = [(-50, 50), (-4, 4), (-4, 4), (-25, 5), (-12, 12), (-12, 12), (math.log(0.05), math.log(NU_MAX - 2))]


def _decode(z, scale, var):
    ar = 0.999 * math.tanh(z[1])
    ma = 0.999 * math.tanh(z[2])
    pers = _P_MAX * special.expit(z[4])
    arch = pers * special.expit(z[5])
    return tuple(float(v) for v in (z[0] * scale, ar, ma, math.exp(z[3]) * var, arch, pers - arch, 2.0 + math.exp(z[6])))


def _encode(p: ArmaGarchParams, scale, var):
    pers = min(max(p.persistence / _P_MAX, 1e-6), 1 - 1e-6)
    share = min(max(p.arch / max(p.persistence, 1e-300), 1e-6), 1 - 1e-6)
    return np.array(
        [
            p.c / scale,
            math.atanh(max(min(p.ar / 0.999, 0.999999), -0.999999)),
            math.atanh(max(min(p.ma / 0.999, 0.999999), -0.999999)),
            math.log(p.omega / var),
            special.logit(pers),
            special.logit(share),
            math.log(min(max(p.nu - 2.0, 0.06), NU_MAX - 2.01)),
        ]
    )


class _Objective:
    def __init__(self, r, init):
        self.r = r
        self.init = init
        self.scale = float(np.std(r, ddof=1))
        self.var = self.scale**2

    def loglik(self, theta):
        c, ar, ma, omega, arch, garch, nu = theta
        with np.errstate(all="ignore"):
            eps, s2, _ = _recursion(c, ar, ma, omega, arch, garch, self.r, self.init)
            if not (np.all(np.isfinite(eps)) and np.all(s2 > 0)):
                return -math.inf
            return student_t_loglik(eps, np.sqrt(s2), nu)

    def __call__(self, z):
        try:
            ll = self.loglik(_decode(z, self.scale, self.var))
        except (OverflowError, ValueError):
            return 1e10
        return -ll / len(self.r) if math.isfinite(ll) else 1e10


def _starts(r):
    m = float(np.mean(r))
    v = float(np.var(r, ddof=1))
    for arch, garch in ((0.05, 0.90), (0.10, 0.10)):
        yield ArmaGarchParams(m, 0.0, 0.0, v * (1 - arch - garch), arch, garch, 8.0)


def fit(
    r,
    fit_innovations=True,
    init: FilterInit | None = None,
    cts_min_samples=CTS_MIN_SAMPLES,
    max_iter=1000,
    ftol=1e-10,
) -> ArmaGarchFit:
    """Two-stage fit: Student-t quasi-likelihood, then CTS on the innovations.

    Two starting points (high and low persistence) are optimized and the
    better likelihood kept. Failure of the CTS stage falls back to the
    Student-t law and sets ``cts_fallback``.
    """
    r = np.asarray(r, dtype=float)
    if len(r) < MIN_FIT_LENGTH:
        raise InsufficientDataError(f"ARMA-GARCH fit needs at least {MIN_FIT_LENGTH} observations, got {len(r)}")
    if not np.all(np.isfinite(r)):
        raise ValidationError("return series contains non-finite values")
    if np.ptp(r) == 0.0:
        raise ValidationError("degenerate return series: all values equal")
    if init is None:
        init = FilterInit.from_data(r)
    obj = _Objective(r, init)
    best = None
    for start in _starts(r):
        z0 = _encode(start, obj.scale, obj.var)
        res = optimize.minimize(
            obj, z0, method="L-BFGS-B", bounds=_BOX, options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-8}
        )
        if best is None or res.fun < best.fun:
            best = res
    converged = bool(best.success) or "REL_REDUCTION_OF_F" in str(best.message)
    theta = _decode(best.x, obj.scale, obj.var)
    params = ArmaGarchParams(*theta)
    if not converged or best.fun >= 1e10:
        raise ConvergenceError(
            f"ARMA-GARCH likelihood did not converge: {best.message}",
            best=params,
            value=-best.fun * len(r),
            diagnostics={"nit": int(best.nit)},
        )
    box = np.array(_BOX)
    at_boundary = bool(np.any(np.isclose(best.x, box[:, 0], atol=1e-6) | np.isclose(best.x, box[:, 1], atol=1e-6)))
    messages = []
    if at_boundary:
        messages.append("solution on a constraint boundary")
    fr = filter(params, r, init)
    ll = -best.fun * len(r)

    cts_params = None
    fallback = False
    law = StudentTLaw(params.nu)
    if fit_innovations:
        try:
            cfit = cts.fit_mle(fr.innovations, min_samples=cts_min_samples)
            law = CtsLaw(cfit.params)
            cts_params = cfit.params
        except DrrpError as exc:
            fallback = True
            messages.append(f"CTS refit failed ({type(exc).__name__}: {exc}); using Student-t innovations")
            log.warning("CTS refit failed, falling back to Student-t: %s", exc)
    return ArmaGarchFit(
        params=params,
        returns=r,
        innovations=fr.innovations,
        cond_means=fr.means,
        cond_sigmas=fr.sigmas,
        residuals=fr.residuals,
        log_likelihood=ll,
        init=init,
        cts=cts_params,
        at_boundary=at_boundary,
        cts_fallback=fallback,
        messages=tuple(messages),
        law=law,
    )


def log_likelihood(params: ArmaGarchParams, r, init: FilterInit | None = None):
    """Student-t log-likelihood of ``r`` under ``params``."""
    r = np.asarray(r, dtype=float)
    fr = filter(params, r, init)
    return student_t_loglik(fr.residuals, fr.sigmas, params.nu)


@dataclass(frozen=True)
class ConditionalForecast:
    mu_next: float
    sigma_next: float

    def __post_init__(self):
        if not self.sigma_next > 0:
            raise NumericError(f"non-positive forecast volatility {self.sigma_next}")


def forecast(fit: ArmaGarchFit) -> ConditionalForecast:
    p = fit.params
    r_t = fit.returns[-1]
    e_t = fit.residuals[-1]
    s_t = fit.cond_sigmas[-1]
    mu = p.c + p.ar * r_t + p.ma * e_t
    s2 = p.omega + p.arch * e_t * e_t + p.garch * s_t * s_t
    return ConditionalForecast(float(mu), float(math.sqrt(s2)))


def model_measure(fit: ArmaGarchFit, spec: MeasureSpec, rf_next=0.0, fc: ConditionalForecast | None = None):
    """Measure of the next-day law ``R = mu + sigma X`` with ``X`` the fitted innovation law."""
    if spec.source is not Source.MODEL:
        raise ValidationError("model_measure requires a model-source MeasureSpec")
    law = fit.law if fit.law is not None else StudentTLaw(fit.params.nu)
    if fc is None:
        fc = forecast(fit)
    return law_measure(law, fc.mu_next, fc.sigma_next, spec, rf_next)


def law_measure(law, mu, sigma, spec: MeasureSpec, rf=0.0):
    """Measure of ``R = mu + sigma X`` for an innovation law ``X``."""
    k = spec.kind
    d = mu - rf
    vol = sigma * math.sqrt(law.variance())
    if k is MeasureKind.VOLATILITY:
        v = vol
    elif k is MeasureKind.VARIANCE:
        v = vol * vol
    elif k is MeasureKind.SHARPE:
        if vol == 0.0:
            raise UndefinedMeasureError("conditional Sharpe undefined: zero volatility")
        v = d / vol
    elif k is MeasureKind.VAR:
        v = -d - sigma * law.quantile(spec.eta)
    elif k is MeasureKind.CVAR:
        v = -d + sigma * law.lower_cvar(spec.eta)
    elif k is MeasureKind.STAR:
        cv = -d + sigma * law.lower_cvar(spec.eta)
        if cv <= 0.0:
            raise UndefinedMeasureError(f"STAR ratio undefined: non-positive CVaR ({cv})")
        v = d / cv
    elif k is MeasureKind.RACHEV:
        den = -d + sigma * law.lower_cvar(spec.zeta)
        if den <= 0.0:
            raise UndefinedMeasureError(f"Rachev ratio undefined: non-positive denominator CVaR ({den})")
        v = (d + sigma * law.upper_mean(spec.eta)) / den
    else:
        raise ValidationError(f"{k.value} has no model counterpart")
    return MeasureValue(float(v), k)


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class Simulation:
    returns: np.ndarray
    sigmas: np.ndarray
    residuals: np.ndarray
    init: FilterInit


def simulate(params: ArmaGarchParams, n, rng, law=None, init: FilterInit | None = None) -> Simulation:
    """Draw ``n`` returns with unit-variance innovations from ``law`` (Student-t by default).

    The presample state is recorded, so filtering the output with
    ``init=sim.init`` reproduces ``sigmas`` up to rounding.
    """
    if law is None:
        law = StudentTLaw(params.nu)
    p = params
    if init is None:
        uncond = p.omega / (1.0 - p.persistence)
        mean = p.c / (1.0 - p.ar)
        init = FilterInit(mean, 0.0, uncond)
    z = np.asarray(law.sample(n, rng), dtype=float)
    r = np.empty(n)
    eps = np.empty(n)
    sig = np.empty(n)
    r_prev, e_prev, s2_prev = init.r0, init.eps0, init.sigma2_0
    for t in range(n):
        s2 = p.omega + p.arch * e_prev * e_prev + p.garch * s2_prev
        s = math.sqrt(s2)
        e = s * z[t]
        r[t] = p.c + p.ar * r_prev + p.ma * e_prev + e
        eps[t], sig[t] = e, s
        r_prev, e_prev, s2_prev = r[t], e, s2
    return Simulation(r, sig, eps, init)


# ---------------------------------------------------------------------------
# compact fits for sharing across strategies and processes


@dataclass(frozen=True)
class LawSummary:
    """Innovation-law quantities at a fixed set of tail levels."""

    name: str
    var: float
    levels: tuple  # (eta, quantile, lower_cvar, upper_mean)

    @classmethod
    def from_law(cls, law, etas):
        rows = tuple((float(e), law.quantile(e), law.lower_cvar(e), law.upper_mean(e)) for e in sorted(set(etas)))
        return cls(law.name, float(law.variance()), rows)

    def _row(self, eta):
        for row in self.levels:
            if row[0] == eta:
                return row
        raise ValidationError(f"tail level {eta} was not precomputed")

    def variance(self):
        return self.var

    def quantile(self, p):
        return self._row(p)[1]

    def lower_cvar(self, eta):
        return self._row(eta)[2]

    def upper_mean(self, eta):
        return self._row(eta)[3]


@dataclass(frozen=True)
class CompactFit:
    params: ArmaGarchParams
    forecast: ConditionalForecast
    law: LawSummary
    cts: cts.CtsParams | None = None
    cts_fallback: bool = False
    messages: tuple = ()
    diagnostics: dict = field(default_factory=dict, compare=False)

    def measure(self, spec: MeasureSpec, rf_next=0.0):
        return law_measure(self.law, self.forecast.mu_next, self.forecast.sigma_next, spec, rf_next)


def compact(fit: ArmaGarchFit, etas) -> CompactFit:
    """Forecast plus innovation-law values at ``etas``; drops the series."""
    try:
        law = LawSummary.from_law(fit.law, etas)
    except DrrpError as exc:
        # tabulation of the fitted CTS law failed: use the Student-t law
        note = f"CTS tabulation failed ({exc}); using Student-t innovations"
        fit = replace(fit, law=StudentTLaw(fit.params.nu), cts_fallback=True, messages=fit.messages + (note,))
        law = LawSummary.from_law(fit.law, etas)
    fc = forecast(fit)
    diag = fit.diagnostics()
    diag["forecast"] = {"mu_next": fc.mu_next, "sigma_next": fc.sigma_next}
    return CompactFit(fit.params, fc, law, fit.cts, fit.cts_fallback, fit.messages, diag)


def fit_compact(r, etas) -> CompactFit:
    return compact(fit(r), etas)
