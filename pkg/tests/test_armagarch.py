import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drrp import armagarch as ag
from drrp import cts
from drrp.armagarch import ArmaGarchParams, FilterInit
from drrp.errors import InsufficientDataError, NumericError, ValidationError
from drrp.measures import MeasureKind, MeasureSpec, Source

TRUE = ArmaGarchParams(0.0, 0.0, 0.0, 1e-6, 0.05, 0.90, 6.0)
DYN = ArmaGarchParams(2e-4, 0.3, -0.2, 2e-6, 0.08, 0.88, 7.0)


def spec(kind, eta=0.05, zeta=0.05):
    return MeasureSpec(kind, eta, zeta, Source.MODEL)


def naive_filter(p, r, init):
    """Plain loop over the recursion; independent of the vectorized filter."""
    eps = np.empty(len(r))
    sig = np.empty(len(r))
    r_prev, e_prev, s2_prev = init.r0, init.eps0, init.sigma2_0
    for t, x in enumerate(r):
        s2 = p.omega + p.arch * e_prev**2 + p.garch * s2_prev
        mu = p.c + p.ar * r_prev + p.ma * e_prev
        eps[t], sig[t] = x - mu, math.sqrt(s2)
        r_prev, e_prev, s2_prev = x, eps[t], s2
    return eps, sig


@pytest.fixture(scope="module")
def sim_fit():
    sim = ag.simulate(DYN, 1500, np.random.default_rng(42))
    return sim, ag.fit(sim.returns)


# parameters and filter


@pytest.mark.parametrize(
    "kw", [dict(ar=1.0), dict(omega=0.0), dict(arch=-0.1), dict(arch=0.5, garch=0.5), dict(nu=2.0), dict(c=math.inf)]
)
def test_params_invalid(kw):
    with pytest.raises(ValidationError):
        replace(TRUE, **kw)


def test_filter_white_noise():
    p = ArmaGarchParams(0.001, 0.0, 0.0, 4e-4, 0.0, 0.0)
    r = np.random.default_rng(1).normal(0, 0.02, 200)
    fr = ag.filter(p, r)
    np.testing.assert_array_equal(fr.residuals, r - 0.001)
    np.testing.assert_allclose(fr.sigmas, 0.02, rtol=1e-15)


def test_filter_zero_input():
    p = ArmaGarchParams(0.0, 0.4, 0.3, 1e-6, 0.1, 0.8)
    fr = ag.filter(p, np.zeros(100), FilterInit(0.0, 0.0, 1e-4))
    assert (fr.residuals == 0).all()


def test_filter_matches_naive_loop():
    r = np.random.default_rng(2).standard_t(5, 400) * 0.01
    init = FilterInit.from_data(r)
    fr = ag.filter(DYN, r, init)
    eps, sig = naive_filter(DYN, r, init)
    np.testing.assert_allclose(fr.residuals, eps, rtol=0, atol=1e-14)
    np.testing.assert_allclose(fr.sigmas, sig, rtol=1e-12)


def test_filter_recovers_simulated_sigma():
    for law in (None, ag.CtsLaw(cts.CtsParams.standard(1.3, 2.0, 1.5))):
        sim = ag.simulate(DYN, 2000, np.random.default_rng(3), law=law)
        fr = ag.filter(DYN, sim.returns, sim.init)
        assert np.max(np.abs(fr.sigmas[50:] - sim.sigmas[50:])) < 1e-10


def test_filter_forgets_presample_state():
    sim = ag.simulate(DYN, 2000, np.random.default_rng(3))
    fr = ag.filter(DYN, sim.returns, FilterInit.from_data(sim.returns))
    gap = np.abs(fr.sigmas**2 - sim.sigmas**2)
    # start-up error decays at least as fast as garch^t plus a small arch feed
    assert gap[300] < 1e-10 * gap[0] + 1e-16
    assert np.all(np.diff(gap[:200]) <= 1e-18)


def test_filter_short_and_nonfinite():
    with pytest.raises(InsufficientDataError):
        ag.filter(TRUE, np.zeros(10))
    r = np.full(50, 0.01)
    r[20] = math.nan
    with pytest.raises(NumericError) as exc:
        ag.filter(TRUE, r, FilterInit(0.0, 0.0, 1e-4))
    assert exc.value.index == 20


def test_default_init():
    r = np.random.default_rng(4).normal(0.001, 0.01, 150)
    init = FilterInit.from_data(r)
    assert init.eps0 == 0.0
    assert init.sigma2_0 == pytest.approx(np.var(r, ddof=1))
    assert init.r0 == pytest.approx(r.mean())


# estimation


def test_fit_recovers_persistence():
    sim = ag.simulate(TRUE, 5000, np.random.default_rng(0))
    f = ag.fit(sim.returns, fit_innovations=False)
    assert abs(f.params.persistence - 0.95) <= 0.05
    assert f.params.omega == pytest.approx(1e-6, rel=0.5)


def test_fit_gaussian_no_spurious_persistence():
    hits = 0
    for seed in range(10):
        x = np.random.default_rng(seed).normal(0, 0.01, 1000)
        hits += ag.fit(x, fit_innovations=False).params.persistence < 0.3
    assert hits >= 9


def test_fit_deterministic(sim_fit):
    sim, f = sim_fit
    g = ag.fit(sim.returns)
    assert g.params == f.params and g.cts == f.cts and g.log_likelihood == f.log_likelihood


def test_fit_series_lengths(sim_fit):
    sim, f = sim_fit
    n = len(sim.returns)
    for arr in (f.innovations, f.cond_means, f.cond_sigmas, f.residuals):
        assert len(arr) == n
    assert (f.cond_sigmas > 0).all()
    assert f.cts is not None and not f.cts_fallback


def test_fit_stationary(sim_fit):
    assert sim_fit[1].params.persistence < 1.0


def test_innovation_moments(sim_fit):
    z = sim_fit[1].innovations
    assert -0.1 < z.mean() < 0.1
    assert 0.8 < z.var() < 1.2


def test_fit_local_optimum(sim_fit):
    sim, f = sim_fit
    rng = np.random.default_rng(9)
    ll = ag.log_likelihood(f.params, sim.returns, f.init)
    assert ll == pytest.approx(f.log_likelihood, rel=1e-12)
    tried = 0
    while tried < 50:
        scale = 1 + rng.normal(0, 0.02, 7)
        theta = np.array(f.params.astuple()) * scale
        try:
            q = ArmaGarchParams(*theta)
        except ValidationError:
            continue
        tried += 1
        assert ag.log_likelihood(q, sim.returns, f.init) <= ll + 1e-9


def test_fit_rejects_bad_input():
    with pytest.raises(InsufficientDataError):
        ag.fit(np.zeros(50))
    with pytest.raises(ValidationError):
        ag.fit(np.full(200, 0.01))
    x = np.random.default_rng(0).normal(0, 0.01, 200)
    x[5] = math.inf
    with pytest.raises(ValidationError):
        ag.fit(x)


def test_cts_fallback_flagged(monkeypatch, sim_fit):
    from drrp.errors import ConvergenceError

    def boom(*a, **k):
        raise ConvergenceError("no")

    monkeypatch.setattr(cts, "fit_mle", boom)
    f = ag.fit(sim_fit[0].returns)
    assert f.cts_fallback and f.cts is None and isinstance(f.law, ag.StudentTLaw)
    assert any("Student-t" in m for m in f.messages)


def test_diagnostics_json(sim_fit):
    import json

    d = sim_fit[1].diagnostics()
    json.dumps(d)
    assert set(d["params"]) == {"c", "ar", "ma", "omega", "arch", "garch", "nu"}


# forecast


def test_forecast_degenerate():
    p = ArmaGarchParams(0.002, 0.0, 0.0, 9e-4, 0.0, 0.0)
    x = np.random.default_rng(5).normal(0, 0.03, 120)
    fr = ag.filter(p, x)
    f = ag.ArmaGarchFit(p, x, fr.innovations, fr.means, fr.sigmas, fr.residuals, 0.0, FilterInit.from_data(x))
    fc = ag.forecast(f)
    assert fc.mu_next == 0.002 and fc.sigma_next == pytest.approx(0.03, rel=1e-15)


def test_forecast_matches_refilter(sim_fit):
    sim, f = sim_fit
    fc = ag.forecast(f)
    r_next = np.append(sim.returns, 0.0123)
    fr = ag.filter(f.params, r_next, f.init)
    assert fr.means[-1] == pytest.approx(fc.mu_next, rel=1e-12)
    assert fr.sigmas[-1] == pytest.approx(fc.sigma_next, rel=1e-12)
    assert fc.sigma_next**2 >= f.params.omega


# model measures


def sym_fit(mu, sigma):
    """Fit stub with a symmetric CTS law and a chosen one-step forecast."""
    law = ag.CtsLaw(cts.CtsParams.standard(1.4, 2.0, 2.0))
    return law, ag.ConditionalForecast(mu, sigma)


def test_model_symmetric():
    law, fc = sym_fit(0.001, 0.02)
    assert ag.law_measure(law, fc.mu_next, fc.sigma_next, spec(MeasureKind.SHARPE), rf=0.001).value == 0.0
    r = ag.law_measure(law, fc.mu_next, fc.sigma_next, spec(MeasureKind.RACHEV, 0.05, 0.05), rf=0.001).value
    assert r == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("kind", [MeasureKind.VAR, MeasureKind.CVAR, MeasureKind.VOLATILITY])
def test_model_homogeneity(kind):
    law, _ = sym_fit(0.0, 1.0)
    a = ag.law_measure(law, 0.0004, 0.01, spec(kind), rf=0.0004).value
    b = ag.law_measure(law, 0.0004, 0.02, spec(kind), rf=0.0004).value
    assert b == pytest.approx(2 * a, rel=1e-12)


@given(st.floats(-0.01, 0.01))
def test_model_var_equivariance(delta):
    law = ag.CtsLaw(cts.CtsParams.standard(1.2, 3.0, 1.5))
    v0 = ag.law_measure(law, 0.0, 0.015, spec(MeasureKind.VAR)).value
    v1 = ag.law_measure(law, delta, 0.015, spec(MeasureKind.VAR)).value
    assert abs(v1 - (v0 - delta)) <= 1e-10


def test_model_volatility_and_sharpe(sim_fit):
    f = sim_fit[1]
    fc = ag.forecast(f)
    vol = ag.model_measure(f, spec(MeasureKind.VOLATILITY)).value
    assert vol == pytest.approx(fc.sigma_next * math.sqrt(cts.cumulant(f.cts, 2)), rel=1e-12)
    sh = ag.model_measure(f, spec(MeasureKind.SHARPE), rf_next=1e-4).value
    assert sh == pytest.approx((fc.mu_next - 1e-4) / vol, rel=1e-12)


def test_model_cvar_monte_carlo(sim_fit):
    f = sim_fit[1]
    fc = ag.forecast(f)
    rng = np.random.default_rng(17)
    R = fc.mu_next + fc.sigma_next * f.law.sample(10**6, rng)
    losses = -np.sort(R)
    k = math.ceil(0.05 * len(R))
    parts = [-np.mean(np.sort(b)[: math.ceil(0.05 * len(b))]) for b in np.array_split(R, 100)]
    se = np.std(parts, ddof=1) / 10
    cv = ag.model_measure(f, spec(MeasureKind.CVAR)).value
    assert abs(np.mean(losses[:k]) - cv) <= 3 * se


def test_model_rejects_empirical_and_path_measures(sim_fit):
    f = sim_fit[1]
    with pytest.raises(ValidationError):
        ag.model_measure(f, MeasureSpec(MeasureKind.VAR, 0.05, 0.05, Source.EMPIRICAL))
    with pytest.raises(ValidationError):
        ag.law_measure(f.law, 0.0, 0.01, spec(MeasureKind.CALMAR))


def test_compact_matches_full(sim_fit):
    f = sim_fit[1]
    etas = (0.05, 0.01, 0.5)
    c = ag.compact(f, etas)
    for kind in (MeasureKind.VAR, MeasureKind.CVAR, MeasureKind.STAR, MeasureKind.SHARPE, MeasureKind.VARIANCE):
        for eta in (0.05, 0.01):
            s = spec(kind, eta, eta)
            assert c.measure(s, 1e-4).value == ag.model_measure(f, s, 1e-4).value
    s = spec(MeasureKind.RACHEV, 0.5, 0.01)
    assert c.measure(s).value == ag.model_measure(f, s).value
    with pytest.raises(ValidationError):
        c.measure(spec(MeasureKind.VAR, 0.1))


def test_student_t_law_unit_variance():
    law = ag.StudentTLaw(6.0)
    assert law.variance() == pytest.approx(1.0)
    x = law.sample(10**6, np.random.default_rng(0))
    assert x.var() == pytest.approx(1.0, abs=0.02)
    # closed-form tail mean against Monte Carlo
    q = law.quantile(0.05)
    assert law.lower_cvar(0.05) == pytest.approx(-x[x <= q].mean(), rel=0.01)
