"""Acceptance criteria 1 to 10, one recorded pass/fail line each.

Criterion 10 needs user-supplied DJIA data in ``DRRP_DJIA_DIR`` (files
``prices.csv``, ``risk_free.csv`` and optionally ``membership.csv``); it is
skipped otherwise and never fails the run.
"""

import filecmp
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from drrp import allocation as al
from drrp import armagarch as ag
from drrp import backtest as bt
from drrp import cts, marketdata
from drrp import factoranalysis as fa
from drrp import measures as ms
from drrp.allocation import AllocationRule, Family
from drrp.measures import MeasureKind, MeasureSpec, Source

from conftest import FIXTURE, data_path, record, run_cli
from test_backtest import naive_equal_weight

SIMPLEX_TOL = 1e-12


def brute_mdd(r):
    w = np.concatenate(([1.0], np.cumprod(1.0 + r)))
    worst = 0.0
    for i in range(len(w)):
        for j in range(i + 1, len(w)):
            worst = max(worst, 1.0 - w[j] / w[i])
    return worst


def batch_mean_se(values):
    values = np.asarray(values)
    return values.mean(), values.std(ddof=1) / math.sqrt(len(values))


# 1


def test_criterion_01_allocation_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    fails = []
    for fam in Family:
        rule = AllocationRule(fam) if fam is Family.EQUAL else AllocationRule(fam, a=1.0 if "linear" in fam.value or "floor" in fam.value else 0.0, b=1.0)
        for trial in range(1000):
            n = int(rng.integers(2, 31))
            rho = rng.normal(0, 10.0 ** rng.uniform(-3, 1), n)
            if fam in (Family.RISK_INVERSE, Family.RISK_INVERSE_LINEAR, Family.RISK_LINEAR):
                rho = np.abs(rho) + 1e-6
            if fam is Family.RISK_LINEAR:
                rho = rho / (rho.max() * 1.01)  # 1 - rho stays positive
            w = al.compute_weights(rho, rule).weights
            if abs(math.fsum(w) - 1.0) > SIMPLEX_TOL or (w < 0).any():
                fails.append((fam.value, trial, "simplex"))
            order = np.argsort(rho, kind="stable")
            step = np.diff(w[order])
            if fam in al.RATIO_FAMILIES and (step < -1e-15).any():
                fails.append((fam.value, trial, "order"))
            if fam in al.RISK_FAMILIES and (step > 1e-15).any():
                fails.append((fam.value, trial, "order"))
            if fam in (Family.RATIO_RAW, Family.RISK_INVERSE) and (fam is Family.RISK_INVERSE or (rho > 0).any()):
                lam = 10.0 ** rng.uniform(-3, 3)
                w2 = al.compute_weights(lam * rho, rule).weights
                if np.max(np.abs(w2 - w)) > 1e-12:
                    fails.append((fam.value, trial, "scale"))
            if fam is Family.RATIO_LINEAR:
                eq, dev = al.decompose_linear(rho, rule)
                if np.max(np.abs(eq + dev - w)) > 1e-14 or abs(math.fsum(dev)) > 1e-14:
                    fails.append((fam.value, trial, "decomposition"))
            if fam in (Family.RATIO_LINEAR, Family.RISK_LINEAR, Family.RISK_INVERSE_LINEAR):
                w0 = al.compute_weights(rho, AllocationRule(fam, a=rule.a, b=0.0)).weights
                if not (w0 == 1.0 / n).all():
                    fails.append((fam.value, trial, "b=0"))
    elapsed = time.perf_counter() - t0
    ok = not fails and elapsed < 5.0
    record(1, ok, f"allocation suite: {len(fails)} violations over 7 families x 1000 vectors, {elapsed:.2f} s (< 5 s)")
    assert ok, fails[:10]


# 2


def test_criterion_02_empirical_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_mdd = worst_rachev = 0.0
    cvar_exact = True
    for _ in range(100):
        r = rng.standard_t(4, 126) * 0.012 + rng.normal(0, 0.002)
        worst_mdd = max(worst_mdd, abs(ms.max_drawdown(r) - brute_mdd(r)))
        k = math.ceil(0.05 * len(r))
        hand = -(math.fsum(sorted(r)[:k]) / k)
        cvar_exact &= ms.empirical_cvar(r, 0.0, 0.05) == hand
        x = np.concatenate((r, -r))
        worst_rachev = max(worst_rachev, abs(ms.rachev_ratio(x, 0.0, 0.05, 0.05) - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_mdd <= 1e-12 and cvar_exact and worst_rachev <= 1e-12 and elapsed < 10
    record(
        2,
        ok,
        f"empirical oracles on 100 windows: max |MDD - brute| {worst_mdd:.1e}, CVaR exact {cvar_exact}, "
        f"max |Rachev - 1| {worst_rachev:.1e}, {elapsed:.1f} s (< 10 s)",
    )
    assert ok


# 3


def test_criterion_03_cts_numerics():
    from scipy import integrate, stats

    t0 = time.perf_counter()
    p = cts.CtsParams(1.2, 0.5, 0.5, 3.0, 2.0, 0.0)
    phi0 = cts.char_fn(p, 0.0) == 1 + 0j
    x, f = cts.pdf(p)
    mass = integrate.trapezoid(f, x)
    t = cts.tabulate(p)
    trip = max(abs(t.cdf_at(cts.quantile(p, q)) - q) for q in (0.01, 0.05, 0.5, 0.95, 0.99))
    draws = cts.sample(p, 10**6, seed=3)
    z = []
    for order in (2, 3, 4):
        est, se = batch_mean_se([stats.kstat(b, order) for b in np.array_split(draws, 100)])
        z.append(abs(est - cts.cumulant(p, order)) / se)
    elapsed = time.perf_counter() - t0
    ok = phi0 and abs(mass - 1) <= 1e-6 and trip <= 1e-6 and max(z) <= 3 and elapsed < 60
    record(
        3,
        ok,
        f"CTS numerics: phi(0)=1 {phi0}, |mass-1| {abs(mass - 1):.1e}, round trip {trip:.1e}, "
        f"cumulant z-scores {', '.join(f'{v:.2f}' for v in z)}, {elapsed:.1f} s (< 60 s)",
    )
    assert ok


# 4


def test_criterion_04_cts_mle_recovery():
    t0 = time.perf_counter()
    true = cts.CtsParams(1.2, 0.5, 0.5, 3.0, 2.0, 0.0)
    hits = []
    rows = []
    for seed in range(10):
        x = cts.sample(true, 10**5, seed=seed)
        fit = cts.fit_mle(x)
        q = fit.params
        rel = [abs(getattr(q, n) / getattr(true, n) - 1) for n in ("c_plus", "c_minus", "lambda_plus", "lambda_minus")]
        good = abs(q.alpha - 1.2) <= 0.1 and max(rel) <= 0.15 and abs(q.m) <= 0.15 * math.sqrt(cts.cumulant(true, 2))
        hits.append(good)
        rows.append(f"{q.alpha:.3f}")
    elapsed = time.perf_counter() - t0
    ok = sum(hits) >= 8 and elapsed < 600
    record(4, ok, f"CTS MLE recovery: {sum(hits)}/10 seeds within tolerance (need 8); alpha by seed {' '.join(rows)}; {elapsed:.0f} s (< 600 s)")
    assert ok


# 5


def test_criterion_05_armagarch_recovery():
    t0 = time.perf_counter()
    true = ag.ArmaGarchParams(0.0, 0.0, 0.0, 1e-6, 0.05, 0.90, 6.0)
    pers = []
    for seed in range(10):
        sim = ag.simulate(true, 5000, np.random.default_rng(seed))
        pers.append(ag.fit(sim.returns, fit_innovations=False).params.persistence)
    hits = sum(abs(v - 0.95) <= 0.05 for v in pers)
    sim = ag.simulate(true, 5000, np.random.default_rng(99))
    fr = ag.filter(true, sim.returns, sim.init)
    path = float(np.max(np.abs(fr.sigmas[50:] - sim.sigmas[50:])))
    elapsed = time.perf_counter() - t0
    ok = hits >= 8 and path <= 1e-10 and elapsed < 300
    record(
        5,
        ok,
        f"ARMA-GARCH recovery: {hits}/10 seeds with arch+garch within 0.05 of 0.95 (need 8); "
        f"sigma path gap after burn-in {path:.1e}; {elapsed:.1f} s (< 300 s)",
    )
    assert ok


# 6


def test_criterion_06_model_measure_consistency(fixture_panel, fixture_rf):
    j = fixture_panel.column("AAA")
    k = len(fixture_panel.dates) - 2
    r, _ = bt.window(fixture_panel, fixture_rf, j, k, 126)
    fit = ag.fit(r)
    rf_next = float(fixture_rf[k])
    fc = ag.forecast(fit)
    var = ag.model_measure(fit, MeasureSpec(MeasureKind.VAR, 0.05, 0.05, Source.MODEL), rf_next).value
    cvar = ag.model_measure(fit, MeasureSpec(MeasureKind.CVAR, 0.05, 0.05, Source.MODEL), rf_next).value
    excess = fc.mu_next + fc.sigma_next * fit.law.sample(10**6, np.random.default_rng(6)) - rf_next
    var_b, cvar_b = [], []
    for b in np.array_split(excess, 100):
        var_b.append(ms.empirical_var(b, 0.0, 0.05))
        cvar_b.append(ms.empirical_cvar(b, 0.0, 0.05))
    zv = abs(batch_mean_se(var_b)[0] - var) / batch_mean_se(var_b)[1]
    zc = abs(batch_mean_se(cvar_b)[0] - cvar) / batch_mean_se(cvar_b)[1]
    spec = MeasureSpec(MeasureKind.VAR, 0.05, 0.05, Source.MODEL)
    shift = max(
        abs(ag.law_measure(fit.law, fc.mu_next + d, fc.sigma_next, spec, rf_next).value - (var - d))
        for d in (-0.01, -1e-4, 1e-5, 0.003, 0.02)
    )
    ok = zv <= 3 and zc <= 3 and shift <= 1e-10
    law = "CTS" if fit.cts is not None else "Student-t fallback"
    record(6, ok, f"model measures (AAA last window, {law}): VaR z {zv:.2f}, CVaR z {zc:.2f} (<= 3); VaR shift error {shift:.1e}")
    assert ok


# 7


def test_criterion_07_backtest_engine(fixture_panel, fixture_rf):
    rep = bt.run(fixture_panel, fixture_rf, bt.Strategy.equal_weight())
    naive = naive_equal_weight(fixture_panel)
    gap = float(np.max(np.abs(naive - rep.daily_returns)))
    wsum = float(np.max(np.abs(rep.weights.sum(axis=1) - 1.0)))
    counts = rep.tranche_counts
    rows = [x.index for x in rep.rebalance_log]
    after = counts[5 * 21 :]
    one_per_month = bool((after == 6).all()) and bool(np.all(np.diff(rows) == 21))

    def exact(pre, post):
        return float(Fraction(1, 2) * sum(abs(Fraction(b) - Fraction(a)) for a, b in zip(pre, post)))

    examples = [([0.3, 0.7], [0.3, 0.7], 0.0), ([1.0, 0.0], [0.0, 1.0], 1.0), ([0.6, 0.4], [0.5, 0.5], None)]
    to_ok = all(
        bt.turnover_at_rebalance(a, b) == (v if v is not None else exact(a, b)) for a, b, v in examples
    )
    ok = gap <= 1e-12 and wsum <= 1e-10 and one_per_month and to_ok
    record(
        7,
        ok,
        f"backtest engine: naive EW gap {gap:.1e}, weight-sum error {wsum:.1e}, "
        f"one tranche per month after warm-up {one_per_month}, turnover examples {to_ok}",
    )
    assert ok


# 8


def test_criterion_08_factor_regression():
    rng = np.random.default_rng(8)
    n = 120
    months = np.datetime64("2005-01", "M") + np.arange(n)
    cols = rng.normal(0, [4.0, 2.0, 2.0, 3.0], (n, 4))
    f = fa.FactorPanel(months, *cols.T, np.full(n, 0.2))
    y = 0.2 + 0.9 * f.mkt_rf - 0.2 * f.smb + 0.2 * f.hml - 0.07 * f.mom
    planted = fa.carhart_regress(fa.MonthlySeries(months, y + f.rf), f)
    p_err = float(np.max(np.abs(planted.coefficients - [0.2, 0.9, -0.2, 0.2, -0.07])))
    self_r = fa.carhart_regress(fa.MonthlySeries(months, f.mkt_rf + f.rf), f)
    s_err = max(abs(self_r.betas[0] - 1), abs(self_r.alpha), abs(self_r.r_squared - 1))
    noisy = fa.carhart_regress(fa.MonthlySeries(months, rng.normal(0.5, 3, n) + f.rf), f)
    Z = np.column_stack([np.ones(n), f.matrix()])
    orth = float(np.max(np.abs(Z.T @ noisy.residuals)))
    ok = p_err <= 1e-10 and s_err <= 1e-10 and orth <= 1e-8
    record(8, ok, f"factor regression: planted error {p_err:.1e}, self-regression error {s_err:.1e}, orthogonality {orth:.1e}")
    assert ok


# 9


def csv_files(root):
    out = []
    for base, _, files in os.walk(root):
        out.extend(os.path.relpath(os.path.join(base, f), root) for f in files if f.endswith(".csv"))
    return sorted(out)


def test_criterion_09_end_to_end_determinism(suite_run, tmp_path):
    code_a, dir_a = suite_run
    times = []
    runs = []
    for name, jobs in (("b", 1), ("c", 8)):
        d = tmp_path / name
        t0 = time.perf_counter()
        code = run_cli("backtest", "--config", data_path("suite.cfg"), "--output-dir", d, "--jobs", jobs)
        times.append(time.perf_counter() - t0)
        runs.append((code, d))
    files = csv_files(dir_a)
    same_sets = all(csv_files(d) == files for _, d in runs)
    identical = same_sets and all(filecmp.cmp(dir_a / f, d / f, shallow=False) for _, d in runs for f in files)
    with open(dir_a / "summary.csv", encoding="utf-8") as fh:
        n_rows = sum(1 for _ in fh) - 1
    codes = [code_a] + [c for c, _ in runs]
    ok = identical and n_rows == 25 and codes == [0, 0, 0] and max(times) < 900
    record(
        9,
        ok,
        f"end-to-end determinism: {len(files)} CSVs byte-identical across two --jobs 1 runs and --jobs 8: {identical}; "
        f"{n_rows} summary rows; exit codes {codes}; run times {', '.join(f'{t:.0f}' for t in times)} s (< 900 s)",
    )
    assert ok


# 10


def test_criterion_10_djia_reproduction():
    root = os.environ.get("DRRP_DJIA_DIR")
    if not root:
        record(10, None, "DJIA reproduction path skipped (set DRRP_DJIA_DIR; non-gating)")
        pytest.skip("DRRP_DJIA_DIR not set")
    series = marketdata.load_prices(os.path.join(root, "prices.csv"))
    mpath = os.path.join(root, "membership.csv")
    membership = marketdata.load_membership(mpath if os.path.isfile(mpath) else data_path("djia_membership.csv"))
    panel = marketdata.align_panel(series, membership)
    rf = marketdata.load_risk_free(os.path.join(root, "risk_free.csv"))
    rf_daily = np.asarray(rf.align(panel.dates), dtype=float)

    def strategy(family, kind, source=Source.EMPIRICAL):
        return bt.Strategy(AllocationRule(family), MeasureSpec(kind, 0.05, 0.05, source))

    eq = bt.run(panel, rf_daily, bt.Strategy.equal_weight()).stats
    cal = bt.run(panel, rf_daily, strategy(Family.RATIO_RAW, MeasureKind.CALMAR)).stats
    csh = bt.run(panel, rf_daily, strategy(Family.RATIO_RAW, MeasureKind.SHARPE, Source.MODEL)).stats
    inverse = {
        k.value: bt.run(panel, rf_daily, strategy(Family.RISK_INVERSE, k)).stats
        for k in (MeasureKind.VOLATILITY, MeasureKind.VARIANCE, MeasureKind.VAR, MeasureKind.CVAR, MeasureKind.MAX_DRAWDOWN)
    }
    checks = {
        "raw Calmar mean > EW": cal.mean_ann > eq.mean_ann,
        "raw cond. Sharpe mean > EW": csh.mean_ann > eq.mean_ann,
        **{f"inverse {k} std < EW": s.std_ann < eq.std_ann for k, s in inverse.items()},
    }
    ok = all(checks.values())
    record(10, ok, "DJIA orderings (non-gating): " + "; ".join(f"{k} {v}" for k, v in checks.items()))
