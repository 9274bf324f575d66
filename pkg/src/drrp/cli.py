"""Command-line front end.

Subcommands::

    drrp backtest --config run.cfg [--jobs N] [--seed S]
    drrp factors  --config run.cfg
    drrp simulate --spec universe.json --out DIR [--seed S]
    drrp fit      --prices prices.csv --ticker AAA [--end DATE] [--window 126]
    drrp report   --config run.cfg | --csv summary.csv

Exit status is 0 on success, 1 when at least one strategy failed and 2 for
configuration or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__, armagarch, backtest, factoranalysis, marketdata, simulate
from .config import RunConfig, load_config, with_benchmark
from .errors import ConfigError, DrrpError, ParseError, ValidationError
from .measures import MeasureKind, MeasureSpec, Source

log = logging.getLogger("drrp")

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2

SUMMARY_FILE = "summary.csv"
FACTORS_FILE = "factors.csv"
MANIFEST_FILE = "manifest.json"
FITS_FILE = "fits.jsonl"
DETAIL_DIR = "strategies"

# published column headings, in SummaryStats.COLUMNS order
SUMMARY_HEADINGS = (
    "Mean",
    "Std",
    "Skew",
    "Kurt.",
    "Cumul.",
    "Sharpe",
    "CSharpe",
    "Calmar",
    "Max DD",
    "VaR(95%)",
    "CVaR(95%)",
    "VaR95/99",
    "CVaR95/99",
    "Turnover",
)
FACTOR_HEADINGS = ("alpha", "beta_mkt", "beta_smb", "beta_hml", "beta_mom")


def fmt(x):
    """Shortest round-trip text for a float; empty for NaN."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


# ---------------------------------------------------------------- data


def load_inputs(cfg: RunConfig):
    cfg.check_paths()
    series = marketdata.load_prices(cfg.prices)
    membership = marketdata.load_membership(cfg.membership) if cfg.membership else None
    panel = marketdata.align_panel(series, membership)
    if cfg.risk_free:
        rf = marketdata.load_risk_free(cfg.risk_free)
        rf_daily = np.asarray(rf.align(panel.dates), dtype=float)
    else:
        rf_daily = np.zeros(len(panel.dates))
    return panel, rf_daily


# ---------------------------------------------------------------- workers

# per-process state for strategy workers
_STATE = {}


def _init_worker(panel, rf_daily, schedule, fits):
    _STATE.update(panel=panel, rf=rf_daily, schedule=schedule, fits=fits)


def _fit_task(args):
    r, etas = args
    return backtest.fit_window(r, etas)


def _run_strategy(strategy):
    s = _STATE
    fits = None
    if strategy.measure is not None and strategy.measure.source is Source.MODEL:
        fits = s["fits"]
    try:
        return backtest.run(s["panel"], s["rf"], strategy, s["schedule"], fits=fits)
    except DrrpError as exc:
        return exc


def precompute_fits(panel, rf_daily, schedule, strategies, jobs):
    """Fit every (asset, rebalance) window once; shared by all model strategies."""
    etas = backtest.tail_levels(strategies)
    if not etas:
        if not any(st.measure is not None and st.measure.source is Source.MODEL for st in strategies):
            return None
        etas = (0.05,)
    fits = backtest.ModelFits(panel, rf_daily, schedule, etas)
    tasks = fits.tasks()
    args = [(backtest.window(panel, rf_daily, j, k, schedule.formation)[0], fits.etas) for j, k in tasks]
    log.info("fitting %d asset windows", len(tasks))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_fit_task, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        results = [_fit_task(a) for a in args]
    for (j, k), res in zip(tasks, results):
        fits.put(j, k, res)
    return fits


def run_strategies(panel, rf_daily, schedule, strategies, jobs):
    fits = precompute_fits(panel, rf_daily, schedule, strategies, jobs)
    if jobs > 1 and len(strategies) > 1:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker, initargs=(panel, rf_daily, schedule, fits)
        ) as ex:
            return list(ex.map(_run_strategy, strategies)), fits
    _init_worker(panel, rf_daily, schedule, fits)
    return [_run_strategy(st) for st in strategies], fits


# ---------------------------------------------------------------- writers


def _flags_text(flags):
    return ";".join(dict.fromkeys(flags))


def _report_flags(rep):
    flags = list(rep.flags) + list(rep.stats.flags if rep.stats else ())
    for rec in rep.rebalance_log:
        flags.extend(rec.flags)
    return flags


def write_summary(path, strategies, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rule", "measure", *SUMMARY_HEADINGS, "status", "flags", "strategy"))
        for st, res in zip(strategies, results):
            if isinstance(res, Exception):
                vals = [""] * len(SUMMARY_HEADINGS)
                status, flags = f"failed: {type(res).__name__}: {res}", ""
            else:
                vals = [fmt(v) for v in res.stats.values()]
                status, flags = "ok", _flags_text(_report_flags(res))
            w.writerow((st.rule_label, st.measure_label, *vals, status, flags, st.key))


def write_detail(out_dir, index, rep):
    os.makedirs(os.path.join(out_dir, DETAIL_DIR), exist_ok=True)
    daily = os.path.join(DETAIL_DIR, f"{index:02d}_daily.csv")
    rebal = os.path.join(DETAIL_DIR, f"{index:02d}_rebalances.csv")
    with open(os.path.join(out_dir, daily), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "return", "tranches", *rep.assets))
        for d, r, c, wt in zip(rep.dates, rep.daily_returns, rep.tranche_counts, rep.weights):
            w.writerow((str(d), fmt(r), int(c), *(fmt(x) for x in wt)))
    with open(os.path.join(out_dir, rebal), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "row", "turnover", "flags", *rep.assets))
        for rec in rep.rebalance_log:
            tw = rec.target.as_dict() if rec.target is not None else {}
            w.writerow(
                (str(rec.date), rec.index, fmt(rec.turnover), _flags_text(rec.flags), *(fmt(tw.get(a, 0.0)) for a in rep.assets))
            )
    return daily, rebal


def write_manifest(path, cfg: RunConfig, strategies, results, details, fits):
    entries = []
    for i, (st, res) in enumerate(zip(strategies, results)):
        e = {"index": i, "strategy": st.key, "rule": st.rule_label, "measure": st.measure_label}
        if isinstance(res, Exception):
            e["status"] = "failed"
            e["error"] = f"{type(res).__name__}: {res}"
        else:
            e["status"] = "ok"
            e["daily"], e["rebalances"] = details[i]
        entries.append(e)
    fit_info = None
    if fits is not None:
        values = [fits.get(j, k) for j, k in fits.tasks()]
        fit_info = {
            "windows": len(values),
            "failed": sum(isinstance(v, Exception) for v in values),
            "student_t_fallback": sum(not isinstance(v, Exception) and v.cts_fallback for v in values),
        }
    doc = {
        "version": __version__,
        "seed": cfg.seed,
        "config": [[k, v] for k, v in cfg.echo],
        "schedule": {
            "formation": cfg.schedule.formation,
            "holding": cfg.schedule.holding,
            "step": cfg.schedule.step,
            "tranches": cfg.schedule.tranches,
            "min_coverage": cfg.schedule.min_coverage,
        },
        "model_fits": fit_info,
        "strategies": entries,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_fit_diagnostics(path, panel, fits):
    """One JSON line per fitted asset window."""
    with open(path, "w", encoding="utf-8") as fh:
        for j, k in fits.tasks():
            v = fits.get(j, k)
            doc = {"asset": panel.assets[j], "date": str(panel.dates[k])}
            if isinstance(v, Exception):
                doc["error"] = f"{type(v).__name__}: {v}"
            else:
                doc.update(v.diagnostics)
            fh.write(json.dumps(doc, sort_keys=True, default=float) + "\n")


# ---------------------------------------------------------------- commands


def _config(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.output_dir:
        cfg = replace(cfg, output_dir=os.path.abspath(args.output_dir))
    return cfg


def cmd_backtest(args):
    cfg = _config(args)
    panel, rf_daily = load_inputs(cfg)
    strategies = with_benchmark(cfg.strategies)
    jobs = max(1, int(args.jobs))
    results, fits = run_strategies(panel, rf_daily, cfg.schedule, strategies, jobs)
    os.makedirs(cfg.output_dir, exist_ok=True)
    details = {}
    failed = 0
    for i, (st, res) in enumerate(zip(strategies, results)):
        if isinstance(res, Exception):
            failed += 1
            print(f"strategy {i} ({st.rule_label} / {st.measure_label}) failed: {type(res).__name__}: {res}", file=sys.stderr)
            continue
        details[i] = write_detail(cfg.output_dir, i, res)
    write_summary(os.path.join(cfg.output_dir, SUMMARY_FILE), strategies, results)
    write_manifest(os.path.join(cfg.output_dir, MANIFEST_FILE), cfg, strategies, results, details, fits)
    if args.verbose and fits is not None:
        write_fit_diagnostics(os.path.join(cfg.output_dir, FITS_FILE), panel, fits)
    log.info("wrote %d strategies to %s", len(strategies), cfg.output_dir)
    return EXIT_FAILED if failed else EXIT_OK


def _read_daily(path):
    dates, rets = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line, row in enumerate(reader, start=2):
            try:
                dates.append(np.datetime64(row[0], "D"))
                rets.append(float(row[1]))
            except (ValueError, IndexError):
                raise ParseError("bad daily return row", line=line, path=path) from None
    return np.array(dates), np.array(rets)


def cmd_factors(args):
    cfg = _config(args)
    if not cfg.factors:
        raise ConfigError("config has no factors file")
    if not os.path.isfile(cfg.factors):
        raise ConfigError(f"factors file not found: {cfg.factors}")
    manifest = os.path.join(cfg.output_dir, MANIFEST_FILE)
    if not os.path.isfile(manifest):
        raise ConfigError(f"no backtest output in {cfg.output_dir}; run 'drrp backtest --config {args.config}' first")
    with open(manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    panel = factoranalysis.load_factors(cfg.factors)
    out = os.path.join(cfg.output_dir, FACTORS_FILE)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ("rule", "measure", *FACTOR_HEADINGS, "r_squared", *(f"t_{h}" for h in FACTOR_HEADINGS), "n_months", "status")
        )
        for e in doc["strategies"]:
            blank = [""] * (2 * len(FACTOR_HEADINGS) + 2)
            if e["status"] != "ok":
                w.writerow((e["rule"], e["measure"], *blank, "skipped: backtest failed"))
                continue
            path = os.path.join(cfg.output_dir, e["daily"])
            if not os.path.isfile(path):
                raise ConfigError(f"missing backtest output {path}; rerun 'drrp backtest'")
            dates, rets = _read_daily(path)
            try:
                res = factoranalysis.carhart_regress(factoranalysis.to_monthly(dates, rets), panel)
            except DrrpError as exc:
                w.writerow((e["rule"], e["measure"], *blank, f"skipped: {type(exc).__name__}: {exc}"))
                continue
            coefs = [factoranalysis.format_coef(c, s) for c, s in zip(res.coefficients, res.stars)]
            w.writerow(
                (e["rule"], e["measure"], *coefs, fmt(res.r_squared), *(fmt(t) for t in res.t_stats), res.n_obs, "ok")
            )
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_simulate(args):
    if not args.spec or not args.out:
        raise ConfigError("simulate needs --spec and --out")
    desc = simulate.load_descriptor(args.spec)
    seed = 0 if args.seed is None else args.seed
    paths = simulate.write_universe(simulate.generate(desc, seed), args.out)
    for key in sorted(paths):
        print(f"{key}: {paths[key]}")
    return EXIT_OK


def cmd_fit(args):
    prices = args.prices
    if prices is None and args.config:
        prices = _config(args).prices
    if prices is None:
        raise ConfigError("fit needs --prices or --config")
    if not os.path.isfile(prices):
        raise ConfigError(f"prices file not found: {prices}")
    panel = marketdata.align_panel(marketdata.load_prices(prices))
    if args.ticker not in panel.assets:
        raise ConfigError(f"ticker {args.ticker!r} not in {prices}")
    try:
        k = len(panel.dates) - 1 if args.end is None else panel.index_of(marketdata.parse_date(args.end))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"--end: {exc}") from None
    r = panel.returns[max(0, k - args.window + 1) : k + 1, panel.column(args.ticker)]
    r = r[np.isfinite(r)]
    f = armagarch.fit(r)
    fc = armagarch.forecast(f)
    doc = f.diagnostics()
    doc["ticker"] = args.ticker
    doc["end"] = str(panel.dates[k])
    doc["forecast"] = {"mu_next": fc.mu_next, "sigma_next": fc.sigma_next}
    doc["measures"] = {}
    for kind in (MeasureKind.VOLATILITY, MeasureKind.SHARPE, MeasureKind.VAR, MeasureKind.CVAR, MeasureKind.STAR):
        spec = MeasureSpec(kind, 0.05, 0.05, Source.MODEL)
        try:
            doc["measures"][spec.label] = armagarch.model_measure(f, spec, 0.0, fc).value
        except DrrpError as exc:
            doc["measures"][spec.label] = f"{type(exc).__name__}: {exc}"
    json.dump(doc, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")
    return EXIT_OK


def render_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return ""
    header, body = rows[0], rows[1:]
    shown = [i for i, h in enumerate(header) if h not in ("flags", "strategy")]

    def cell(text):
        num = text.rstrip("*")
        if num.lstrip("-").isdigit():
            return text
        try:
            return f"{float(num):.4f}" + text[len(num) :]
        except ValueError:
            return text

    table = [[header[i] for i in shown]] + [[cell(r[i]) if i >= 2 else r[i] for i in shown] for r in body]
    widths = [max(len(r[c]) for r in table) for c in range(len(shown))]
    lines = []
    for r in table:
        parts = [r[c].ljust(widths[c]) if c < 2 else r[c].rjust(widths[c]) for c in range(len(shown))]
        lines.append("  ".join(parts).rstrip())
    return "\n".join(lines) + "\n"


def cmd_report(args):
    path = args.csv
    if path is None:
        cfg = _config(args)
        path = os.path.join(cfg.output_dir, FACTORS_FILE if args.factors else SUMMARY_FILE)
    if not os.path.isfile(path):
        raise ConfigError(f"no table at {path}; run 'drrp backtest' first")
    sys.stdout.write(render_table(path))
    return EXIT_OK


COMMANDS = {
    "backtest": cmd_backtest,
    "factors": cmd_factors,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--output-dir", help="override the config output_dir")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="drrp", description="Diversified reward-risk parity backtests.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("backtest", parents=[common], help="run every configured strategy")
    sub.add_parser("factors", parents=[common], help="Carhart regressions of backtest returns")
    s = sub.add_parser("simulate", parents=[common], help="write a synthetic fixture set")
    s.add_argument("--spec", help="universe descriptor (JSON)")
    s.add_argument("--out", help="output directory")
    f = sub.add_parser("fit", parents=[common], help="ARMA-GARCH-CTS diagnostics for one asset window")
    f.add_argument("--prices", help="prices CSV (defaults to the config's)")
    f.add_argument("--ticker", required=True)
    f.add_argument("--end", help="last date of the window (default: last date)")
    f.add_argument("--window", type=int, default=backtest.Schedule().formation)
    r = sub.add_parser("report", parents=[common], help="print a result CSV as an aligned table")
    r.add_argument("--csv", help="CSV to render (defaults to the config's summary)")
    r.add_argument("--factors", action="store_true", help="render the factor table instead")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"drrp {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DrrpError as exc:
        print(f"drrp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
