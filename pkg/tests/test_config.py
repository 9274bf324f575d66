import pytest

from drrp.allocation import Family
from drrp.config import load_config, parse_config, parse_strategy, with_benchmark
from drrp.errors import ConfigError
from drrp.measures import MeasureKind, Source

from conftest import data_path, write_text

BASE = "prices = p.csv\noutput_dir = out\n"


def test_bundled_configs():
    suite = load_config(data_path("suite.cfg"))
    risk = load_config(data_path("risk.cfg"))
    eq = load_config(data_path("equal.cfg"))
    assert len(with_benchmark(suite.strategies)) == 25
    assert len(with_benchmark(risk.strategies)) == 23
    assert len(with_benchmark(eq.strategies)) == 1
    assert suite.seed == 20240601 and suite.model == "cts"
    assert suite.prices.endswith("fixture/prices.csv")
    suite.check_paths()


def test_paths_relative_to_config(tmp_path):
    path = write_text(tmp_path / "run.cfg", BASE + "strategy = rule=equal\n")
    cfg = load_config(path)
    assert cfg.prices == str(tmp_path / "p.csv")
    with pytest.raises(ConfigError, match="p.csv"):
        cfg.check_paths()


def test_strategy_defaults():
    s = parse_strategy("rule=ratio-raw measure=sharpe")
    assert s.measure.source is Source.MODEL
    s = parse_strategy("rule=risk-inverse measure=mdd")
    assert s.measure.kind is MeasureKind.MAX_DRAWDOWN and s.measure.source is Source.EMPIRICAL
    s = parse_strategy("rule=ratio-linear:a=1,b=1 measure=rachev eta=0.5 zeta=0.1 source=empirical")
    assert (s.measure.eta, s.measure.zeta) == (0.5, 0.1) and s.rule.family is Family.RATIO_LINEAR


def test_historical_model_default():
    cfg = parse_config(BASE + "model = historical\nstrategy = rule=ratio-raw measure=sharpe\n")
    assert cfg.strategies[0].measure.source is Source.EMPIRICAL


@pytest.mark.parametrize(
    "text, match",
    [
        ("rule=ratio-raw", "measure"),
        ("measure=sharpe", "rule"),
        ("rule=ratio-raw measure=nope", "unknown measure"),
        ("rule=ratio-raw measure=sharpe colour=red", "unknown strategy field"),
        ("rule=ratio-raw measure=sharpe source=magic", "source"),
        ("rule=ratio-raw measure=var", "risk"),
        ("rule=ratio-raw measure=star eta=2", "bad measure"),
        ("rule=ratio-raw measure=sharpe measure=var", "repeats"),
        ("rule", "name=value"),
    ],
)
def test_strategy_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_strategy(text)


@pytest.mark.parametrize(
    "text, match",
    [
        ("prices = p.csv\nstrategy = rule=equal\n", "output_dir"),
        (BASE, "no strategy"),
        (BASE + "colour = red\nstrategy = rule=equal\n", "line 3: unknown key"),
        (BASE + "prices = q.csv\nstrategy = rule=equal\n", "duplicate"),
        (BASE + "model = magic\nstrategy = rule=equal\n", "model"),
        (BASE + "strategy = rule=equal\nstrategy = rule=equal\n", "twice"),
        (BASE + "formation = 100\nstrategy = rule=equal\n", "formation"),
        (BASE + "seed = x\nstrategy = rule=equal\n", "invalid"),
        (BASE + "just words\n", "line 3"),
        (BASE + "strategy = rule=ratio-raw\n", "line 3"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_comments_and_echo():
    cfg = parse_config("# header\n" + BASE + "strategy = rule=equal  # benchmark\n")
    assert cfg.echo[-1] == ("strategy", "rule=equal")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.cfg")


def test_benchmark_always_first_once():
    cfg = parse_config(BASE + "strategy = rule=ratio-raw measure=sharpe\nstrategy = rule=equal\n")
    out = with_benchmark(cfg.strategies)
    assert out[0].measure is None and sum(s.measure is None for s in out) == 1 and len(out) == 2
