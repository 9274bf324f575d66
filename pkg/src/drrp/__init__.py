"""Diversified reward-risk parity: measures, allocation rules and backtests."""

__version__ = "0.1.0"
