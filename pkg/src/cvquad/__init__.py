"""Monte Carlo moment and integral estimators with regression-adjusted control variates."""

__version__ = "0.1.0"
