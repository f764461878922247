"""Auditing toolkit for feature attributions: exact attribution methods,
counterexample construction, hypothesis-test harnesses and query tests."""

__version__ = "0.1.0"
