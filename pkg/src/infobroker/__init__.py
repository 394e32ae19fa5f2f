"""Optimal data-broker mechanisms on a Hotelling line: closed forms, an LP oracle, welfare."""

__version__ = "0.1.0"
