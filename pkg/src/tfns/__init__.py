"""Thin-film Navier-slip solver in hodograph coordinates."""

__version__ = "0.1.0"
