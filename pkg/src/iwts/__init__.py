"""Inland waterway traffic safety: vessel monitoring simulator and cloud alerting."""

__version__ = "0.1.0"
