"""Relaxation and stimulated-transition operators for degenerate V-type atoms."""

__version__ = '1.0.0'
