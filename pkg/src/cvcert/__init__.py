"""Certification toolkit for continuous-variable graph states."""

__version__ = "0.1.0"
