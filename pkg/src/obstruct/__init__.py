"""Obstruction functions of CR hypersurfaces from truncated power series."""

__version__ = "0.1.0"
