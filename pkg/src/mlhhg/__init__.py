"""High-harmonic generation in laser-driven multi-level systems from 1D solids."""

__version__ = "0.1.0"
