"""Minimizers of segregated-state energies on 2D grids, with verification tools."""

from __future__ import annotations

__version__ = "0.1.0"
