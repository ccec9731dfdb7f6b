"""Exponential and logarithm maps on the flat torus R/Z (applied component-wise)."""

from __future__ import annotations

import numpy as np

__all__ = ["torus_log", "torus_exp", "wrap"]


def torus_log(f, f_prime):
    """Shortest signed displacement from ``f`` to ``f_prime`` on R/Z.

    Uses atan2(sin, cos) so the antipodal tie at distance 0.5 resolves to +0.5.
    Output lies in [-0.5, 0.5].
    """
    delta = 2.0 * np.pi * (np.asarray(f_prime, dtype=float) - np.asarray(f, dtype=float))
    out = np.arctan2(np.sin(delta), np.cos(delta)) / (2.0 * np.pi)
    return out if out.ndim else float(out)


def torus_exp(f, v):
    """``(f + v) mod 1``, guaranteed to land in [0, 1)."""
    out = np.mod(np.asarray(f, dtype=float) + np.asarray(v, dtype=float), 1.0)
    # mod can round up to exactly 1.0 for tiny negative inputs
    out = np.where(out >= 1.0, 0.0, out)
    return out if out.ndim else float(out)


def wrap(d):
    """Map displacements to [-0.5, 0.5) by subtracting the nearest integer."""
    d = np.asarray(d, dtype=float)
    return d - np.floor(d + 0.5)
