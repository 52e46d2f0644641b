"""Vectorised evaluation of the fuel-rate composition and its derivatives.

Forward loss/fuel maps are extended flat to the left of their vertex, which
keeps every composition convex and nondecreasing for any argument.  Inverse
maps are only defined above the map minimum.

The compiled kernel in ``admm/_ckernel.pyx`` carries a scalar copy of these
formulas; keep the two in step.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class StepData(NamedTuple):
    """Per-step coefficient arrays of one convex problem (length N each)."""

    k2: np.ndarray
    k1: np.ndarray
    k0: np.ndarray
    n2: np.ndarray
    n1: np.ndarray
    n0: np.ndarray
    b2: np.ndarray
    b1: np.ndarray
    b0: np.ndarray
    e2: np.ndarray
    e1: np.ndarray
    e0: np.ndarray
    rho: float  # R/U^2 in 1/MW
    series: bool

    def take(self, idx) -> "StepData":
        arrays = [np.asarray(a)[idx] for a in self[:12]]
        return StepData(*arrays, self.rho, self.series)


def _clamped_quad(c2, c1, c0, x):
    """Value, slope and curvature of the map with its left arm flattened."""
    with np.errstate(divide="ignore", invalid="ignore"):
        vtx = np.where(c2 > 0, -c1 / (2 * np.where(c2 > 0, c2, 1.0)), -np.inf)
    xc = np.maximum(x, vtx)
    val = (c2 * xc + c1) * xc + c0
    active = x > vtx
    d1 = np.where(active, 2 * c2 * xc + c1, 0.0)
    d2 = np.where(active, 2 * c2, 0.0)
    return val, d1, d2


def _inv_quad(c2, c1, c0, y):
    """Inverse on the monotone branch with its first two derivatives.

    Returns NaN where ``y`` lies below the map minimum.
    """
    d = y - c0
    rad = c1 * c1 + 4 * c2 * d
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.sqrt(rad)
        x = 2 * d / (c1 + s)
        dx = 1.0 / s
        ddx = -2 * c2 / (s * s * s)
    return x, dx, ddx, rad


def fphi(sd: StepData, m, p, order: int = 0):
    """Fuel rate per step for masses ``m`` (kg, per system) and chemical
    battery powers ``p`` (MW).

    ``order=0`` returns the value only; ``order=1`` adds (d/dm, d/dp);
    ``order=2`` adds (d2/dm2, d2/dm dp, d2/dp2).  A mask of steps where an inverse map
    left its domain is returned last.
    """
    m = np.asarray(m, dtype=float)
    p = np.asarray(p, dtype=float)
    drv = (sd.e2 * m + sd.e1) * m + sd.e0
    drv_m = 2 * sd.e2 * m + sd.e1
    drv_mm = 2 * sd.e2
    q = p - sd.rho * p * p
    q_p = 1 - 2 * sd.rho * p
    q_pp = -2 * sd.rho

    if not sd.series:
        x, x_q, x_qq, rad = _inv_quad(sd.k2, sd.k1, sd.k0, q)
        bad = rad < 0
        u = drv - x
        phi, f1, f2 = _clamped_quad(sd.b2, sd.b1, sd.b0, u)
        if order == 0:
            return phi, bad
        x_p = x_q * q_p
        phi_m = f1 * drv_m
        phi_p = -f1 * x_p
        if order == 1:
            return phi, phi_m, phi_p, bad
        x_pp = x_qq * q_p * q_p + x_q * q_pp
        phi_mm = f2 * drv_m * drv_m + f1 * drv_mm
        phi_pp = f2 * x_p * x_p - f1 * x_pp
        phi_mp = -f2 * drv_m * x_p
        return phi, phi_m, phi_p, phi_mm, phi_mp, phi_pp, bad

    y, h1, h2 = _clamped_quad(sd.k2, sd.k1, sd.k0, drv)
    w = y - q
    z, g1, g2 = _clamped_quad(sd.n2, sd.n1, sd.n0, w)
    phi, f1, f2 = _clamped_quad(sd.b2, sd.b1, sd.b0, z)
    bad = np.zeros(np.shape(phi), dtype=bool)
    if order == 0:
        return phi, bad
    a = f1 * g1
    y_m = h1 * drv_m
    phi_m = a * y_m
    phi_p = -a * q_p
    if order == 1:
        return phi, phi_m, phi_p, bad
    b = f2 * g1 * g1 + f1 * g2
    y_mm = h2 * drv_m * drv_m + h1 * drv_mm
    phi_mm = b * y_m * y_m + a * y_mm
    phi_pp = b * q_p * q_p - a * q_pp
    phi_mp = -b * y_m * q_p
    return phi, phi_m, phi_p, phi_mm, phi_mp, phi_pp, bad
