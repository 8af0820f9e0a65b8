"""Zero-order-hold discretization of sampled continuous-time ensembles."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm

from .model import SampledEnsemble

__all__ = ["AliasingError", "discretize_zoh", "zoh_pair", "max_imag_eigenvalue"]


class AliasingError(ValueError):
    """h * max|Im lambda| >= pi somewhere on the grid."""

    def __init__(self, theta, h: float, max_imag: float):
        self.theta = tuple(float(t) for t in theta)
        self.h = h
        self.max_imag = max_imag
        self.suggested_h = 0.9 * math.pi / max_imag if max_imag > 0 else h
        super().__init__(
            f"ZOH step h={h} aliases at theta={self.theta}: h*|Im lambda|={h * max_imag:.6g} >= pi; "
            f"try h <= {self.suggested_h:.6g}"
        )


def zoh_pair(A: np.ndarray, B: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """(exp(hA), int_0^h exp(sA) ds B) from one exponential of [[A, B], [0, 0]]."""
    n, m = B.shape
    M = np.zeros((n + m, n + m), dtype=np.result_type(A, B, float))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(h * M)
    return E[:n, :n], E[:n, n:]


def max_imag_eigenvalue(ens: SampledEnsemble) -> tuple[float, int]:
    """Largest |Im lambda(A(theta))| over the grid and the grid index attaining it."""
    vals = np.array([np.max(np.abs(np.linalg.eigvals(A).imag)) for A in ens.A])
    i = int(np.argmax(vals))
    return float(vals[i]), i


def discretize_zoh(ens: SampledEnsemble, h: float) -> SampledEnsemble:
    """Exact discrete-time image of a continuous ensemble under piecewise-constant inputs.

    Raises
    ------
    AliasingError
        If ``h * |Im lambda| >= pi`` at some grid point.
    """
    if not h > 0:
        raise ValueError(f"ZOH step must be positive, got {h}")
    if ens.time_mode != "continuous":
        raise ValueError("discretize_zoh expects a continuous-time ensemble")
    max_im, i = max_imag_eigenvalue(ens)
    if h * max_im >= math.pi:
        raise AliasingError(ens.grid.points[i], h, max_im)
    dtype = np.result_type(ens.A, ens.B, float)
    Ad = np.empty(ens.A.shape, dtype=dtype)
    Bd = np.empty(ens.B.shape, dtype=dtype)
    for k, (A, B) in enumerate(zip(ens.A, ens.B)):
        Ad[k], Bd[k] = zoh_pair(A, B, h)
    return SampledEnsemble(ens.grid, Ad, Bd, "discrete", zoh_step=float(h))
