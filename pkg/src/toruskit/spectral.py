"""Weighted Birkhoff averages and Birkhoff reduced rank extrapolation (RRE).

The RRE filter ``c = (c_{-J}, ..., c_J)`` minimises the spread of the
filtered differences ``u_t = h_{t+1} - h_t`` subject to ``sum(c) = 1`` and
``c_{-j} = c_j``.  Both constraints are built into the parameterisation
``c = 1/(2J+1) + Q c'`` with ``Q`` the constant-free cosine basis, so they
hold to rounding on every solve.  Unit-circle roots of the filter
polynomial give the trajectory's frequencies.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from numpy.lib.stride_tricks import sliding_window_view
from numpy.polynomial import chebyshev

from .dynamics import ObservableSeries

__all__ = [
    "birkhoff_weights",
    "weighted_birkhoff_average",
    "wba_residual",
    "RREFilter",
    "FrequencySpectrum",
    "solve_rre_filter",
    "extract_frequencies",
    "project_spectrum",
    "torus_distance",
]

log = logging.getLogger(__name__)

MERGE_TOL = 1e-12


def torus_distance(x):
    """Distance of ``x`` (mod 1) from the nearest integer."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


def birkhoff_weights(T: int) -> np.ndarray:
    """Normalised bump weights ``w((t+1)/(T+1))``, ``w(x) = exp(-1/(x(1-x)))``.

    Computed in log space so the normalisation is exact; weights far in the
    tails underflow to zero once ``T`` exceeds a few hundred.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    x = np.arange(1, T + 1) / (T + 1)
    logw = -1.0 / (x * (1.0 - x))
    w = np.exp(logw - logw.max())
    w /= w.sum()
    # exact mirror symmetry despite rounding in x
    return 0.5 * (w + w[::-1])


def _series_data(series) -> np.ndarray:
    if isinstance(series, ObservableSeries):
        return series.data
    data = np.asarray(series, dtype=float)
    return data[:, None] if data.ndim == 1 else data


def weighted_birkhoff_average(series, weighted: bool = True) -> np.ndarray:
    h = _series_data(series)
    T = h.shape[0]
    w = birkhoff_weights(T) if weighted else np.full(T, 1.0 / T)
    return w @ h


def wba_residual(series) -> float:
    """Relative change of the weighted average between the two halves."""
    h = _series_data(series)
    N = h.shape[0]
    if N % 2 or N < 2:
        raise ValueError("wba_residual needs an even series length")
    first = weighted_birkhoff_average(h[: N // 2])
    second = weighted_birkhoff_average(h[N // 2 :])
    norm = np.linalg.norm(first)
    if norm == 0.0:
        raise ZeroDivisionError("first-half weighted average is the zero vector")
    return float(np.linalg.norm(second - first) / norm)


@dataclass
class RREFilter:
    """Palindromic filter ``c`` (index 0 holds ``c_{-J}``) and its residual."""

    c: np.ndarray
    J: int
    T: int
    residual: float
    rank_deficient: bool = False

    @property
    def half(self) -> np.ndarray:
        """``(c_0, c_1, ..., c_J)``."""
        return self.c[self.J :]


@dataclass
class FrequencySpectrum:
    """Frequencies in (0, 1/2] with amplitudes of their ``e^{+2 pi i Omega t}`` modes.

    Entries are sorted by descending ``mag = ||H||``; each stands for the
    conjugate pair ``+-Omega``.
    """

    mean: np.ndarray
    omega: np.ndarray
    H: np.ndarray
    fit_residual: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def mag(self) -> np.ndarray:
        return np.linalg.norm(self.H, axis=1) if len(self.omega) else np.zeros(0)

    @property
    def J_star(self) -> int:
        return len(self.omega)

    @property
    def D(self) -> int:
        return self.mean.size

    def __len__(self) -> int:
        return len(self.omega)

    def entries(self):
        return list(zip(self.omega, self.H, self.mag))

    def truncate(self, n: int) -> "FrequencySpectrum":
        return FrequencySpectrum(self.mean, self.omega[:n], self.H[:n], self.fit_residual, list(self.warnings))


def _cosine_basis(J: int) -> np.ndarray:
    """Rows ``j = -J..J``, columns ``k = 1..J`` of the constant-free DCT."""
    M = 2 * J + 1
    j = np.arange(-J, J + 1)[:, None]
    k = np.arange(1, J + 1)[None, :]
    return np.sqrt(2.0 / M) * np.cos(2 * np.pi * k * j / M)


def _filtered_differences(u: np.ndarray, c: np.ndarray, T: int) -> np.ndarray:
    """``sum_j c_j u_{t+j}`` for ``t < T`` (direct summation, no FFT)."""
    M = c.size
    out = np.zeros((T, u.shape[1]))
    for j in range(M):
        out += c[j] * u[j : j + T]
    return out


def solve_rre_filter(series, J: int, T: int) -> RREFilter:
    """Least-squares Birkhoff RRE filter of half-width ``J`` on ``T`` windows."""
    h = _series_data(series)
    D = h.shape[1]
    if J < 1 or T < 1:
        raise ValueError("J and T must be positive")
    if h.shape[0] < T + 2 * J + 1:
        raise ValueError(f"series length {h.shape[0]} < T + 2J + 1 = {T + 2 * J + 1}")
    if D * T < J:
        raise ValueError(f"D*T = {D * T} must be >= J = {J}")
    M = 2 * J + 1
    h = h[: T + 2 * J + 1]
    u = np.diff(h, axis=0)  # T + 2J differences

    C_rre = float(birkhoff_weights(T + 2 * J) @ np.einsum("ij,ij->i", u, u))

    # UQ with the palindromic symmetry of Q folded in: Q[J+j] == Q[J-j]
    Qh = _cosine_basis(J)[J:]  # rows j = 0..J
    A = np.empty((D * T, J + 1))
    for d in range(D):
        W = sliding_window_view(u[:, d], M)[:T]
        Wsym = W[:, J:].copy()
        Wsym[:, 1:] += W[:, J - 1 :: -1]
        A[d * T : (d + 1) * T, :J] = Wsym @ Qh
        # U 1 telescopes
        A[d * T : (d + 1) * T, J] = (h[M : M + T, d] - h[:T, d]) / M

    R = sla.qr(A, mode="r", overwrite_a=True, check_finite=False)[0]
    R11 = R[:J, :J]
    rhs = -R[:J, J]
    diag = np.abs(np.diag(R11))
    rank_deficient = bool(diag.max() == 0.0 or diag.min() < 1e-14 * diag.max())
    if rank_deficient:
        log.debug("RRE triangular factor is rank deficient (J=%d, T=%d)", J, T)
        cp = sla.lstsq(R11, rhs, cond=1e-14)[0] if diag.max() > 0 else np.zeros(J)
    else:
        cp = sla.solve_triangular(R11, rhs, check_finite=False)
    c = 1.0 / M + _cosine_basis(J) @ cp
    c = 0.5 * (c + c[::-1])

    if C_rre == 0.0:
        residual = 0.0
    else:
        Uc = _filtered_differences(u, c, T)
        residual = float(np.linalg.norm(Uc) / np.sqrt(T * C_rre))
    return RREFilter(c=c, J=J, T=T, residual=residual, rank_deficient=rank_deficient)


def _fold_half(omega: np.ndarray) -> np.ndarray:
    omega = np.mod(omega, 1.0)
    return np.where(omega > 0.5, 1.0 - omega, omega)


def _merge(omega: np.ndarray) -> np.ndarray:
    omega = np.sort(omega[omega > MERGE_TOL])
    if omega.size == 0:
        return omega
    keep = np.concatenate([[True], np.diff(omega) > MERGE_TOL])
    return omega[keep]


def extract_frequencies(filt: RREFilter, circle_tol: float = 1e-4) -> np.ndarray:
    """Frequencies in (0, 1/2] of the filter's unit-circle roots.

    With ``y = (z + 1/z)/2`` the palindromic polynomial becomes the Chebyshev
    series ``c_0 + 2 sum_j c_j T_j(y)``, whose roots come from a ``J x J``
    colleague-matrix eigenproblem.  Unit-circle roots ``z`` are the real
    ``y`` in ``[-1, 1]``; a root is kept when ``| |z| - 1 | <= circle_tol``.
    """
    c_half = np.asarray(filt.half, dtype=float)
    J = c_half.size - 1
    if J < 1:
        return np.zeros(0)
    if abs(c_half[-1]) <= 1e-14 * np.abs(c_half).max():
        raise ValueError("leading filter coefficient vanishes")
    a = c_half.copy()
    a[1:] *= 2.0

    y = chebyshev.chebroots(a)
    z = y + np.sqrt(y.astype(complex) ** 2 - 1.0)
    z = np.where(np.abs(z) < 1.0, 1.0 / z, z)
    on_circle = np.abs(z) - 1.0 <= circle_tol
    y_c, z_c = y[on_circle], z[on_circle]

    if y_c.size:
        # |T_j(y)| <= 1 on the unit-circle roots
        rel = np.abs(chebyshev.chebval(y_c, a)) / np.abs(a).sum()
        if rel.max() > 1e-6:
            log.info("palindromic root reduction ill-conditioned (rel. residual %.2e); using companion matrix", rel.max())
            roots = np.roots(filt.c[::-1])
            z_c = roots[np.abs(np.abs(roots) - 1.0) <= circle_tol]
    omega = np.abs(np.angle(z_c)) / (2 * np.pi)
    return _merge(_fold_half(omega))


def project_spectrum(series, frequencies: Sequence[float]) -> FrequencySpectrum:
    """Least-squares amplitudes of the given frequencies on the whole series.

    Fitted in the real basis ``1, cos 2 pi Omega t, sin 2 pi Omega t`` so the
    conjugate pair amplitudes are exactly conjugate.
    """
    h = _series_data(series)
    N, D = h.shape
    omega = np.asarray(frequencies, dtype=float).ravel()
    notes = []
    if omega.size and np.min(np.diff(np.sort(omega)), initial=np.inf) < MERGE_TOL:
        msg = "frequencies closer than 1e-12; projection is ill-conditioned"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    half = np.abs(omega - 0.5) < MERGE_TOL
    ncol = 1 + 2 * omega.size - int(half.sum())
    if ncol > N:
        raise ValueError(f"{ncol} real columns exceed series length {N}")

    t = np.arange(N)[:, None]
    phase = 2 * np.pi * np.mod(np.outer(t, omega), 1.0)
    cols = [np.ones((N, 1)), np.cos(phase), np.sin(phase[:, ~half])]
    A = np.hstack(cols + [h])
    R = sla.qr(A, mode="r", overwrite_a=True, check_finite=False)[0]
    R11, QtB = R[:ncol, :ncol], R[:ncol, ncol:]
    diag = np.abs(np.diag(R11))
    if diag.min() < 1e-14 * diag.max():
        msg = "projection design matrix is numerically rank deficient"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        X = sla.lstsq(R11, QtB, cond=1e-14)[0]
    else:
        X = sla.solve_triangular(R11, QtB, check_finite=False)
    # rows beyond ncol of R hold the part of h outside the fitted span
    resid = float(np.linalg.norm(np.triu(R[ncol:, ncol:])) / max(np.linalg.norm(h), np.finfo(float).tiny))

    n = omega.size
    a = X[1 : 1 + n]
    b = np.zeros_like(a)
    b[~half] = X[1 + n :]
    H = (a - 1j * b) / 2
    H[half] = a[half]  # (-1)^t mode: no conjugate partner
    mags = np.linalg.norm(H, axis=1)
    order = np.lexsort((omega, -mags))
    return FrequencySpectrum(mean=X[0].copy(), omega=omega[order], H=H[order], fit_residual=resid, warnings=notes)
