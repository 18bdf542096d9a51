"""Rotation-vector inference from a measured frequency spectrum.

Candidates are d-subsets of the strongest frequencies.  For each candidate
every frequency is given an integer label by a greedy maximum a posteriori
search, scoring

* a chi-squared magnitude likelihood under an analytic decay prior
  ``sigma(k) = C exp(-r |k|)``, normalised by the probability that an
  unobserved mode stays below the weakest observed magnitude, and
* a Gaussian frequency likelihood in torus distance with width
  ``sigma_omega``.

Normalising constants common to every candidate are dropped, so the
log-posterior ``L_MAP`` is only comparable between runs of this package.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .spectral import FrequencySpectrum, torus_distance

__all__ = [
    "SpectralPrior",
    "WavenumberLabeling",
    "RotationEstimate",
    "NoValidRotationError",
    "unit_ball_volume",
    "fit_spectral_prior",
    "detect_island_period",
    "default_grid_bound",
    "wavenumber_grid",
    "greedy_label",
    "estimate_rotation_vector",
    "int_det",
]

log = logging.getLogger(__name__)

WINDOW = 5
EPS_MAP = 1e-3
# frequencies within this many sigma_omega of a label count as explained
MATCH_SIGMAS = 1e3


class NoValidRotationError(RuntimeError):
    """No candidate frequency subset gave a unimodular label matrix."""


@dataclass(frozen=True)
class SpectralPrior:
    C: float
    r: float
    sigma_omega: float = 1e-10
    D: int = 4

    def __post_init__(self):
        for name in ("C", "r", "sigma_omega"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def log_sigma2(self, knorm):
        return 2.0 * (math.log(self.C) - self.r * np.asarray(knorm, dtype=float))

    def log_alpha(self, H2, H2_min, knorm):
        """``log[ p(|h_k|^2 = H2) / P(|h_k|^2 <= H2_min) ]`` for ``|h_k|^2 ~ sigma(k)^2 chi^2_D``."""
        ls2 = self.log_sigma2(knorm)
        s2 = np.exp(ls2)
        a = 0.5 * self.D
        x = H2 / s2
        logpdf = (a - 1) * np.log(x) - x / 2 - a * math.log(2.0) - special.gammaln(a) - ls2
        return logpdf - _log_lower_gamma_p(a, 0.5 * H2_min / s2)

    def log_freq_likelihood(self, Omega, predicted):
        d = torus_distance(np.asarray(Omega) - np.asarray(predicted))
        return -0.5 * (d / self.sigma_omega) ** 2


def _log_lower_gamma_p(a: float, x):
    """log of the regularised lower incomplete gamma P(a, x), safe for tiny x."""
    x = np.asarray(x, dtype=float)
    p = special.gammainc(a, x)
    small = (p < 1e-300) | (x < 1e-8)
    out = np.empty_like(x)
    with np.errstate(divide="ignore"):
        out[~small] = np.log(p[~small])
    xs = x[small]
    # P(a, x) ~ x^a e^{-x} / Gamma(a + 1) for x -> 0
    out[small] = a * np.log(xs) - xs - special.gammaln(a + 1)
    return out


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def fit_spectral_prior(magnitudes: Sequence[float], d: int, D: int, n_fit: Optional[int] = None):
    """Fit ``log H_j^2 = log(D C^2) - 2 r ((j-1)/V_d)^(1/d)``; returns ``(C, r)``.

    Uses the first ``n_fit`` entries (default ``max(2, len // 3)``).  The decay
    rate is clamped to at least 1e-3.
    """
    mags = np.asarray(magnitudes, dtype=float)
    if n_fit is None:
        n_fit = max(2, mags.size // 3)
    n_fit = min(n_fit, mags.size)
    mags = mags[:n_fit]
    if mags.size < 2 or np.count_nonzero(mags > 0) < 2:
        raise ValueError("need at least two positive magnitudes")
    mags = mags[mags > 0]
    j = np.arange(1, mags.size + 1)
    s = ((j - 1) / unit_ball_volume(d)) ** (1.0 / d)
    y = np.log(mags**2)
    slope, intercept = np.polyfit(s, y, 1)
    r = max(-slope / 2, 1e-3)
    if r == 1e-3:
        intercept = float(np.mean(y + 2 * r * s))
    C = math.sqrt(math.exp(intercept) / D)
    return C, r


def detect_island_period(frequencies, p_max: int = 10, eps_isl: float = 1e-8) -> int:
    """Smallest ``p <= p_max`` with some frequency within ``eps_isl`` of ``n/p``, ``0 < n < p``."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    om = np.asarray(frequencies, dtype=float).ravel()
    for p in range(2, p_max + 1):
        n = np.arange(1, p)
        if np.any(torus_distance(om[:, None] - n[None, :] / p) < eps_isl):
            return p
    return 1


def default_grid_bound(J0: int, d: int, gamma: float = 10.0) -> int:
    return int(math.ceil(gamma * J0 ** (1.0 / d)))


def wavenumber_grid(d: int, P: int, p: int = 1) -> np.ndarray:
    """All labels ``k`` with ``|k|_inf <= P`` (k = 0 excluded); island labels are ``(n, k)``."""
    axes = [np.arange(-P, P + 1)] * d
    k = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    if p == 1:
        return k[np.any(k != 0, axis=1)]
    n = np.repeat(np.arange(p), k.shape[0])
    lab = np.concatenate([n[:, None], np.tile(k, (p, 1))], axis=1)
    return lab[np.any(lab != 0, axis=1)]


@dataclass
class WavenumberLabeling:
    """Wavenumber labels for the first ``J0`` spectrum entries.

    ``k`` is ``(J0, d)``; ``n`` holds the island index (all zero for tori).
    """

    k: np.ndarray
    n: np.ndarray
    p: int = 1

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.n = np.asarray(self.n, dtype=np.int64)

    def __len__(self):
        return self.k.shape[0]

    def is_injective(self) -> bool:
        rows = {tuple(r) for r in np.column_stack([self.n, self.k])}
        return len(rows) == len(self)

    def transformed(self, A) -> "WavenumberLabeling":
        """Labels for the rotation vector ``A omega``: ``k' = A^{-T} k``."""
        Ainv = _int_inverse(np.asarray(A, dtype=np.int64))
        return WavenumberLabeling(self.k @ Ainv, self.n.copy(), self.p)


@dataclass
class RotationEstimate:
    omega: np.ndarray
    labeling: WavenumberLabeling
    L_MAP: float
    source_rows: np.ndarray
    det_L: int
    p: int = 1
    candidate: tuple = ()
    J0: int = 0
    P: int = 0
    prior: Optional[SpectralPrior] = None
    n_explained: int = 0
    warnings: list = field(default_factory=list)


def int_det(M) -> int:
    """Exact determinant of a small integer matrix (fraction-free elimination)."""
    A = [[int(v) for v in row] for row in np.asarray(M)]
    n = len(A)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for i in range(n - 1):
        if A[i][i] == 0:
            swap = next((r for r in range(i + 1, n) if A[r][i] != 0), None)
            if swap is None:
                return 0
            A[i], A[swap] = A[swap], A[i]
            sign = -sign
        for r in range(i + 1, n):
            for c in range(i + 1, n):
                A[r][c] = (A[r][c] * A[i][i] - A[r][i] * A[i][c]) // prev
        prev = A[i][i]
    return sign * A[n - 1][n - 1]


def _int_inverse(A: np.ndarray) -> np.ndarray:
    det = int_det(A)
    if abs(det) != 1:
        raise ValueError(f"matrix is not unimodular (det = {det})")
    n = A.shape[0]
    adj = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(A, i, axis=0), j, axis=1)
            adj[j, i] = (-1) ** (i + j) * int_det(minor)
    return adj * det


class _LabelProblem:
    """Grid, magnitude scores and frequencies shared by all candidates."""

    def __init__(self, spectrum: FrequencySpectrum, prior: SpectralPrior, P: int, J0: int, p: int, d: int):
        self.Omega = np.asarray(spectrum.omega[:J0], dtype=float)
        H2 = spectrum.mag[:J0] ** 2
        self.grid = wavenumber_grid(d, P, p)
        self.p = p
        k = self.grid[:, 1:] if p > 1 else self.grid
        knorm = np.linalg.norm(k, axis=1)
        self.log_alpha = prior.log_alpha(H2[:, None], H2[-1], knorm[None, :])
        self.prior = prior
        self.match_tol = MATCH_SIGMAS * prior.sigma_omega

    def predicted(self, omega):
        if self.p == 1:
            return np.mod(self.grid @ omega, 1.0)
        return np.mod((self.grid[:, 0] + self.grid[:, 1:] @ omega) / self.p, 1.0)


def _greedy(problem: _LabelProblem, omega: np.ndarray):
    """Returns ``(grid indices, log-posterior, number of exactly matched frequencies)``."""
    pred = problem.predicted(omega)
    order = np.argsort(pred, kind="stable")
    spred = pred[order]
    G = order.size
    taken = np.zeros(G, dtype=bool)
    chosen = np.empty(len(problem.Omega), dtype=np.int64)
    total = 0.0
    matched = 0
    for j, Om in enumerate(problem.Omega):
        pos = int(np.searchsorted(spred, Om))
        width = WINDOW
        while True:
            idx = order[np.arange(pos - width, pos + width) % G]
            free = idx[~taken[idx]]
            if free.size or width >= G:
                break
            width *= 2
        dist = torus_distance(Om - pred[free])
        score = problem.log_alpha[j, free] - 0.5 * (dist / problem.prior.sigma_omega) ** 2
        # sigma_omega -> 0 limit: an exact match outranks any magnitude evidence
        hit = dist <= problem.match_tol
        if hit.any():
            score = np.where(hit, score, -np.inf)
            matched += 1
        best = int(np.argmax(score))
        g = int(free[best])
        taken[g] = True
        chosen[j] = g
        total += float(score[best])
    return chosen, total, matched


def _labeling_from(problem: _LabelProblem, chosen: np.ndarray, d: int) -> WavenumberLabeling:
    lab = problem.grid[chosen]
    if problem.p == 1:
        return WavenumberLabeling(lab, np.zeros(len(chosen), dtype=np.int64), 1)
    return WavenumberLabeling(lab[:, 1:], lab[:, 0], problem.p)


def greedy_label(omega, spectrum: FrequencySpectrum, prior: SpectralPrior, P: int, J0: int, p: int = 1):
    """Greedy MAP labels for the first ``J0`` frequencies given ``omega``.

    Returns ``(WavenumberLabeling, log_posterior)``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    J0 = min(J0, len(spectrum))
    problem = _LabelProblem(spectrum, prior, P, J0, p, omega.size)
    chosen, total, _ = _greedy(problem, omega)
    return _labeling_from(problem, chosen, omega.size), total


def trim_J0(spectrum: FrequencySpectrum, J0: int, eps_map: float = EPS_MAP) -> int:
    mags = spectrum.mag
    if mags.size == 0:
        return 0
    ok = int(np.count_nonzero(mags[: min(J0, mags.size)] / mags[0] > eps_map))
    return ok


def estimate_rotation_vector(
    spectrum: FrequencySpectrum,
    d: int,
    J0: int = 30,
    prior: Optional[SpectralPrior] = None,
    P: Optional[int] = None,
    p: int = 1,
    sigma_omega: float = 1e-10,
    eps_map: float = EPS_MAP,
    eps_isl: float = 1e-8,
    min_explained: float = 0.9,
) -> RotationEstimate:
    """MAP rotation vector over d-subsets of the strongest ``J0`` frequencies.

    Candidates are ranked first by how many of the ``J0`` frequencies their
    labeling reproduces within ``1e3 * sigma_omega`` and then by ``L_MAP``;
    ties go to the lexicographically first subset.  A candidate explaining
    fewer than ``min_explained * J0`` frequencies is rejected.
    """
    notes = []
    J0 = trim_J0(spectrum, J0, eps_map)
    if J0 < d:
        raise NoValidRotationError(f"only {J0} frequencies above the magnitude floor; need {d}")
    if prior is None:
        C, r = fit_spectral_prior(spectrum.mag, d, spectrum.D)
        prior = SpectralPrior(C, r, sigma_omega, spectrum.D)
    if P is None:
        P = default_grid_bound(J0, d)
    if d >= 4:
        msg = f"candidate enumeration over {math.comb(J0, d)} subsets (d={d}) may be slow"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    problem = _LabelProblem(spectrum, prior, P, J0, p, d)
    Omega = problem.Omega
    best = None
    for combo in itertools.combinations(range(J0), d):
        omega = np.mod(p * Omega[list(combo)], 1.0)
        if p > 1 and np.any(torus_distance(omega) < eps_isl):
            continue  # rational island frequencies cannot serve as generators
        chosen, total, matched = _greedy(problem, omega)
        key = (matched, total)
        if best is not None and not key > best[0]:
            continue
        lab = _labeling_from(problem, chosen, d)
        L = lab.k[list(combo)]
        det = int_det(L)
        if abs(det) != 1:
            continue
        best = (key, combo, omega, lab, L, det)
    if best is None:
        raise NoValidRotationError("no candidate subset yields a unimodular label matrix")
    (matched, total), combo, omega, lab, L, det = best
    if matched < J0:
        if matched < min_explained * J0:
            raise NoValidRotationError(
                f"best candidate explains only {matched} of {J0} frequencies; trajectory may be resonant or under-resolved"
            )
        msg = f"{J0 - matched} of {J0} frequencies not explained by the rotation vector"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return RotationEstimate(
        omega=omega, labeling=lab, L_MAP=total, source_rows=L, det_L=det, p=p,
        candidate=tuple(int(c) for c in combo), J0=J0, P=P, prior=prior, n_explained=matched,
        warnings=notes,
    )
