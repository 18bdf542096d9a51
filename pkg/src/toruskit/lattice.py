"""Korkine-Zolotarev canonicalisation of a rotation vector.

The averaged metric ``G = sum_j H_j^2 k_j k_j^T`` measures squared loop
lengths of the embedded torus: a homology class ``m`` has length
``sqrt(m^T G m)``.  A KZ basis of the lattice with Gram matrix ``G`` picks
the shortest, then the next shortest independent loop, and so on; rewriting
the rotation vector in that basis gives the most compact Fourier
representation.
"""
from __future__ import annotations

import logging
import math
import warnings

import numpy as np
import scipy.linalg as sla

from .rotation_inference import WavenumberLabeling, int_det
from .spectral import FrequencySpectrum

__all__ = [
    "LatticeError",
    "EnumerationOverflowError",
    "averaged_metric",
    "gram_factor",
    "lll_reduce",
    "shortest_lattice_vector",
    "kz_reduce",
    "canonicalize_rotation",
    "gram_schmidt",
    "unimodular_completion",
]

log = logging.getLogger(__name__)

TIE_RTOL = 1e-10
RIDGE = 1e-12


class LatticeError(ValueError):
    """Ill-conditioned or singular lattice basis."""


class EnumerationOverflowError(RuntimeError):
    """Shortest-vector enumeration exceeded its node budget."""


def averaged_metric(spectrum: FrequencySpectrum, labeling: WavenumberLabeling, p: int = 1) -> np.ndarray:
    """``G = sum_j mag_j^2 k_j k_j^T`` over the labeled spectrum entries.

    Island labels ``(n, k)`` sharing ``k`` simply add their magnitudes in.
    """
    k = np.asarray(labeling.k, dtype=float)
    mags = spectrum.mag[: k.shape[0]]
    G = (k * mags[:, None] ** 2).T @ k
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G) if G.size else np.zeros(0)
    if G.size and ev.min() <= 1e-12 * max(ev.max(), np.finfo(float).tiny):
        warnings.warn("averaged metric is rank deficient: no measured motion along some homology direction",
                      RuntimeWarning, stacklevel=2)
    return G


def gram_factor(G) -> np.ndarray:
    """Upper-triangular ``B`` with ``B^T B = G`` (symmetric square root fallback)."""
    G = np.asarray(G, dtype=float)
    G = 0.5 * (G + G.T)
    try:
        return sla.cholesky(G, lower=False)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(G)
        if w.min() < -1e-10 * max(abs(w).max(), 1e-300):
            raise LatticeError("metric is indefinite")
        return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def gram_schmidt(B):
    """Return ``(Bstar, mu)`` for the columns of ``B``; ``b_n = b*_n + sum_m mu[m, n] b*_m``."""
    B = np.asarray(B, dtype=float)
    Q, R = np.linalg.qr(B)
    diag = np.diag(R)
    Bstar = Q * diag
    mu = R / diag[:, None]
    return Bstar, np.triu(mu, 1)


def _check_conditioning(B):
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > 1e12:
        raise LatticeError(f"basis is near singular (condition {s[0] / max(s[-1], 1e-300):.3e})")


def lll_reduce(B, delta: float = 0.99):
    """LLL-reduce the columns of ``B``; returns ``(B @ U, U)`` with ``U`` unimodular."""
    B = np.array(B, dtype=float)
    d = B.shape[1]
    U = np.eye(d, dtype=np.int64)
    k = 1
    while k < d:
        for j in range(k - 1, -1, -1):
            _, mu = gram_schmidt(B)
            q = int(round(mu[j, k]))
            if q:
                B[:, k] -= q * B[:, j]
                U[:, k] -= q * U[:, j]
        Bs, mu = gram_schmidt(B)
        nk, nk1 = Bs[:, k] @ Bs[:, k], Bs[:, k - 1] @ Bs[:, k - 1]
        if nk >= (delta - mu[k - 1, k] ** 2) * nk1:
            k += 1
        else:
            B[:, [k - 1, k]] = B[:, [k, k - 1]]
            U[:, [k - 1, k]] = U[:, [k, k - 1]]
            k = max(k - 1, 1)
    return B, U


def _normalise_sign(k):
    nz = np.flatnonzero(k)
    return -k if nz.size and k[nz[0]] < 0 else k


def _enumerate(R: np.ndarray, radius2: float, budget: int):
    """All nonzero integer ``x`` with ``|R x|^2 <= radius2`` (``R`` upper triangular)."""
    d = R.shape[0]
    found = []
    x = np.zeros(d, dtype=np.int64)
    nodes = 0

    def recurse(i, partial):
        nonlocal nodes
        # centre of coordinate i given x[i+1:]
        c = -(R[i, i + 1 :] @ x[i + 1 :]) / R[i, i]
        rem = radius2 - partial
        if rem < 0:
            return
        half = math.sqrt(rem) / abs(R[i, i])
        lo, hi = math.ceil(c - half - 1e-12), math.floor(c + half + 1e-12)
        for v in range(lo, hi + 1):
            nodes += 1
            if nodes > budget:
                raise EnumerationOverflowError(f"enumeration exceeded {budget} nodes")
            x[i] = v
            val = partial + (R[i, i] * (v - c)) ** 2
            if val > radius2 * (1 + 1e-12):
                continue
            if i == 0:
                if np.any(x):
                    found.append((val, x.copy()))
            else:
                recurse(i - 1, val)
        x[i] = 0

    recurse(d - 1, 0.0)
    return found


def _svp(B: np.ndarray, budget: int):
    """Shortest nonzero ``k`` for basis ``B`` (columns); returns ``(k, |Bk|^2)``."""
    d = B.shape[1]
    if d == 1:
        return np.array([1], dtype=np.int64), float(B[:, 0] @ B[:, 0])
    Bl, U = lll_reduce(B)
    radius2 = float(np.min(np.einsum("ij,ij->j", Bl, Bl)))
    R = np.linalg.qr(Bl, mode="r")
    cands = _enumerate(R, radius2, budget)
    best = min(v for v, _ in cands)
    ties = [_normalise_sign(U @ y) for v, y in cands if v <= best * (1 + TIE_RTOL)]
    # lexicographically largest after sign normalisation, so e_1 beats e_2
    k = max(ties, key=lambda v: tuple(v))
    return k.astype(np.int64), float(np.sum((B @ k) ** 2))


def shortest_lattice_vector(B, budget: int = 10**7) -> np.ndarray:
    """Nonzero integer ``k`` minimising ``|B k|`` by exhaustive enumeration.

    Ties are broken toward the lexicographically largest ``k`` whose first
    nonzero entry is positive, so ``B = I`` gives ``e_1``.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    _check_conditioning(B)
    return _svp(B, budget)[0]


def unimodular_completion(x) -> np.ndarray:
    """Unimodular integer matrix whose first column is the primitive vector ``x``."""
    v = np.array(x, dtype=np.int64)
    m = v.size
    V = np.eye(m, dtype=np.int64)  # invariant: V @ v_current == x
    while np.count_nonzero(v) > 1:
        nz = np.flatnonzero(v)
        piv = nz[np.argmin(np.abs(v[nz]))]
        for i in nz:
            if i != piv:
                q = v[i] // v[piv]
                v[i] -= q * v[piv]
                V[:, piv] += q * V[:, i]
    piv = int(np.flatnonzero(v)[0])
    if abs(v[piv]) != 1:
        raise ValueError(f"vector {x} is not primitive")
    if piv != 0:
        v[[0, piv]] = v[[piv, 0]]
        V[:, [0, piv]] = V[:, [piv, 0]]
    if v[0] < 0:
        V[:, 0] = -V[:, 0]
    return V


def _kz_certificate(BU: np.ndarray, budget: int):
    Bs, mu = gram_schmidt(BU)
    if np.max(np.abs(mu), initial=0.0) > 0.5 + 1e-10:
        raise AssertionError("KZ basis violates the size condition |mu| <= 1/2")
    d = BU.shape[1]
    R = np.linalg.qr(BU, mode="r")
    for i in range(d):
        _, n2 = _svp(R[i:, i:], budget)
        if Bs[:, i] @ Bs[:, i] > n2 * (1 + 1e-8) + 1e-300:
            raise AssertionError(f"Gram-Schmidt vector {i} is not a shortest projected vector")


def kz_reduce(G, budget: int = 10**7) -> np.ndarray:
    """Unimodular ``A`` such that the columns of ``B A^{-1}`` are KZ-reduced, ``B^T B = G``."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    d = G.shape[0]
    if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(np.abs(G).max(), 1e-300)):
        raise LatticeError("metric is not symmetric")
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    if ev.min() <= 0:
        G = G + RIDGE * np.trace(G) / d * np.eye(d)
    B = gram_factor(G)
    _check_conditioning(B)

    U = np.eye(d, dtype=np.int64)
    for i in range(d):
        R = np.linalg.qr(B @ U, mode="r")
        x, _ = _svp(R[i:, i:], budget)
        V = unimodular_completion(x)
        U[:, i:] = U[:, i:] @ V
    # size reduction keeps the Gram-Schmidt vectors and enforces |mu| <= 1/2
    for n in range(1, d):
        for m in range(n - 1, -1, -1):
            R = np.linalg.qr(B @ U, mode="r")
            q = int(round(R[m, n] / R[m, m]))
            if q:
                U[:, n] -= q * U[:, m]
    # generators with first nonzero entry positive
    for n in range(d):
        U[:, n] = _normalise_sign(U[:, n])
    _kz_certificate(B @ U, budget)
    det = int_det(U)
    A = np.rint(np.linalg.inv(U)).astype(np.int64)
    if abs(det) != 1 or not np.array_equal(A @ U, np.eye(d, dtype=np.int64)):
        raise AssertionError("KZ transform is not unimodular")
    return A


def canonicalize_rotation(A, omega):
    """``omega' = A omega mod 1`` with rows of ``A`` negated so every entry is in [0, 1/2]."""
    A = np.atleast_2d(np.asarray(A, dtype=np.int64))
    if abs(int_det(A)) != 1:
        raise ValueError("A is not unimodular")
    w = np.mod(A @ np.asarray(omega, dtype=float), 1.0)
    s = np.where(w <= 0.5, 1, -1)
    A2 = s[:, None] * A
    w2 = np.mod(A2 @ np.asarray(omega, dtype=float), 1.0)
    return A2, w2
