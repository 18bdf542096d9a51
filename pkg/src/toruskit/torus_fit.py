"""Fourier parameterisation of an invariant torus (or island chain).

The trajectory is modelled as ``h_t = sum_m h_m exp(2 pi i nu_m t)`` over an
anisotropic box of modes with ``nu_m = omega . k`` (torus) or
``nu_m = (n + omega . k) / p`` (period-``p`` island chain, ``n in [p]``).
Fitting is done in the real cos/sin basis with one column pair per
conjugate mode class, so the recovered coefficients satisfy
``h_{-m} = conj(h_m)`` exactly.

The adaptive fit grows the box one direction at a time, updating a QR
factorisation of the design matrix by block Gram-Schmidt (two passes)
instead of refactoring.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .dynamics import ObservableSeries
from .spectral import _series_data, birkhoff_weights

__all__ = [
    "ResonanceError",
    "SymmetryError",
    "LossOfOrthogonalityError",
    "ResolutionBox",
    "FourierTorus",
    "QRState",
    "box_modes",
    "fourier_least_squares",
    "projection_coefficients",
    "init_qr_state",
    "extend_box_qr",
    "validation_error",
    "adaptive_parameterize",
    "evaluate_torus",
]

log = logging.getLogger(__name__)

RESONANCE_TOL = 1e-13
ORTHO_TOL = 1e-8
ILL_CONDITIONED = 1e12


class ResonanceError(ValueError):
    """Two modes of the box share a frequency mod 1."""


class SymmetryError(ValueError):
    """Coefficients violate h_{-m} = conj(h_m), so the torus would not be real."""


class LossOfOrthogonalityError(RuntimeError):
    """Updated orthogonal factor drifted from orthonormality."""


@dataclass(frozen=True)
class ResolutionBox:
    """Mode box ``-K <= k <= K``; island chains add a fixed discrete axis of extent ``p``."""

    K: tuple
    p: int = 1

    def __post_init__(self):
        K = tuple(int(v) for v in np.atleast_1d(self.K))
        if any(v < 0 for v in K):
            raise ValueError("box extents must be >= 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        object.__setattr__(self, "K", K)

    @property
    def d(self) -> int:
        return len(self.K)

    @property
    def n_modes(self) -> int:
        return self.p * int(np.prod([2 * k + 1 for k in self.K]))

    @property
    def shape(self) -> tuple:
        return (self.p,) + tuple(2 * k + 1 for k in self.K)

    def extended(self, j: int) -> "ResolutionBox":
        K = list(self.K)
        K[j] += 1
        return ResolutionBox(tuple(K), self.p)


def _conj(modes: np.ndarray, p: int) -> np.ndarray:
    c = -modes
    c[:, 0] = np.mod(c[:, 0], p)
    return c


def _is_rep(modes: np.ndarray, p: int) -> np.ndarray:
    """True for the representative of each conjugate class (``m >= conj(m)`` in k-then-n order)."""
    conj = _conj(modes, p)
    a = np.concatenate([modes[:, 1:], modes[:, :1]], axis=1)
    b = np.concatenate([conj[:, 1:], conj[:, :1]], axis=1)
    diff = a - b
    out = np.ones(len(modes), dtype=bool)
    decided = np.zeros(len(modes), dtype=bool)
    for col in range(diff.shape[1]):
        pos, neg = diff[:, col] > 0, diff[:, col] < 0
        out[~decided & neg] = False
        decided |= pos | neg
    return out


def box_modes(box: ResolutionBox, only_new_along: Optional[int] = None) -> np.ndarray:
    """Representative modes ``(n, k_1..k_d)`` of ``box``.

    With ``only_new_along=j`` returns the modes with ``|k_j| == K_j`` only,
    i.e. those that enter when the box grows along ``j`` to ``box``.
    """
    axes = [np.arange(box.p)] + [np.arange(-k, k + 1) for k in box.K]
    if only_new_along is not None:
        kj = box.K[only_new_along]
        axes[1 + only_new_along] = np.array([-kj, kj]) if kj > 0 else np.array([0])
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 1 + box.d)
    return grid[_is_rep(grid, box.p)]


def _self_conj(modes: np.ndarray, p: int) -> np.ndarray:
    return np.all(modes == _conj(modes, p), axis=1)


def _frequencies(modes: np.ndarray, omega: np.ndarray, p: int) -> np.ndarray:
    return np.mod((modes[:, 0] + modes[:, 1:] @ omega) / p, 1.0)


def _fold(nu):
    nu = np.mod(nu, 1.0)
    return np.minimum(nu, 1.0 - nu)


def _check_resonance(new_nu: np.ndarray, old_sorted: np.ndarray) -> np.ndarray:
    """Raise if folded frequencies collide; returns the merged sorted array."""
    f = np.sort(_fold(new_nu))
    if f.size > 1 and np.min(np.diff(f)) < RESONANCE_TOL:
        raise ResonanceError("two box modes share a frequency mod 1 (resonant rotation vector)")
    if old_sorted.size and f.size:
        pos = np.searchsorted(old_sorted, f)
        lo = np.abs(f - old_sorted[np.clip(pos - 1, 0, old_sorted.size - 1)])
        hi = np.abs(f - old_sorted[np.clip(pos, 0, old_sorted.size - 1)])
        if min(lo.min(), hi.min()) < RESONANCE_TOL:
            raise ResonanceError("two box modes share a frequency mod 1 (resonant rotation vector)")
    return np.sort(np.concatenate([old_sorted, f]))


def _columns(modes: np.ndarray, omega: np.ndarray, p: int, t: np.ndarray):
    """Real design columns for ``modes`` at times ``t``; returns ``(A, col_mode, col_sin)``."""
    nu = _frequencies(modes, omega, p)
    sc = _self_conj(modes, p)
    phase = 2 * np.pi * np.mod(np.outer(t, nu), 1.0)
    A = np.hstack([np.cos(phase), np.sin(phase[:, ~sc])])
    col_mode = np.concatenate([np.arange(len(modes)), np.flatnonzero(~sc)])
    col_sin = np.concatenate([np.zeros(len(modes), bool), np.ones(int((~sc).sum()), bool)])
    return A, col_mode, col_sin


@dataclass
class FourierTorus:
    """Fourier coefficients on a mode box.

    ``coeffs`` has shape ``(p, 2K_1+1, ..., 2K_d+1, D)``; entry
    ``[n, k_1+K_1, ...]`` is ``h_{n,k}``.  Tori have ``p = 1``.
    """

    omega: np.ndarray
    box: ResolutionBox
    coeffs: np.ndarray
    R_h: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.box.p

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def D(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def K(self) -> tuple:
        return self.box.K

    @property
    def omega_ext(self) -> np.ndarray:
        """Per-iterate phase advance on the extended torus ``(theta_0, theta)``."""
        return np.concatenate([[1.0 / self.p], np.asarray(self.omega) / self.p])

    def modes(self) -> np.ndarray:
        axes = [np.arange(self.p)] + [np.arange(-k, k + 1) for k in self.K]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 1 + self.d)

    def flat_coeffs(self) -> np.ndarray:
        return self.coeffs.reshape(-1, self.D)

    def coefficient(self, k, n: int = 0) -> np.ndarray:
        idx = (n,) + tuple(int(ki) + Ki for ki, Ki in zip(k, self.K))
        return self.coeffs[idx]

    def to_dict(self) -> dict:
        c = self.coeffs.reshape(-1)
        inter = np.empty(2 * c.size)
        inter[0::2], inter[1::2] = c.real, c.imag
        return {
            "d": self.d, "D": self.D, "p": self.p,
            "omega": [float(v) for v in self.omega],
            "K": list(self.K),
            "coeffs": [float(v) for v in inter],
            "R_h": float(self.R_h),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FourierTorus":
        box = ResolutionBox(tuple(doc["K"]), int(doc["p"]))
        inter = np.asarray(doc["coeffs"], dtype=float)
        c = (inter[0::2] + 1j * inter[1::2]).reshape(box.shape + (int(doc["D"]),))
        if len(doc["omega"]) != int(doc["d"]):
            raise ValueError("omega length does not match d")
        return cls(np.asarray(doc["omega"], dtype=float), box, c, float(doc.get("R_h", "nan")), dict(doc.get("meta", {})))


def _coeffs_from_real(modes, col_mode, col_sin, X, box: ResolutionBox) -> np.ndarray:
    D = X.shape[1]
    a = np.zeros((len(modes), D))
    b = np.zeros((len(modes), D))
    a[col_mode[~col_sin]] = X[~col_sin]
    b[col_mode[col_sin]] = X[col_sin]
    sc = _self_conj(modes, box.p)
    h = (a - 1j * b) / 2
    h[sc] = a[sc]
    coeffs = np.zeros(box.shape + (D,), dtype=complex)
    offs = np.array([0] + list(box.K))
    idx = modes + offs
    coeffs[tuple(idx.T)] = h
    conj = _conj(modes[~sc], box.p) + offs
    coeffs[tuple(conj.T)] = np.conj(h[~sc])
    return coeffs


def _condition_estimate(R: np.ndarray) -> float:
    """1-norm condition number estimate of an upper-triangular ``R`` (LAPACK trcon, O(n^2)).

    The diagonal ratio of an unpivoted QR can understate the condition
    number by many orders of magnitude, so it is not used.
    """
    R = np.asfortranarray(R, dtype=float)
    if R.size == 0:
        return 1.0
    rcond, info = sla.lapack.dtrcon(R, norm="1", uplo="U", diag="N")
    if info != 0 or rcond <= 0:
        return math.inf
    return float(1.0 / rcond)


def evaluate_torus(torus: FourierTorus, theta) -> np.ndarray:
    """``sum h_m exp(2 pi i m . theta)`` at angles ``theta`` (``(..., d)``, islands ``(..., d+1)``).

    For islands the first angle is the discrete-chain phase ``theta_0``.
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    th = np.atleast_2d(theta)
    if th.shape[-1] == torus.d:
        th = np.concatenate([np.zeros(th.shape[:-1] + (1,)), th], axis=-1)
    elif th.shape[-1] != torus.d + 1:
        raise ValueError(f"theta must have {torus.d} (or {torus.d + 1}) components")
    lead = th.shape[:-1]
    th = th.reshape(-1, torus.d + 1)
    # partner of (n, k) is (-n mod p, -k)
    partner = np.conj(np.flip(torus.coeffs[(-np.arange(torus.p)) % torus.p], axis=tuple(range(1, torus.d + 1))))
    if np.max(np.abs(torus.coeffs - partner), initial=0) > 1e-10 * max(np.abs(torus.coeffs).max(initial=0), 1e-300):
        raise SymmetryError("coefficients are not conjugate symmetric")
    modes = torus.modes()
    c = torus.flat_coeffs()
    keep = np.any(c != 0, axis=1)
    modes, c = modes[keep], c[keep]
    ph = 2 * np.pi * np.mod(th @ modes.T, 1.0)
    val = np.exp(1j * ph) @ c
    out = val.real.reshape(lead + (torus.D,))
    return out[0] if single else out


def trajectory_phases(torus: FourierTorus, t) -> np.ndarray:
    """Extended-torus angles ``t * omega_ext`` of trajectory index ``t`` (phase anchored at t = 0)."""
    t = np.asarray(t, dtype=float)
    return np.mod(np.outer(t, torus.omega_ext), 1.0)


def _predict(torus: FourierTorus, t) -> np.ndarray:
    modes = torus.modes()
    c = torus.flat_coeffs()
    keep = np.any(c != 0, axis=1)
    nu = np.mod((modes[keep, 0] + modes[keep, 1:] @ np.asarray(torus.omega)) / torus.p, 1.0)
    ph = 2 * np.pi * np.mod(np.outer(np.asarray(t, dtype=float), nu), 1.0)
    return (np.exp(1j * ph) @ c[keep]).real


def validation_error(torus: FourierTorus, series, t_start: int, M: int) -> float:
    """Relative l2 mismatch between the torus prediction and rows ``t_start .. t_start+M-1``."""
    h = _series_data(series)
    if t_start + M > h.shape[0]:
        raise ValueError("series too short for the requested validation window")
    B = h[t_start : t_start + M]
    nrm = np.linalg.norm(B)
    if nrm == 0.0:
        raise ZeroDivisionError("held-out rows are identically zero")
    pred = _predict(torus, np.arange(t_start, t_start + M))
    return float(np.linalg.norm(pred - B) / nrm)


def _row_weights(T: int, weighted: bool) -> np.ndarray:
    return birkhoff_weights(T) if weighted else np.full(T, 1.0 / T)


def _prepare(series, omega, box: ResolutionBox, T: Optional[int]):
    h = _series_data(series)
    T = h.shape[0] if T is None else T
    if T > h.shape[0]:
        raise ValueError("T exceeds the series length")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.size != box.d:
        raise ValueError("omega and box dimensions differ")
    if box.n_modes > T:
        raise ValueError(f"{box.n_modes} modes exceed the {T} training rows")
    return h[:T], omega, T


def fourier_least_squares(series, omega, K, weighted: bool = False, T: Optional[int] = None, p: int = 1) -> FourierTorus:
    """Weighted or unweighted least-squares coefficients on the first ``T`` rows."""
    box = K if isinstance(K, ResolutionBox) else ResolutionBox(tuple(np.atleast_1d(K)), p)
    h, omega, T = _prepare(series, omega, box, T)
    modes = box_modes(box)
    _check_resonance(_frequencies(modes, omega, box.p), np.zeros(0))
    A, col_mode, col_sin = _columns(modes, omega, box.p, np.arange(T))
    sw = np.sqrt(_row_weights(T, weighted))
    Q, R = sla.qr(A * sw[:, None], mode="economic", check_finite=False)
    X = sla.solve_triangular(R, Q.T @ (h * sw[:, None]), check_finite=False)
    meta = {"weighted": weighted, "T_train": T, "method": "least_squares",
            "ill_conditioned": bool(_condition_estimate(R) > ILL_CONDITIONED)}
    return FourierTorus(omega, box, _coeffs_from_real(modes, col_mode, col_sin, X, box), meta=meta)


def projection_coefficients(series, omega, K, weighted: bool = True, T: Optional[int] = None, p: int = 1) -> FourierTorus:
    """Birkhoff projection ``h_m = sum_t c_t exp(-2 pi i nu_m t) h_t`` (no normal-matrix correction)."""
    box = K if isinstance(K, ResolutionBox) else ResolutionBox(tuple(np.atleast_1d(K)), p)
    h, omega, T = _prepare(series, omega, box, T)
    modes = box_modes(box)
    nu = _frequencies(modes, omega, box.p)
    c = _row_weights(T, weighted)
    ph = 2 * np.pi * np.mod(np.outer(np.arange(T), nu), 1.0)
    hm = np.exp(-1j * ph).T @ (c[:, None] * h)
    sc = _self_conj(modes, box.p)
    hm[sc] = hm[sc].real
    coeffs = np.zeros(box.shape + (h.shape[1],), dtype=complex)
    offs = np.array([0] + list(box.K))
    coeffs[tuple((modes + offs).T)] = hm
    coeffs[tuple((_conj(modes[~sc], box.p) + offs).T)] = np.conj(hm[~sc])
    return FourierTorus(omega, box, coeffs, meta={"weighted": weighted, "T_train": T, "method": "projection"})


@dataclass
class QRState:
    """QR factors of the (weighted) design matrix for a growing mode box.

    ``Q[:, :n]`` and ``R[:n, :n]`` are live; the arrays may carry spare
    capacity.  ``QtB`` caches ``Q^T B`` and ``A_val`` the design rows of the
    held-out window.
    """

    omega: np.ndarray
    box: ResolutionBox
    modes: np.ndarray
    col_mode: np.ndarray
    col_sin: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QtB: np.ndarray
    B: np.ndarray
    sw: np.ndarray
    A_val: np.ndarray
    B_val: np.ndarray
    folded: np.ndarray
    n: int
    refactorizations: int = 0

    @property
    def T(self) -> int:
        return self.B.shape[0]

    def design(self) -> np.ndarray:
        """Weighted design matrix rebuilt from scratch in the stored column order."""
        nu = _frequencies(self.modes, self.omega, self.box.p)[self.col_mode]
        ph = 2 * np.pi * np.mod(np.outer(np.arange(self.T), nu), 1.0)
        return np.where(self.col_sin, np.sin(ph), np.cos(ph)) * self.sw[:, None]

    def solve(self) -> np.ndarray:
        return sla.solve_triangular(self.R[: self.n, : self.n], self.QtB[: self.n], check_finite=False)

    def torus(self, X=None) -> FourierTorus:
        X = self.solve() if X is None else X
        return FourierTorus(self.omega, self.box, _coeffs_from_real(self.modes, self.col_mode, self.col_sin, X, self.box))

    def validation_residual(self, X=None) -> float:
        if self.B_val.shape[0] == 0:
            return float("nan")
        X = self.solve() if X is None else X
        return float(np.linalg.norm(self.A_val[:, : self.n] @ X - self.B_val) / np.linalg.norm(self.B_val))

    def condition_estimate(self) -> float:
        return _condition_estimate(self.R[: self.n, : self.n])


def init_qr_state(series, omega, box: Optional[ResolutionBox] = None, T: Optional[int] = None,
                  weighted: bool = False, M_val: int = 0, capacity: Optional[int] = None) -> QRState:
    """Fresh factorisation for ``box`` (default ``K = 0``) on the first ``T`` rows.

    The next ``M_val`` rows after the training window are held out.
    """
    h = _series_data(series)
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    box = ResolutionBox((0,) * omega.size) if box is None else box
    T = h.shape[0] - M_val if T is None else T
    if T + M_val > h.shape[0]:
        raise ValueError("series too short for the training and validation windows")
    cap = max(capacity or 0, box.n_modes)
    B = h[:T]
    sw = np.sqrt(_row_weights(T, weighted))
    modes = box_modes(box)
    folded = _check_resonance(_frequencies(modes, omega, box.p), np.zeros(0))
    A, col_mode, col_sin = _columns(modes, omega, box.p, np.arange(T))
    Aval, _, _ = _columns(modes, omega, box.p, np.arange(T, T + M_val))
    Qf, Rf = sla.qr(A * sw[:, None], mode="economic", check_finite=False)
    n = Rf.shape[0]
    Q = np.zeros((T, cap))
    R = np.zeros((cap, cap))
    Av = np.zeros((M_val, cap))
    QtB = np.zeros((cap, h.shape[1]))
    Q[:, :n], R[:n, :n], Av[:, :n] = Qf, Rf, Aval
    Bw = B * sw[:, None]
    QtB[:n] = Qf.T @ Bw
    return QRState(omega, box, modes, col_mode, col_sin, Q, R, QtB, Bw, sw, Av, h[T : T + M_val], folded, n)


@dataclass
class _Extension:
    j: int
    box: ResolutionBox
    modes: np.ndarray
    col_mode: np.ndarray
    col_sin: np.ndarray
    Q2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    A_val: np.ndarray
    folded: np.ndarray


def _propose(state: QRState, j: int) -> _Extension:
    box = state.box.extended(j)
    new = box_modes(box, only_new_along=j)
    folded = _check_resonance(_frequencies(new, state.omega, box.p), state.folded)
    A, cm, cs = _columns(new, state.omega, box.p, np.arange(state.T))
    A *= state.sw[:, None]
    Aval, _, _ = _columns(new, state.omega, box.p, np.arange(state.T, state.T + state.B_val.shape[0]))
    Q = state.Q[:, : state.n]
    # classical Gram-Schmidt with one reorthogonalisation pass
    R1 = Q.T @ A
    A -= Q @ R1
    R1b = Q.T @ A
    A -= Q @ R1b
    R1 += R1b
    Q2, R2 = sla.qr(A, mode="economic", overwrite_a=True, check_finite=False)
    for _ in range(3):
        C = Q.T @ Q2
        cross = np.abs(C).max(initial=0.0)
        self_ = np.abs(Q2.T @ Q2 - np.eye(Q2.shape[1])).max(initial=0.0)
        if max(cross, self_) <= ORTHO_TOL:
            break
        # nearly dependent new columns: project once more and fold into R
        Q2 -= Q @ C
        Q2, S = sla.qr(Q2, mode="economic", check_finite=False)
        R1 += C @ R2
        R2 = S @ R2
    else:
        raise LossOfOrthogonalityError(f"|Q^T Q - I|_max = {max(cross, self_):.2e}")
    offset = len(state.modes)
    return _Extension(j, box, new, cm + offset, cs, Q2, R1, R2, Aval, folded)


def _extension_residual(state: QRState, ext: _Extension):
    n, m = state.n, ext.Q2.shape[1]
    R = np.zeros((n + m, n + m))
    R[:n, :n] = state.R[:n, :n]
    R[:n, n:] = ext.R1
    R[n:, n:] = ext.R2
    QtB = np.vstack([state.QtB[:n], ext.Q2.T @ state.B])
    X = sla.solve_triangular(R, QtB, check_finite=False)
    if state.B_val.shape[0] == 0:
        return X, float("nan")
    Av = np.hstack([state.A_val[:, :n], ext.A_val])
    return X, float(np.linalg.norm(Av @ X - state.B_val) / np.linalg.norm(state.B_val))


def _commit(state: QRState, ext: _Extension) -> QRState:
    n, m = state.n, ext.Q2.shape[1]
    if n + m > state.Q.shape[1]:
        cap = max(2 * state.Q.shape[1], n + m)
        grow = lambda a, shape: np.pad(a, [(0, s - o) for s, o in zip(shape, a.shape)])
        state.Q = grow(state.Q, (state.T, cap))
        state.R = grow(state.R, (cap, cap))
        state.A_val = grow(state.A_val, (state.A_val.shape[0], cap))
        state.QtB = grow(state.QtB, (cap, state.QtB.shape[1]))
    state.Q[:, n : n + m] = ext.Q2
    state.R[:n, n : n + m] = ext.R1
    state.R[n : n + m, n : n + m] = ext.R2
    state.A_val[:, n : n + m] = ext.A_val
    state.QtB[n : n + m] = ext.Q2.T @ state.B
    state.modes = np.vstack([state.modes, ext.modes])
    state.col_mode = np.concatenate([state.col_mode, ext.col_mode])
    state.col_sin = np.concatenate([state.col_sin, ext.col_sin])
    state.folded = ext.folded
    state.box = ext.box
    state.n = n + m
    return state


def _refactor(state: QRState, box: ResolutionBox) -> QRState:
    """Fresh factorisation in the same column order as ``state`` extended to ``box``."""
    modes = box_modes(box)
    A, cm, cs = _columns(modes, state.omega, box.p, np.arange(state.T))
    Aval, _, _ = _columns(modes, state.omega, box.p, np.arange(state.T, state.T + state.B_val.shape[0]))
    folded = _check_resonance(_frequencies(modes, state.omega, box.p), np.zeros(0))
    Qf, Rf = sla.qr(A * state.sw[:, None], mode="economic", check_finite=False)
    n = Rf.shape[0]
    cap = max(state.Q.shape[1], n)
    Q = np.zeros((state.T, cap)); R = np.zeros((cap, cap))
    Av = np.zeros((Aval.shape[0], cap)); QtB = np.zeros((cap, state.B.shape[1]))
    Q[:, :n], R[:n, :n], Av[:, :n], QtB[:n] = Qf, Rf, Aval, Qf.T @ state.B
    return QRState(state.omega, box, modes, cm, cs, Q, R, QtB, state.B, state.sw, Av, state.B_val,
                   folded, n, state.refactorizations + 1)


def extend_box_qr(state: QRState, j: int) -> QRState:
    """Grow the box along direction ``j`` (island axis excluded) by block QR update.

    Returns a new state; the input is left untouched.  Falls back to a fresh
    factorisation if the update loses orthogonality.
    """
    if not 0 <= j < state.box.d:
        raise ValueError(f"direction {j} out of range")
    new = QRState(**{f: getattr(state, f) for f in state.__dataclass_fields__})
    for name in ("Q", "R", "QtB", "A_val"):
        setattr(new, name, getattr(state, name).copy())
    try:
        ext = _propose(state, j)
    except LossOfOrthogonalityError:
        log.info("QR update lost orthogonality; refactoring")
        return _refactor(state, state.box.extended(j))
    return _commit(new, ext)


def adaptive_parameterize(series, omega, gamma: float = 0.05, eta: float = 10.0, K_max: int = 2000,
                          p: int = 1, weighted: bool = False, T: Optional[int] = None) -> FourierTorus:
    """Greedy descent over anisotropic boxes on the validation error.

    The first ``floor((1-gamma) T)`` rows train and the rest validate.  From
    ``K = 0`` each step evaluates every single-direction extension and moves
    to the best one; the search stops once no extension beats ``eta`` times
    the best error seen, or once every extension would exceed ``K_max``
    modes (or the training length).  The returned torus is the fit at the
    best box.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if eta < 1:
        raise ValueError("eta must be >= 1")
    h = _series_data(series)
    T = h.shape[0] if T is None else T
    T_train = int(math.floor((1 - gamma) * T))
    M = T - T_train
    if T_train < p or M < 1:
        raise ValueError("series too short for a train/validation split")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    d = omega.size
    state = init_qr_state(h[:T], omega, ResolutionBox((0,) * d, p), T_train, weighted, M,
                          capacity=min(K_max, T_train) + 1)
    X = state.solve()
    R_cur = state.validation_residual(X)
    best = (R_cur, state.box, state.torus(X))
    cond = state.condition_estimate()
    path = [(state.box.K, R_cur)]
    notes = []
    limit = min(K_max, T_train)
    while True:
        cands = []
        blocked = False
        for j in range(d):
            if state.box.extended(j).n_modes > limit:
                blocked = True
                continue
            try:
                ext = _propose(state, j)
                Xj, Rj = _extension_residual(state, ext)
            except LossOfOrthogonalityError:
                log.info("QR update lost orthogonality along %d; using a fresh factorisation", j)
                ext = _refactor(state, state.box.extended(j))
                Xj = ext.solve()
                Rj = ext.validation_residual(Xj)
            cands.append((Rj, j, ext, Xj))
        if not cands:
            if blocked:
                msg = f"descent halted by the mode budget K_max={K_max} at K={state.box.K}"
                notes.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
            break
        Rmin = min(c[0] for c in cands)
        # ties within 1e-14 relative go to the lowest direction index
        Rj, j, ext, Xj = next(c for c in cands if c[0] <= Rmin * (1 + 1e-14))
        if not Rj < eta * best[0]:
            break
        state = ext if isinstance(ext, QRState) else _commit(state, ext)
        path.append((state.box.K, Rj))
        if Rj < best[0]:
            best = (Rj, state.box, state.torus(Xj))
            cond = state.condition_estimate()
    R_h, box, torus = best
    torus.R_h = R_h
    torus.meta.update({
        "method": "adaptive_least_squares", "weighted": weighted, "T_train": T_train, "M_val": M,
        "path": [[list(K), float(r)] for K, r in path], "warnings": notes,
        "ill_conditioned": bool(cond > ILL_CONDITIONED),
        "refactorizations": state.refactorizations,
    })
    return torus
