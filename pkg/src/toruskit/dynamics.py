"""Benchmark symplectic maps, observables and trajectory generation.

Two families are provided:

* the coupled standard map on T^2 x R^2 with the polar-type observable
  ``((y_i + R) cos 2 pi x_i, (y_i + R) sin 2 pi x_i)``;
* the elliptic restricted three-body problem (planar or spatial) in
  pulsating synodic coordinates, turned into a map by integrating over one
  revolution of the primaries with a Gauss-Legendre implicit Runge-Kutta
  scheme.  The observable is the identity.

Primary placement follows the usual synodic convention: the mass ``1 - mu``
sits at ``(-mu, 0, 0)`` and the mass ``mu`` at ``(1 - mu, 0, 0)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from numba import njit

__all__ = [
    "MapKind",
    "PhaseState",
    "MapConfig",
    "ObservableSeries",
    "IntegrationError",
    "SingularityError",
    "NonConvergenceError",
    "step_coupled_standard_map",
    "embed_standard_map",
    "unembed_standard_map",
    "er3bp_hamiltonian",
    "er3bp_period_map",
    "er3bp_period_map_many",
    "velocities_to_momenta",
    "momenta_to_velocities",
    "apply_map",
    "observe",
    "generate_series",
    "read_series_csv",
    "write_series_csv",
    "TROJAN_CONFIG",
    "trojan_state",
    "western_low_prograde_state",
    "distant_retrograde_state",
    "l4_librational_state",
    "EARTH_MOON_SPATIAL",
    "SM_EXAMPLE_K",
    "SM_WEAK_K",
]


class MapKind(str, Enum):
    COUPLED_STANDARD_MAP = "coupled_standard_map"
    ER3BP_PLANAR = "er3bp_planar"
    ER3BP_SPATIAL = "er3bp_spatial"


class IntegrationError(RuntimeError):
    """Base class for failures of the one-period ER3BP map."""


class SingularityError(IntegrationError):
    pass


class NonConvergenceError(IntegrationError):
    pass


@dataclass(frozen=True)
class PhaseState:
    """A point ``(q, p)`` of phase space with ``n`` degrees of freedom."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        p = np.atleast_1d(np.asarray(self.p, dtype=float)).copy()
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError(f"q and p must be 1-D of equal length, got {q.shape} and {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n], z[n:])


# Forcing matrices of the reference coupled standard map runs.  The sign is
# negative so that the literal step below reproduces the published orbits.
SM_EXAMPLE_K = -np.array([[0.4, 0.2], [0.2, 0.5]])
SM_WEAK_K = -np.array([[0.1, 0.05], [0.05, 0.05]])


@dataclass(frozen=True)
class MapConfig:
    """Which map to iterate, and its parameters.

    Only the fields relevant to ``kind`` are read.
    """

    kind: MapKind = MapKind.COUPLED_STANDARD_MAP
    K_sm: np.ndarray = field(default_factory=lambda: SM_EXAMPLE_K.copy())
    mu: float = 9.54e-4
    eps: float = 0.0489
    substeps: int = 1000
    R: float = 0.5
    singularity_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "kind", MapKind(self.kind))
        K = np.asarray(self.K_sm, dtype=float).reshape(2, 2)
        object.__setattr__(self, "K_sm", K)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("mass ratio must lie in [0, 1)")
        if not 0.0 <= self.eps < 1.0:
            raise ValueError("eccentricity must lie in [0, 1)")

    @property
    def n(self) -> int:
        return 3 if self.kind is MapKind.ER3BP_SPATIAL else 2

    @property
    def observable_dim(self) -> int:
        return 4 if self.kind is MapKind.COUPLED_STANDARD_MAP else 2 * self.n

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "K_sm": self.K_sm.tolist(),
            "mu": self.mu,
            "eps": self.eps,
            "substeps": self.substeps,
            "R": self.R,
            "singularity_floor": self.singularity_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapConfig":
        known = {"kind", "K_sm", "mu", "eps", "substeps", "R", "singularity_floor"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown map config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ObservableSeries:
    """Rows ``h(F^t(x))`` for ``t = 0 .. T-1`` of a single trajectory."""

    data: np.ndarray
    origin: Optional[PhaseState] = None
    config: Union[MapConfig, str, None] = "external"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"series must be a non-empty T x D matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("series has non-finite entries")
        self.data = data

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def head(self, n: int) -> "ObservableSeries":
        return ObservableSeries(self.data[:n], self.origin, self.config)


# --------------------------------------------------------------------------
# coupled standard map


def step_coupled_standard_map(state: PhaseState, K_sm) -> PhaseState:
    """One iterate of the coupled standard map.

    ``y' = y + K sin(2 pi x) / (2 pi)`` and ``x' = x + y'``.  The angle is
    not reduced here; reduction happens in the observable.
    """
    K = np.asarray(K_sm, dtype=float)
    y = state.p + K @ np.sin(2 * np.pi * state.q) / (2 * np.pi)
    return PhaseState(state.q + y, y)


def _standard_map_arrays(x, y, K):
    # x, y: (..., 2); vectorised over leading axes
    y = y + np.sin(2 * np.pi * x) @ K.T / (2 * np.pi)
    return x + y, y


def embed_standard_map(state: PhaseState, R: float) -> np.ndarray:
    return _embed_arrays(state.q, state.p, R)


def _embed_arrays(x, y, R):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.cos(2 * np.pi * x)
    s = np.sin(2 * np.pi * x)
    r = y + R
    out = np.empty(x.shape[:-1] + (4,))
    out[..., 0] = r[..., 0] * c[..., 0]
    out[..., 1] = r[..., 0] * s[..., 0]
    out[..., 2] = r[..., 1] * c[..., 1]
    out[..., 3] = r[..., 1] * s[..., 1]
    return out


def unembed_standard_map(h, R: float):
    """Invert the standard-map observable; returns ``(x, y)`` arrays.

    Raises ``ValueError`` when a radius is not positive, since the angle is
    then undefined.
    """
    h = np.asarray(h, dtype=float)
    r1 = np.hypot(h[..., 0], h[..., 1])
    r2 = np.hypot(h[..., 2], h[..., 3])
    if np.any(r1 <= 0) or np.any(r2 <= 0):
        raise ValueError("observable cannot be inverted at zero radius")
    x = np.stack([np.arctan2(h[..., 1], h[..., 0]), np.arctan2(h[..., 3], h[..., 2])], axis=-1)
    x = np.mod(x / (2 * np.pi), 1.0)
    y = np.stack([r1 - R, r2 - R], axis=-1)
    return x, y


# --------------------------------------------------------------------------
# elliptic restricted three-body problem

_SQ15 = math.sqrt(15.0)
_GL_C = np.array([0.5 - _SQ15 / 10, 0.5, 0.5 + _SQ15 / 10])
_GL_A = np.array(
    [
        [5 / 36, 2 / 9 - _SQ15 / 15, 5 / 36 - _SQ15 / 30],
        [5 / 36 + _SQ15 / 24, 2 / 9, 5 / 36 - _SQ15 / 24],
        [5 / 36 + _SQ15 / 30, 2 / 9 + _SQ15 / 15, 5 / 36],
    ]
)
_GL_B = np.array([5 / 18, 4 / 9, 5 / 18])

_OK, _SINGULAR, _NOCONV = 0, 1, 2


@njit(cache=True)
def _er3bp_rhs(f, z, n, mu, eps, floor, out):
    # returns False when a primary distance drops below ``floor``
    s = 1.0 / (1.0 + eps * math.cos(f))
    x, y = z[0], z[1]
    zz = z[2] if n == 3 else 0.0
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1 = math.sqrt(dx1 * dx1 + y * y + zz * zz)
    r2 = math.sqrt(dx2 * dx2 + y * y + zz * zz)
    if r1 < floor or r2 < floor:
        return False
    a1 = (1.0 - mu) / (r1 * r1 * r1)
    a2 = mu / (r2 * r2 * r2)
    # gradient of phi; the quadratic part is centred on the barycentre
    gx = s * (x - a1 * dx1 - a2 * dx2)
    gy = s * (y - (a1 + a2) * y)
    px, py = z[n], z[n + 1]
    out[0] = px + y
    out[1] = py - x
    out[n] = -x + py + gx
    out[n + 1] = -y - px + gy
    if n == 3:
        gz = s * (zz - (a1 + a2) * zz)
        out[2] = z[5]
        out[5] = -zz + gz
    return True


@njit(cache=True)
def _gl3_period(z0, n, mu, eps, floor, substeps, A, b, c, tol, maxit):
    m = 2 * n
    z = z0.copy()
    h = 2.0 * math.pi / substeps
    K = np.zeros((3, m))
    Knew = np.zeros((3, m))
    Z = np.zeros(m)
    f0 = np.zeros(m)
    for step in range(substeps):
        t = step * h
        if not _er3bp_rhs(t, z, n, mu, eps, floor, f0):
            return z, _SINGULAR
        for i in range(3):
            for k in range(m):
                K[i, k] = f0[k]
        converged = False
        for it in range(maxit):
            err = 0.0
            for i in range(3):
                for k in range(m):
                    acc = 0.0
                    for j in range(3):
                        acc += A[i, j] * K[j, k]
                    Z[k] = z[k] + h * acc
                if not _er3bp_rhs(t + c[i] * h, Z, n, mu, eps, floor, f0):
                    return z, _SINGULAR
                for k in range(m):
                    Knew[i, k] = f0[k]
            for i in range(3):
                for k in range(m):
                    d = abs(Knew[i, k] - K[i, k]) * h
                    scale = 1.0 + abs(z[k])
                    if d / scale > err:
                        err = d / scale
                    K[i, k] = Knew[i, k]
            if err < tol:
                converged = True
                break
        if not converged:
            return z, _NOCONV
        for k in range(m):
            acc = 0.0
            for j in range(3):
                acc += b[j] * K[j, k]
            z[k] = z[k] + h * acc
    return z, _OK


@njit(cache=True)
def _gl3_orbit(z0, N, n, mu, eps, floor, substeps, A, b, c, tol, maxit):
    out = np.empty((N, 2 * n))
    out[0] = z0
    z = z0.copy()
    for t in range(1, N):
        z, status = _gl3_period(z, n, mu, eps, floor, substeps, A, b, c, tol, maxit)
        if status != _OK:
            return out[:t], status
        out[t] = z
    return out, _OK


@njit(cache=True)
def _gl3_many(Z0, n, mu, eps, floor, substeps, A, b, c, tol, maxit):
    M = Z0.shape[0]
    out = np.empty_like(Z0)
    status = np.zeros(M, dtype=np.int64)
    for i in range(M):
        z, s = _gl3_period(Z0[i].copy(), n, mu, eps, floor, substeps, A, b, c, tol, maxit)
        out[i] = z
        status[i] = s
    return out, status


_STAGE_TOL = 1e-13
_STAGE_MAXIT = 50


def _raise_status(status: int):
    if status == _SINGULAR:
        raise SingularityError("third body reached a primary (distance below floor)")
    if status == _NOCONV:
        raise NonConvergenceError("implicit stage iteration did not converge")


def _check_er3bp(config: MapConfig, n: int):
    if config.kind is MapKind.COUPLED_STANDARD_MAP:
        raise ValueError("config does not describe an ER3BP map")
    if n != config.n:
        raise ValueError(f"{config.kind.value} needs n={config.n}, state has n={n}")


def er3bp_period_map(state: PhaseState, config: MapConfig) -> PhaseState:
    """Advance ``state`` through one revolution of the primaries, f: 0 -> 2 pi."""
    _check_er3bp(config, state.n)
    z, status = _gl3_period(
        state.as_vector(), state.n, config.mu, config.eps, config.singularity_floor,
        config.substeps, _GL_A, _GL_B, _GL_C, _STAGE_TOL, _STAGE_MAXIT,
    )
    _raise_status(status)
    return PhaseState.from_vector(z)


def er3bp_period_map_many(Z: np.ndarray, config: MapConfig) -> np.ndarray:
    """Vectorised period map on an ``(M, 2n)`` array of states."""
    Z = np.ascontiguousarray(Z, dtype=float)
    n = Z.shape[1] // 2
    _check_er3bp(config, n)
    out, status = _gl3_many(
        Z, n, config.mu, config.eps, config.singularity_floor, config.substeps,
        _GL_A, _GL_B, _GL_C, _STAGE_TOL, _STAGE_MAXIT,
    )
    bad = status != _OK
    if np.any(bad):
        _raise_status(int(status[np.argmax(bad)]))
    return out


def er3bp_hamiltonian(state: PhaseState, config: MapConfig, f: float = 0.0) -> float:
    q, p = state.q, state.p
    mu = config.mu
    y = q[1]
    zz = q[2] if q.size == 3 else 0.0
    r1 = math.sqrt((q[0] + mu) ** 2 + y * y + zz * zz)
    r2 = math.sqrt((q[0] - 1 + mu) ** 2 + y * y + zz * zz)
    phi = ((1 - mu) * r1**2 / 2 + mu * r2**2 / 2 + (1 - mu) / r1 + mu / r2) / (1 + config.eps * math.cos(f))
    return 0.5 * (q @ q + p @ p) + q[1] * p[0] - q[0] * p[1] - phi


def velocities_to_momenta(q, v) -> np.ndarray:
    """``p = v + (-eta, xi, 0)`` for pulsating-frame velocities ``v``."""
    q = np.asarray(q, dtype=float)
    p = np.array(v, dtype=float)
    p[0] -= q[1]
    p[1] += q[0]
    return p


def momenta_to_velocities(q, p) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    v = np.array(p, dtype=float)
    v[0] += q[1]
    v[1] -= q[0]
    return v


# --------------------------------------------------------------------------
# generic interface


def apply_map(states: np.ndarray, config: MapConfig) -> np.ndarray:
    """Apply the map to an ``(M, 2n)`` array of states."""
    states = np.asarray(states, dtype=float)
    if config.kind is MapKind.COUPLED_STANDARD_MAP:
        x, y = _standard_map_arrays(states[:, :2], states[:, 2:], config.K_sm)
        return np.concatenate([x, y], axis=1)
    return er3bp_period_map_many(states, config)


def observe(states: np.ndarray, config: MapConfig) -> np.ndarray:
    """Observable of an ``(M, 2n)`` array of states."""
    states = np.asarray(states, dtype=float)
    if config.kind is MapKind.COUPLED_STANDARD_MAP:
        return _embed_arrays(states[..., :2], states[..., 2:], config.R)
    return states.copy()


def generate_series(config: MapConfig, x0: PhaseState, N: int, stride: int = 1) -> ObservableSeries:
    """Rows ``0 .. N-1`` hold the observable of ``F^(stride*t)(x0)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x0.n != config.n:
        raise ValueError(f"{config.kind.value} needs n={config.n}, got n={x0.n}")
    total = (N - 1) * stride + 1
    if config.kind is MapKind.COUPLED_STANDARD_MAP:
        x = np.empty((total, 2))
        y = np.empty((total, 2))
        x[0], y[0] = x0.q, x0.p
        K = config.K_sm / (2 * np.pi)
        for t in range(1, total):
            y[t] = y[t - 1] + K @ np.sin(2 * np.pi * x[t - 1])
            x[t] = x[t - 1] + y[t]
        states = np.concatenate([x, y], axis=1)
    else:
        states, status = _gl3_orbit(
            x0.as_vector(), total, x0.n, config.mu, config.eps, config.singularity_floor,
            config.substeps, _GL_A, _GL_B, _GL_C, _STAGE_TOL, _STAGE_MAXIT,
        )
        _raise_status(status)
    return ObservableSeries(observe(states[::stride], config), x0, config)


# --------------------------------------------------------------------------
# CSV exchange format: header ``t,h1,...,hD``


def write_series_csv(series: ObservableSeries, path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"h{i + 1}" for i in range(series.D)])
        for t, row in enumerate(series.data):
            w.writerow([t] + [f"{v:.17g}" for v in row])


def read_series_csv(path: Union[str, Path]) -> ObservableSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    D = len(header) - 1
    if D < 1 or header[0] != "t" or header[1:] != [f"h{i + 1}" for i in range(D)]:
        raise ValueError(f"{path}: header must be 't,h1,...,hD', got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    arr = np.array([[float(v) for v in r] for r in body])
    if arr.shape[1] != D + 1:
        raise ValueError(f"{path}: ragged rows")
    if not np.array_equal(arr[:, 0], np.arange(len(arr))):
        raise ValueError(f"{path}: time column must count 0, 1, 2, ...")
    return ObservableSeries(arr[:, 1:], None, "external")


# --------------------------------------------------------------------------
# reference initial conditions

TROJAN_CONFIG = MapConfig(kind=MapKind.ER3BP_PLANAR, mu=9.54e-4, eps=0.0489, substeps=1000)
EARTH_MOON_SPATIAL = MapConfig(kind=MapKind.ER3BP_SPATIAL, mu=1.2151e-2, eps=0.0549, substeps=1000)


def trojan_state(convention: str = "velocity") -> PhaseState:
    """Sun-Jupiter trojan start near L4.

    The published start gives zero "momentum"; only the reading as zero
    pulsating-frame velocity stays near L4 (``convention="velocity"``).
    ``convention="momentum"`` returns the literal ``p = 0`` state.
    """
    q = np.array([0.5, math.sqrt(3) / 2 - 0.005])
    if convention == "velocity":
        return PhaseState(q, velocities_to_momenta(q, [0.0, 0.0]))
    if convention == "momentum":
        return PhaseState(q, np.zeros(2))
    raise ValueError(f"unknown convention {convention!r}")


def _from_velocity(q, v) -> PhaseState:
    q = np.asarray(q, dtype=float)
    return PhaseState(q, velocities_to_momenta(q, v))


def western_low_prograde_state() -> PhaseState:
    return _from_velocity([1.04254, 0.0, 0.001], [0.0, 0.43117, 0.001])


def distant_retrograde_state() -> PhaseState:
    return _from_velocity([0.95561, 0.001, 0.001], [0.001, 0.64088, 0.001])


def l4_librational_state() -> PhaseState:
    return _from_velocity([0.48885, 0.868025, 0.05], [-0.002, 0.002, 0.05])
