"""A-posteriori diagnostics: KAM conjugacy residual and resonance order."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import MapConfig, MapKind, apply_map, observe, unembed_standard_map
from .spectral import torus_distance
from .torus_fit import FourierTorus, evaluate_torus

__all__ = ["KamGrid", "PullbackUnavailable", "kam_residual", "resonance_order", "pullback"]


class PullbackUnavailable(ValueError):
    """The observable has no inverse, so the embedded torus cannot be mapped."""


@dataclass(frozen=True)
class KamGrid:
    """Uniform periodic grid (trapezoid rule on the torus, no duplicate endpoint)."""

    points_per_dim: int = 25

    def __post_init__(self):
        if self.points_per_dim < 2:
            raise ValueError("points_per_dim must be >= 2")

    def points(self, d: int) -> np.ndarray:
        x = np.arange(self.points_per_dim) / self.points_per_dim
        return np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)


def pullback(values: np.ndarray, config: MapConfig) -> np.ndarray:
    """States whose observable equals ``values`` (rows)."""
    if config.kind is MapKind.COUPLED_STANDARD_MAP:
        try:
            x, y = unembed_standard_map(values, config.R)
        except ValueError as exc:
            raise PullbackUnavailable(str(exc)) from exc
        return np.concatenate([x, y], axis=-1)
    if config.observable_dim == values.shape[-1]:
        return np.asarray(values, dtype=float)
    raise PullbackUnavailable(f"no observable inverse for {config.kind}")


def _iterate(states, config: MapConfig, stride: int):
    for _ in range(stride):
        states = apply_map(states, config)
    return states


def _chain_residual(torus: FourierTorus, config: MapConfig, theta: np.ndarray, j: int, stride: int) -> float:
    p = torus.p
    th0 = np.full((theta.shape[0], 1), j / p)
    ext = np.hstack([th0, theta])
    S = evaluate_torus(torus, ext)
    shifted = np.mod(ext + torus.omega_ext, 1.0)
    S_rot = evaluate_torus(torus, shifted)
    mapped = observe(_iterate(pullback(S, config), config, stride), config)
    num = np.linalg.norm(mapped - S_rot)
    den = np.linalg.norm(S)
    return float(num / den) if den > 0 else float(num)


def kam_residual(torus: FourierTorus, config: MapConfig, grid: KamGrid = KamGrid(), stride: int = 1) -> float:
    """``|h o F o S - h o S o tau_omega| / |h o S|`` on a uniform grid.

    Island chains are checked torus by torus, the map carrying torus ``j``
    at ``theta`` to torus ``j + 1`` at ``theta + omega / p``; the largest
    residual is returned.  ``stride`` applies ``F^stride`` for subsampled
    trajectories.
    """
    theta = grid.points(torus.d)
    return max(_chain_residual(torus, config, theta, j, stride) for j in range(torus.p))


def resonance_order(omega, delta: float = 1e-4, k_budget: int = 50) -> Optional[int]:
    """Smallest ``|k|_1`` (nonzero ``k``) with ``|omega . k|_T <= delta``; None if above ``k_budget``."""
    if delta <= 0 or k_budget < 1:
        raise ValueError("delta must be positive and k_budget >= 1")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    d = omega.size
    ax = np.arange(-k_budget, k_budget + 1)
    best = None
    # one axis at a time keeps memory at (2B+1)^(d-1)
    rest = np.stack(np.meshgrid(*([ax] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1) if d > 1 else np.zeros((1, 0), int)
    rest_l1 = np.abs(rest).sum(axis=1)
    rest_dot = rest @ omega[1:]
    for k0 in ax:
        l1 = rest_l1 + abs(k0)
        ok = (l1 <= k_budget) & (l1 > 0)
        ok &= torus_distance(rest_dot + k0 * omega[0]) <= delta
        if ok.any():
            m = int(l1[ok].min())
            best = m if best is None else min(best, m)
    return best
