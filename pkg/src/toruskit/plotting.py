"""Figures for batch reports, rendered next to the CSV outputs.

Uses the non-interactive Agg backend; nothing here is needed by the
numerical pipeline.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def classification_vs_N(reports: Sequence, tol: float, path) -> Path:
    """Fraction of trajectories with ``R_RRE`` (and ``R_WBA``) below ``tol`` at each ladder length."""
    plt = _pyplot()
    Ns = sorted({row[2] for r in reports for row in r.rre_history})
    n = len(reports)
    rre, wba = [], []
    for N in Ns:
        rows = [next((row for row in r.rre_history if row[2] == N), None) for r in reports]
        # trajectories accepted at an earlier rung stay classified
        rre.append(sum(1 for r in reports if any(row[2] <= N and row[3] < tol for row in r.rre_history)) / n)
        wba.append(sum(1 for row in rows if row is not None and np.isfinite(row[4]) and row[4] < tol) / n)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(Ns, rre, "o-", label="Birkhoff RRE")
    ax.plot(Ns, wba, "s--", label="weighted Birkhoff average")
    ax.set_xlabel("trajectory length N")
    ax.set_ylabel(f"fraction with residual < {tol:g}")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def residual_scatter(reports: Sequence, path) -> Path:
    """``R_h`` against ``R_KAM`` for the classified trajectories, coloured by resonance order."""
    plt = _pyplot()
    pts = [(r.R_h, r.R_KAM, r.M_delta) for r in reports
           if r.R_h is not None and r.R_KAM is not None and r.R_h > 0 and r.R_KAM > 0]
    fig, ax = plt.subplots(figsize=(5, 4))
    if pts:
        Rh, Rk, M = (np.array(v, dtype=float) for v in zip(*[(a, b, np.nan if m is None else m) for a, b, m in pts]))
        sc = ax.scatter(Rh, Rk, c=np.where(np.isnan(M), 60, M), cmap="viridis", s=18)
        fig.colorbar(sc, ax=ax, label="resonance order")
        lo = min(Rh.min(), Rk.min())
        hi = max(Rh.max(), Rk.max())
        ax.plot([lo, hi], [lo, hi], "k:", lw=0.8)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("validation residual $R_h$")
    ax.set_ylabel("KAM residual $R_{KAM}$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_batch_figures(reports: Sequence, tol: float, out) -> list:
    out = Path(out)
    return [
        classification_vs_N(reports, tol, out / "classification_vs_N.png"),
        residual_scatter(reports, out / "resid_scatter.png"),
    ]
