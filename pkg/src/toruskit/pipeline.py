"""End-to-end pipeline: classify, infer the rotation vector, canonicalise, fit, validate."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import MapConfig, MapKind, ObservableSeries, PhaseState, generate_series, read_series_csv
from .lattice import averaged_metric, canonicalize_rotation, kz_reduce
from .rotation_inference import (
    SpectralPrior,
    default_grid_bound,
    detect_island_period,
    estimate_rotation_vector,
    fit_spectral_prior,
    trim_J0,
)
from .spectral import extract_frequencies, project_spectrum, solve_rre_filter, wba_residual
from .torus_fit import FourierTorus, ResolutionBox, adaptive_parameterize
from .validation import KamGrid, PullbackUnavailable, kam_residual, resonance_order

__all__ = [
    "PipelineConfig",
    "TorusReport",
    "run_pipeline",
    "classify_trajectory",
    "batch_run",
    "sample_initial_state",
    "write_batch_outputs",
    "fmt_float",
]

log = logging.getLogger(__name__)

DEFAULT_LADDER = ((1000, 2000), (1500, 3000), (2000, 4000))


@dataclass
class PipelineConfig:
    map: Optional[MapConfig] = field(default_factory=MapConfig)
    trajectory: Optional[str] = None
    x0: Optional[list] = None
    ladder: tuple = DEFAULT_LADDER
    classify_tol: float = 5e-14
    J_0: int = 30
    sigma_omega: float = 1e-10
    eps_MAP: float = 1e-3
    P: Optional[int] = None
    gamma_P: float = 10.0
    K_max: int = 2000
    eta: float = 10.0
    gamma_split: float = 0.05
    p_max: int = 10
    eps_isl: float = 1e-8
    delta_res: float = 1e-4
    k_budget: int = 50
    kam_grid: int = 25
    seed: int = 0
    d: Optional[int] = None
    stride: int = 1
    circle_tol: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.map, dict):
            self.map = MapConfig.from_dict(self.map)
        self.ladder = tuple((int(J), int(T)) for J, T in self.ladder)
        if not self.ladder:
            raise ValueError("ladder must be nonempty")
        for (J0, T0), (J1, T1) in zip(self.ladder, self.ladder[1:]):
            if J1 < J0 or T1 < T0:
                raise ValueError("ladder must be nondecreasing")
        for name in ("classify_tol", "sigma_omega", "eps_MAP", "gamma_P", "eps_isl", "delta_res", "circle_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta < 1 or not 0 < self.gamma_split < 1:
            raise ValueError("eta must be >= 1 and gamma_split in (0, 1)")
        if self.map is None and self.trajectory is None:
            raise ValueError("config needs a map or a trajectory path")
        if self.stride < 1 or self.workers < 1 or self.kam_grid < 2:
            raise ValueError("stride and workers must be >= 1, kam_grid >= 2")

    @property
    def N(self) -> int:
        """Trajectory length needed by the largest ladder rung."""
        return max(T + 2 * J + 1 for J, T in self.ladder)

    @property
    def torus_dim(self) -> int:
        if self.d is not None:
            return int(self.d)
        return self.map.n if self.map is not None else 2

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["map"] = self.map.to_dict() if self.map is not None else None
        out["ladder"] = [list(r) for r in self.ladder]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TorusReport:
    classification: str = "not_converged"
    p: Optional[int] = None
    R_RRE: Optional[float] = None
    J: Optional[int] = None
    T: Optional[int] = None
    N: Optional[int] = None
    rre_history: list = field(default_factory=list)
    R_WBA: Optional[float] = None
    omega: Optional[list] = None
    omega_raw: Optional[list] = None
    L_MAP: Optional[float] = None
    L: Optional[list] = None
    det_L: Optional[int] = None
    A: Optional[list] = None
    n_explained: Optional[int] = None
    J0: Optional[int] = None
    K: Optional[list] = None
    R_h: Optional[float] = None
    R_KAM: Optional[float] = None
    kam_status: str = "not_run"
    M_delta: Optional[int] = None
    stage_failure: Optional[str] = None
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    torus: Optional[dict] = None
    x0: Optional[list] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TorusReport":
        return cls(**doc)


def fmt_float(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def _trajectory(config: PipelineConfig, x0: Optional[PhaseState]) -> ObservableSeries:
    if config.trajectory is not None:
        series = read_series_csv(config.trajectory)
        if len(series) < config.N:
            raise ValueError(f"trajectory has {len(series)} rows; the ladder needs {config.N}")
        return series.head(config.N)
    if x0 is None:
        if config.x0 is None:
            raise ValueError("no initial state given")
        x0 = PhaseState.from_vector(config.x0)
    return generate_series(config.map, x0, config.N, stride=config.stride)


def classify_trajectory(series, config: PipelineConfig, report: TorusReport):
    """Walk the ladder; returns the RRE filter of the accepted (or last) rung."""
    h = series.data if isinstance(series, ObservableSeries) else np.asarray(series)
    filt = None
    for J, T in config.ladder:
        N = T + 2 * J + 1
        filt = solve_rre_filter(h[:N], J, T)
        Nw = N - (N % 2)
        try:
            r_wba = wba_residual(h[:Nw])
        except ZeroDivisionError:
            r_wba = float("nan")
        report.rre_history.append([J, T, N, filt.residual, r_wba])
        report.J, report.T, report.N, report.R_RRE, report.R_WBA = J, T, N, filt.residual, r_wba
        if filt.residual < config.classify_tol:
            report.classification = "torus"
            break
    return filt


def _is_constant(h: np.ndarray) -> bool:
    return bool(np.all(np.ptp(h, axis=0) <= 1e-14 * max(np.abs(h).max(), 1e-300)))


def _constant_torus(h: np.ndarray, d: int) -> FourierTorus:
    box = ResolutionBox((0,) * d)
    coeffs = np.zeros(box.shape + (h.shape[1],), dtype=complex)
    coeffs[(0,) * (d + 1)] = h.mean(axis=0)
    return FourierTorus(np.zeros(d), box, coeffs, 0.0, {"method": "constant"})


def run_pipeline(config: PipelineConfig, x0: Optional[PhaseState] = None) -> TorusReport:
    """Run every stage on one trajectory; stage errors are recorded, not raised."""
    report = TorusReport()
    if x0 is not None:
        report.x0 = [float(v) for v in x0.as_vector()]
    elif config.x0 is not None:
        report.x0 = [float(v) for v in config.x0]
    stage = "trajectory"
    d = config.torus_dim
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            t0 = time.perf_counter()
            series = _trajectory(config, x0)
            report.timings["trajectory"] = time.perf_counter() - t0

            stage = "classify"
            t0 = time.perf_counter()
            filt = classify_trajectory(series, config, report)
            report.timings["classify"] = time.perf_counter() - t0
            if report.classification != "torus":
                return report
            h = series.data[: report.N]

            if _is_constant(h):
                torus = _constant_torus(h, d)
                report.omega = [0.0] * d
                report.K = [0] * d
                report.p = 1
            else:
                stage = "spectrum"
                t0 = time.perf_counter()
                spectrum = project_spectrum(h, extract_frequencies(filt, config.circle_tol))
                report.timings["spectrum"] = time.perf_counter() - t0

                stage = "rotation"
                t0 = time.perf_counter()
                J0 = min(config.J_0, len(spectrum))
                p = detect_island_period(spectrum.omega[:J0], config.p_max, config.eps_isl)
                report.p = p
                if p > 1:
                    report.classification = "island"
                C, r = fit_spectral_prior(spectrum.mag, d, spectrum.D)
                prior = SpectralPrior(C, r, config.sigma_omega, spectrum.D)
                J0 = trim_J0(spectrum, J0, config.eps_MAP)
                P = config.P if config.P is not None else default_grid_bound(J0, d, config.gamma_P)
                est = estimate_rotation_vector(spectrum, d, J0=J0, prior=prior, P=P, p=p,
                                               sigma_omega=config.sigma_omega, eps_map=config.eps_MAP,
                                               eps_isl=config.eps_isl)
                report.omega_raw = [float(v) for v in est.omega]
                report.L_MAP, report.L, report.det_L = est.L_MAP, est.source_rows.tolist(), est.det_L
                report.n_explained, report.J0 = est.n_explained, est.J0
                report.timings["rotation"] = time.perf_counter() - t0

                stage = "canonicalize"
                t0 = time.perf_counter()
                G = averaged_metric(spectrum, est.labeling, p)
                A = kz_reduce(G)
                A, omega = canonicalize_rotation(A, est.omega)
                report.A, report.omega = A.tolist(), [float(v) for v in omega]
                report.timings["canonicalize"] = time.perf_counter() - t0

                stage = "fit"
                t0 = time.perf_counter()
                torus = adaptive_parameterize(h, omega, config.gamma_split, config.eta, config.K_max, p=p)
                report.K = list(torus.K)
                report.timings["fit"] = time.perf_counter() - t0
            report.R_h = float(torus.R_h)

            stage = "validate"
            t0 = time.perf_counter()
            report.M_delta = resonance_order(report.omega, config.delta_res, config.k_budget) if any(report.omega) else None
            torus.meta["provenance"] = {
                "map": config.map.to_dict() if config.map is not None else None,
                "trajectory": config.trajectory, "N": report.N, "stride": config.stride,
                "R_RRE": report.R_RRE,
            }
            report.torus = torus.to_dict()
            if config.map is None:
                report.kam_status = "unavailable"
            else:
                try:
                    report.R_KAM = kam_residual(torus, config.map, KamGrid(config.kam_grid), config.stride)
                    report.kam_status = "ok" if torus.p == 1 else "ok_chain_max"
                except PullbackUnavailable as exc:
                    report.kam_status = f"unavailable: {exc}"
            report.timings["validate"] = time.perf_counter() - t0
        except Exception as exc:  # stage errors are part of the report
            log.info("stage %s failed: %s", stage, exc)
            report.stage_failure = f"{stage}: {type(exc).__name__}: {exc}"
        finally:
            report.warnings.extend(str(w.message) for w in caught)
    return report


def sample_initial_state(seed: int, index: int, config: Optional[MapConfig] = None) -> PhaseState:
    """Uniform ``(x, y)`` in ``T^n x [0, 1]^n`` from a generator keyed by ``(seed, index)``."""
    n = config.n if config is not None else 2
    rng = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(index)]))
    z = rng.random(2 * n)
    return PhaseState(z[:n], z[n:])


def _batch_item(args):
    config, index = args
    x0 = sample_initial_state(config.seed, index, config.map)
    rep = run_pipeline(config, x0)
    return index, rep


def batch_run(config: PipelineConfig, n_samples: int, progress=None):
    """Run ``n_samples`` random standard-map trajectories; returns ``(reports, summary)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if config.map is None or config.map.kind is not MapKind.COUPLED_STANDARD_MAP:
        raise ValueError("batch sampling is defined for the coupled standard map")
    jobs = [(config, i) for i in range(n_samples)]
    reports = [None] * n_samples
    if config.workers == 1:
        results = map(_batch_item, jobs)
        for i, rep in results:
            reports[i] = rep
            if progress:
                progress(i, rep)
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for i, rep in pool.map(_batch_item, jobs):
                reports[i] = rep
                if progress:
                    progress(i, rep)
    return reports, summarize(reports, config)


def summarize(reports: Sequence[TorusReport], config: PipelineConfig) -> dict:
    n = len(reports)
    regular = [r for r in reports if r.classification in ("torus", "island")]
    wba = [r for r in reports if r.R_WBA is not None and np.isfinite(r.R_WBA) and r.R_WBA < config.classify_tol]
    kam = np.array([r.R_KAM for r in regular if r.R_KAM is not None])
    edges = [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, np.inf]
    hist = np.histogram(kam, bins=edges)[0] if kam.size else np.zeros(len(edges) - 1, int)
    return {
        "n_samples": n,
        "n_regular": len(regular),
        "n_islands": sum(r.classification == "island" for r in reports),
        "classified_fraction": len(regular) / n,
        "wba_classified_fraction": len(wba) / n,
        "n_stage_failures": sum(r.stage_failure is not None for r in reports),
        "kam_below_1e-3": int(np.sum(kam < 1e-3)),
        "kam_histogram": {"edges": [fmt_float(e) for e in edges], "counts": hist.tolist()},
        "M_delta": [r.M_delta for r in regular],
    }


def write_batch_outputs(reports: Sequence[TorusReport], summary: dict, config: PipelineConfig, out) -> Path:
    """``batch.csv``, ``rre_vs_N.csv``, ``resid_scatter.csv``, ``summary.json`` and per-trajectory reports."""
    out = Path(out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    d = config.torus_dim
    with open(out / "batch.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "class", "p", "R_RRE", "J", "T", "N", *[f"omega_{i + 1}" for i in range(d)],
                    "L_MAP", *[f"K_{i + 1}" for i in range(d)], "R_h", "R_KAM", "M_delta", "R_WBA", "stage_failure"])
        for i, r in enumerate(reports):
            om = r.omega or [None] * d
            K = r.K or [None] * d
            w.writerow([i, r.classification, fmt_float(r.p), fmt_float(r.R_RRE), fmt_float(r.J), fmt_float(r.T),
                        fmt_float(r.N), *map(fmt_float, om), fmt_float(r.L_MAP), *map(fmt_float, K),
                        fmt_float(r.R_h), fmt_float(r.R_KAM), fmt_float(r.M_delta), fmt_float(r.R_WBA),
                        r.stage_failure or ""])
    with open(out / "rre_vs_N.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "J", "T", "N", "R_RRE", "R_WBA"])
        for i, r in enumerate(reports):
            for J, T, N, rr, rw in r.rre_history:
                w.writerow([i, J, T, N, fmt_float(rr), fmt_float(rw)])
    with open(out / "resid_scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "class", "R_h", "R_KAM", "M_delta"])
        for i, r in enumerate(reports):
            if r.classification in ("torus", "island"):
                w.writerow([i, r.classification, fmt_float(r.R_h), fmt_float(r.R_KAM), fmt_float(r.M_delta)])
    for i, r in enumerate(reports):
        with open(out / "reports" / f"report_{i:05d}.json", "w") as fh:
            json.dump(r.to_dict(), fh, indent=1)
    with open(out / "summary.json", "w") as fh:
        json.dump({"config": config.to_dict(), **summary}, fh, indent=1)
    return out
