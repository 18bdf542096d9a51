"""Invariant tori and rotation vectors of symplectic maps from a single trajectory.

Stages: Birkhoff RRE frequency extraction (:mod:`toruskit.spectral`), MAP
rotation-vector inference (:mod:`toruskit.rotation_inference`), KZ
canonicalisation (:mod:`toruskit.lattice`), adaptive Fourier fitting
(:mod:`toruskit.torus_fit`) and a-posteriori checks
(:mod:`toruskit.validation`).  :mod:`toruskit.pipeline` chains them.
"""
from .dynamics import MapConfig, MapKind, ObservableSeries, PhaseState, generate_series
from .lattice import averaged_metric, canonicalize_rotation, kz_reduce, shortest_lattice_vector
from .pipeline import PipelineConfig, TorusReport, batch_run, run_pipeline
from .rotation_inference import RotationEstimate, SpectralPrior, estimate_rotation_vector
from .spectral import FrequencySpectrum, RREFilter, extract_frequencies, project_spectrum, solve_rre_filter
from .torus_fit import FourierTorus, ResolutionBox, adaptive_parameterize, evaluate_torus
from .validation import kam_residual, resonance_order

__version__ = "0.1.0"
