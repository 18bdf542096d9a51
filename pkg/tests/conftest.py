"""Shared, session-scoped trajectories (the ER3BP ones take seconds to integrate)."""
import numpy as np
import pytest

from toruskit.dynamics import (
    EARTH_MOON_SPATIAL,
    TROJAN_CONFIG,
    MapConfig,
    PhaseState,
    generate_series,
    trojan_state,
    western_low_prograde_state,
)

SM_EXAMPLE_X0 = PhaseState([0.1, 0.1], [0.1, 0.01])


@pytest.fixture(scope="session")
def trojan_series():
    return generate_series(TROJAN_CONFIG, trojan_state(), 601)


@pytest.fixture(scope="session")
def sm_example_series():
    return generate_series(MapConfig(), SM_EXAMPLE_X0, 8001)


@pytest.fixture(scope="session")
def wlp_series():
    return generate_series(EARTH_MOON_SPATIAL, western_low_prograde_state(), 3335)


def quasiperiodic_signal(omega, modes, amps, T, D=2, rng=None, phases=True):
    """Real signal ``sum_k a_k cos(2 pi (k.omega) t + phi_k)`` spread over ``D`` channels."""
    rng = np.random.default_rng(0) if rng is None else rng
    t = np.arange(T)
    h = np.zeros((T, D))
    for k, a in zip(modes, amps):
        nu = float(np.dot(k, omega))
        phi = rng.uniform(0, 2 * np.pi) if phases else 0.0
        direction = rng.normal(size=D)
        direction /= np.linalg.norm(direction)
        h += a * np.cos(2 * np.pi * nu * t + phi)[:, None] * direction
    return h


@pytest.fixture(scope="session")
def sm_example_spectrum(sm_example_series):
    """RRE filter at (J, T) = (2000, 4000) on the reference coupled-map orbit, and its spectrum."""
    from toruskit.spectral import extract_frequencies, project_spectrum, solve_rre_filter

    filt = solve_rre_filter(sm_example_series, 2000, 4000)
    spec = project_spectrum(sm_example_series.data[:8001], extract_frequencies(filt))
    return filt, spec


def canonical_rotation(series, J, T, d, J0=30):
    """Rotation vector from the classify, spectrum, rotation and canonicalize stages alone."""
    from toruskit.lattice import averaged_metric, canonicalize_rotation, kz_reduce
    from toruskit.rotation_inference import estimate_rotation_vector
    from toruskit.spectral import extract_frequencies, project_spectrum, solve_rre_filter

    h = series.data if hasattr(series, "data") else np.asarray(series)
    h = h[: T + 2 * J + 1]
    filt = solve_rre_filter(h, J, T)
    spec = project_spectrum(h, extract_frequencies(filt))
    est = estimate_rotation_vector(spec, d, J0=min(J0, len(spec)))
    A, omega = canonicalize_rotation(kz_reduce(averaged_metric(spec, est.labeling)), est.omega)
    return filt, spec, est, A, omega


@pytest.fixture(scope="session")
def trojan_omega(trojan_series):
    return canonical_rotation(trojan_series, 200, 200, 2)[4]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
