import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from toruskit.rotation_inference import (
    NoValidRotationError,
    SpectralPrior,
    WavenumberLabeling,
    default_grid_bound,
    detect_island_period,
    estimate_rotation_vector,
    fit_spectral_prior,
    greedy_label,
    int_det,
    unit_ball_volume,
    wavenumber_grid,
)
from toruskit.spectral import FrequencySpectrum, torus_distance


def _spectrum(omegas, mags, D=4, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    H = np.empty((len(omegas), D), dtype=complex)
    for j, m in enumerate(mags):
        v = rng.normal(size=D) + 1j * rng.normal(size=D)
        H[j] = m * v / np.linalg.norm(v)
    order = np.argsort(-np.asarray(mags), kind="stable")
    return FrequencySpectrum(np.zeros(D), np.asarray(omegas, float)[order], H[order])


def _folded(omega, k):
    v = np.mod(np.dot(k, omega), 1.0)
    return min(v, 1 - v)


class TestPriorFit:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_exact_recovery(self, d):
        C0, r0, D = 0.7, 0.35, 4
        j = np.arange(1, 31)
        s = ((j - 1) / unit_ball_volume(d)) ** (1 / d)
        mags = np.sqrt(D * C0**2 * np.exp(-2 * r0 * s))
        C, r = fit_spectral_prior(mags, d, D, n_fit=30)
        assert abs(C - C0) < 1e-8 and abs(r - r0) < 1e-8

    def test_two_points_interpolate(self):
        C, r = fit_spectral_prior([1.0, 0.25], 2, 2)
        s1 = (1 / unit_ball_volume(2)) ** 0.5
        assert math.isclose(2 * C**2, 1.0, rel_tol=1e-12)
        assert math.isclose(2 * C**2 * math.exp(-2 * r * s1), 0.0625, rel_tol=1e-12)

    def test_flat_response_clamps(self):
        C, r = fit_spectral_prior([0.5] * 9, 2, 4)
        assert r == 1e-3

    def test_needs_two_positive(self):
        with pytest.raises(ValueError):
            fit_spectral_prior([1.0, 0.0, 0.0], 2, 4)

    def test_reference_orbit_against_normal_equations(self, sm_example_spectrum):
        _, spec = sm_example_spectrum
        C, r = fit_spectral_prior(spec.mag, 2, spec.D)
        n = max(2, len(spec) // 3)
        s = np.sqrt(np.arange(n) / math.pi)
        X = np.column_stack([np.ones(n), s])
        y = np.log(spec.mag[:n] ** 2)
        b = np.linalg.solve(X.T @ X, X.T @ y)
        assert r > 0
        assert math.isclose(r, -b[1] / 2, rel_tol=1e-9)
        assert math.isclose(math.log(spec.D * C**2), b[0], rel_tol=1e-9, abs_tol=1e-9)
        # the strongest peak sits above the fitted line
        assert spec.mag[0] ** 2 > spec.D * C**2


class TestIslandPeriod:
    def test_third(self):
        assert detect_island_period([0.21, 0.3333333333333333]) == 3

    def test_outside_tolerance(self):
        assert detect_island_period([0.30000002]) == 1

    def test_half(self):
        assert detect_island_period([0.5 - 1e-9]) == 2

    def test_smallest_period_wins(self):
        assert detect_island_period([0.25, 0.5]) == 2

    def test_p_max(self):
        assert detect_island_period([1 / 7], p_max=6) == 1
        with pytest.raises(ValueError):
            detect_island_period([0.1], p_max=0)


class TestHelpers:
    def test_grid(self):
        g = wavenumber_grid(2, 3)
        assert g.shape == (48, 2) and not np.any(np.all(g == 0, axis=1))
        gi = wavenumber_grid(1, 2, p=3)
        assert gi.shape == (3 * 5 - 1, 2)

    def test_grid_bound(self):
        assert default_grid_bound(30, 2) == math.ceil(10 * math.sqrt(30))
        assert default_grid_bound(16, 3) == 26

    @given(st.lists(st.integers(-9, 9), min_size=9, max_size=9))
    def test_int_det(self, v):
        M = np.array(v).reshape(3, 3)
        assert int_det(M) == round(np.linalg.det(M))

    def test_labeling_transform(self):
        lab = WavenumberLabeling(np.array([[1, 2], [1, 1], [0, 5]]), np.zeros(3))
        omega = np.array([0.024873, 0.024138])
        A = np.array([[-1, 2], [1, -1]])
        new = lab.transformed(A)
        assert np.allclose(np.mod(new.k @ (A @ omega) - lab.k @ omega + 0.5, 1) - 0.5, 0, atol=1e-12)
        assert lab.is_injective()
        assert not WavenumberLabeling(np.array([[1, 0], [1, 0]]), np.zeros(2)).is_injective()


def _oracle_scores(omega, spec, prior, P, J0):
    """Score matrix over the full grid, with the exact-match restriction applied row by row."""
    grid = wavenumber_grid(len(omega), P)
    H2 = spec.mag[:J0] ** 2
    S = np.empty((J0, len(grid)))
    for j in range(J0):
        la = prior.log_alpha(H2[j], H2[-1], np.linalg.norm(grid, axis=1))
        dist = torus_distance(spec.omega[j] - grid @ omega)
        lf = prior.log_freq_likelihood(spec.omega[j], grid @ omega)
        s = la + lf
        hit = dist <= 1e3 * prior.sigma_omega
        S[j] = np.where(hit, s, -np.inf) if hit.any() else s
    return grid, S


class TestGreedy:
    def test_single_frequency(self):
        omega = np.array([0.1234567, 0.3456789])
        spec = _spectrum([_folded(omega, (1, 0))], [1.0])
        lab, _ = greedy_label(omega, spec, SpectralPrior(1.0, 3.0), 4, 1)
        assert lab.k.tolist() == [[1, 0]]

    def test_prior_consistent_labels(self):
        omega = np.array([0.1234567, 0.3456789])
        ks = [(1, 0), (0, 1), (1, 1)]
        prior = SpectralPrior(0.5, 0.4)
        mags = [math.sqrt(4 * 0.25 * math.exp(-2 * 0.4 * np.linalg.norm(k))) * (1 - 0.01 * i) for i, k in enumerate(ks)]
        spec = _spectrum([_folded(omega, k) for k in ks], mags)
        lab, total = greedy_label(omega, spec, prior, 4, 3)
        got = {tuple(k) for k in lab.k}
        assert got == {(1, 0), (0, 1), (1, 1)}
        grid, S = _oracle_scores(omega, spec, prior, 4, 3)
        rows, cols = linear_sum_assignment(-np.where(np.isfinite(S), S, -1e300))
        assert math.isclose(total, S[rows, cols].sum(), rel_tol=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 4), st.sampled_from([1e-10, 1e-3]))
    def test_greedy_matches_exhaustive(self, seed, J0, P, sigma):
        # sigma = 1e-3 with perturbed frequencies trades magnitude against frequency evidence
        rng = np.random.default_rng(seed)
        omega = rng.uniform(0, 1, 2)
        pool = [k for k in itertools.product(range(-P, P + 1), repeat=2) if k > (0, 0)]
        ks = [pool[i] for i in rng.choice(len(pool), size=J0, replace=False)]
        noise = 0.0 if sigma < 1e-6 else 2e-3
        freqs = [abs(_folded(omega, k) + noise * rng.normal()) for k in ks]
        if min(freqs) < 1e-6 or (J0 > 1 and np.min(np.diff(np.sort(freqs))) < 1e-6):
            return
        mags = np.sort(rng.uniform(0.05, 1.0, J0))[::-1]
        spec = _spectrum(freqs, mags, rng=rng)
        prior = SpectralPrior(float(rng.uniform(0.2, 1.0)), float(rng.uniform(0.05, 1.0)), sigma)
        grid, S = _oracle_scores(omega, spec, prior, P, J0)
        best_cols = np.argmax(S, axis=1)
        if len(set(best_cols)) < J0:
            return  # the unconstrained optimum reuses a label; greedy need not match
        rows, cols = linear_sum_assignment(-np.where(np.isfinite(S), S, -1e300))
        lab, total = greedy_label(omega, spec, prior, P, J0)
        assert lab.is_injective()
        assert math.isclose(total, S[rows, cols].sum(), rel_tol=1e-12, abs_tol=1e-9)

    def test_reference_orbit_labels(self, sm_example_spectrum):
        _, spec = sm_example_spectrum
        omega = np.array([spec.omega[59], spec.omega[30]])
        assert np.allclose(omega, [0.024873, 0.024138], atol=1e-6)
        C, r = fit_spectral_prior(spec.mag, 2, spec.D)
        lab, _ = greedy_label(omega, spec, SpectralPrior(C, r, 1e-10, spec.D), default_grid_bound(30, 2), 30)
        assert lab.k[11].tolist() == [1, 2]
        assert lab.k[13].tolist() == [1, 1]
        assert lab.k[0].tolist() == [0, 5]

    def test_freq_likelihood_peaks_at_match(self):
        prior = SpectralPrior(1.0, 1.0, sigma_omega=1e-4)
        x = np.linspace(-1e-3, 1e-3, 201)
        v = prior.log_freq_likelihood(0.3 + x, 0.3)
        assert np.argmax(v) == 100 and v[100] == 0.0


class TestEstimate:
    def test_circle(self):
        w = 0.2718281828
        ks = [1, 2, 3, 4]
        spec = _spectrum([_folded([w], [k]) for k in ks], [1.0, 0.4, 0.15, 0.05])
        est = estimate_rotation_vector(spec, 1, J0=4)
        assert math.isclose(est.omega[0], w, abs_tol=1e-12)
        assert est.source_rows.tolist() == [[1]] and est.det_L == 1

    def test_synthetic_two_torus(self):
        rng = np.random.default_rng(5)
        omega = np.array([0.3183098861837907, 0.1414213562373095])
        ks = [k for k in itertools.product(range(-3, 4), repeat=2) if k > (0, 0)]
        mags = [math.exp(-0.8 * sum(map(abs, k))) * rng.uniform(0.9, 1.1) for k in ks]
        spec = _spectrum([_folded(omega, k) for k in ks], mags, rng=rng)
        est = estimate_rotation_vector(spec, 2, J0=20)
        assert abs(est.det_L) == 1 and abs(int_det(est.source_rows)) == 1
        assert est.labeling.is_injective()
        # every estimated component is an integer combination of the truth, unimodular overall
        ax = np.arange(-10, 11)
        grid = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
        rows = [grid[np.argmin(torus_distance(w - grid @ omega))] for w in est.omega]
        assert all(torus_distance(w - r @ omega) < 1e-12 for w, r in zip(est.omega, rows))
        assert abs(int_det(np.array(rows))) == 1

    def test_no_valid_rotation(self):
        # two unrelated frequencies and nothing else: a 1-torus cannot explain both
        spec = _spectrum([0.1234567, 0.3141592], [1.0, 0.9])
        with pytest.raises(NoValidRotationError):
            estimate_rotation_vector(spec, 1, J0=2)

    def test_too_few_frequencies(self):
        with pytest.raises(NoValidRotationError):
            estimate_rotation_vector(_spectrum([0.1], [1.0]), 2, J0=5)

    def test_island_candidates(self):
        # period-3 chain around a circle: frequencies (n + w k) / 3
        w, p = 0.2718281828, 3
        labels = [(1, 0), (0, 1), (1, 1), (2, 1), (0, 2)]
        freqs = [min(np.mod((n + w * k) / p, 1), 1 - np.mod((n + w * k) / p, 1)) for n, k in labels]
        spec = _spectrum(freqs, [1.0, 0.6, 0.4, 0.3, 0.2])
        assert detect_island_period(spec.omega) == 3
        est = estimate_rotation_vector(spec, 1, J0=5, p=3)
        assert est.p == 3 and abs(est.det_L) == 1
        # candidate is p * Omega mod 1, equivalent to w up to sign
        assert min(torus_distance(est.omega[0] - w), torus_distance(est.omega[0] + w)) < 1e-12
