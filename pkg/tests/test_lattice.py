import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruskit.lattice import (
    EnumerationOverflowError,
    LatticeError,
    averaged_metric,
    canonicalize_rotation,
    gram_factor,
    gram_schmidt,
    kz_reduce,
    lll_reduce,
    shortest_lattice_vector,
    unimodular_completion,
)
from toruskit.rotation_inference import SpectralPrior, WavenumberLabeling, default_grid_bound, fit_spectral_prior, greedy_label, int_det
from toruskit.spectral import FrequencySpectrum


def _ball(d, B=6):
    g = np.array(list(itertools.product(range(-B, B + 1), repeat=d)))
    return g[np.any(g != 0, axis=1)]


def _brute_min(B, radius=10):
    g = _ball(B.shape[1], radius)
    n = np.einsum("ij,ij->i", g @ B.T, g @ B.T)
    return n.min()


def random_unimodular(rng, d, steps=6):
    U = np.eye(d, dtype=np.int64)
    for _ in range(steps):
        i, j = rng.choice(d, size=2, replace=False)
        U[:, i] += int(rng.integers(-2, 3)) * U[:, j]
        if rng.random() < 0.3:
            U[:, [i, j]] = U[:, [j, i]]
    return U


def random_metric(rng, d):
    M = rng.normal(size=(d, d))
    G = M.T @ M + 0.05 * np.eye(d)
    # skew it with a unimodular change of basis so reduction has work to do
    U = random_unimodular(rng, d)
    return U.T @ G @ U


def check_kz(G, A, B_ball=6):
    """Brute-force KZ certificate for the columns of ``B A^{-1}``."""
    B = gram_factor(G)
    U = np.rint(np.linalg.inv(A)).astype(np.int64)
    BU = B @ U
    d = BU.shape[1]
    Bs, mu = gram_schmidt(BU)
    assert np.max(np.abs(mu), initial=0) <= 0.5 + 1e-10
    # the i-th Gram-Schmidt vector is shortest in the projection orthogonal to the first i basis vectors
    for i in range(d):
        Q, _ = np.linalg.qr(BU[:, :i]) if i else (np.zeros((d, 0)), None)
        P = np.eye(d) - Q @ Q.T
        proj = P @ BU[:, i:]
        g = _ball(d - i, B_ball)
        norms = np.einsum("ij,ij->i", g @ proj.T, g @ proj.T)
        keep = norms > 1e-12 * np.trace(G)
        assert Bs[:, i] @ Bs[:, i] <= norms[keep].min() * (1 + 1e-9)


class TestAveragedMetric:
    def test_single_mode(self):
        sp = FrequencySpectrum(np.zeros(1), np.array([0.1]), np.array([[2.0 + 0j]]))
        with pytest.warns(RuntimeWarning, match="rank deficient"):
            G = averaged_metric(sp, WavenumberLabeling(np.array([[1, 0]]), np.zeros(1)))
        assert np.allclose(G, [[4, 0], [0, 0]])

    def test_two_modes(self):
        sp = FrequencySpectrum(np.zeros(1), np.array([0.1, 0.2]), np.array([[3.0 + 0j], [1.0 + 0j]]))
        G = averaged_metric(sp, WavenumberLabeling(np.array([[0, 1], [1, 0]]), np.zeros(2)))
        assert np.allclose(G, np.diag([1, 9]))

    def test_reference_orbit(self, sm_example_spectrum):
        _, spec = sm_example_spectrum
        omega = np.array([spec.omega[59], spec.omega[30]])
        C, r = fit_spectral_prior(spec.mag, 2, spec.D)
        lab, _ = greedy_label(omega, spec, SpectralPrior(C, r, 1e-10, spec.D), default_grid_bound(30, 2), 30)
        G = averaged_metric(spec, lab)
        oracle = np.zeros((2, 2))
        for j in range(30):
            k = lab.k[j].astype(float)
            oracle += spec.mag[j] ** 2 * np.outer(k, k)
        assert np.allclose(G, oracle, rtol=1e-13)
        # motion is dominated by the second generator
        assert G[1, 1] > 5 * G[0, 0]


class TestSVP:
    def test_identity(self):
        assert shortest_lattice_vector(np.eye(2)).tolist() == [1, 0]

    def test_diag(self):
        assert shortest_lattice_vector(np.diag([5.0, 1.0])).tolist() == [0, 1]

    def test_sheared(self):
        B = np.array([[1, 0.9], [0, 0.5]])
        k = shortest_lattice_vector(B)
        assert np.isclose(np.sum((B @ k) ** 2), _brute_min(B))
        assert k.tolist() == [-1, 1] or k.tolist() == [1, -1]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 3))
    def test_random_against_brute_force(self, seed, d):
        rng = np.random.default_rng(seed)
        B = gram_factor(random_metric(rng, d))
        k = shortest_lattice_vector(B)
        assert np.any(k != 0)
        assert np.sum((B @ k) ** 2) <= _brute_min(B, 6) * (1 + 1e-9)

    def test_singular(self):
        with pytest.raises(LatticeError):
            shortest_lattice_vector(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_budget(self):
        B = np.diag([1.0, 1.0, 1.0, 1.0])
        with pytest.raises(EnumerationOverflowError):
            shortest_lattice_vector(B, budget=3)


class TestLLL:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_unimodular_and_same_lattice(self, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(3, 3))
        BU, U = lll_reduce(B)
        assert abs(int_det(U)) == 1
        assert np.allclose(B @ U, BU)
        _, mu = gram_schmidt(BU)
        assert np.max(np.abs(mu)) <= 0.5 + 1e-9


class TestCompletion:
    @given(st.lists(st.integers(-20, 20), min_size=3, max_size=3))
    def test_primitive(self, v):
        v = np.array(v)
        if not np.any(v) or np.gcd.reduce(np.abs(v)) != 1:
            return
        V = unimodular_completion(v)
        assert V[:, 0].tolist() == v.tolist()
        assert abs(int_det(V)) == 1

    def test_non_primitive(self):
        with pytest.raises(ValueError):
            unimodular_completion([2, 4])


class TestKZ:
    def test_identity(self):
        assert np.array_equal(kz_reduce(np.eye(2)), np.eye(2, dtype=int))
        assert np.array_equal(kz_reduce(np.eye(3)), np.eye(3, dtype=int))

    def test_already_reduced(self):
        assert np.array_equal(kz_reduce(np.diag([1.0, 4.0])), np.eye(2, dtype=int))

    def test_recovers_hidden_diagonal(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            U = random_unimodular(rng, 2)
            G = U.T @ np.diag([1.0, 4.0]) @ U
            A = kz_reduce(G)
            Ui = np.rint(np.linalg.inv(A)).astype(np.int64)
            assert np.allclose(Ui.T @ G @ Ui, np.diag([1.0, 4.0]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 3))
    def test_certificate(self, seed, d):
        G = random_metric(np.random.default_rng(seed), d)
        A = kz_reduce(G)
        assert abs(int_det(A)) == 1
        check_kz(G, A)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 3))
    def test_profile_invariance(self, seed, d):
        rng = np.random.default_rng(seed)
        G = random_metric(rng, d)
        U = random_unimodular(rng, d)

        B = gram_factor(G)

        def profile(basis):
            # lengths measured with the factor of G itself, so both sides share one conditioning
            Bs, _ = gram_schmidt(B @ basis)
            return np.linalg.norm(Bs, axis=0)

        direct = np.rint(np.linalg.inv(kz_reduce(G)))
        skewed = U @ np.rint(np.linalg.inv(kz_reduce(U.T @ G @ U)))
        assert np.allclose(profile(direct), profile(skewed), rtol=1e-9)

    def test_semidefinite_gets_ridge(self):
        A = kz_reduce(np.diag([1.0, 0.0]))
        assert abs(int_det(A)) == 1

    def test_asymmetric(self):
        with pytest.raises(LatticeError):
            kz_reduce(np.array([[1.0, 0.3], [0.0, 1.0]]))


class TestCanonicalize:
    def test_flip(self):
        A, w = canonicalize_rotation(np.eye(2, dtype=int), [0.7, 0.2])
        assert np.allclose(w, [0.3, 0.2])
        assert A.tolist() == [[-1, 0], [0, 1]]

    def test_boundary(self):
        A, w = canonicalize_rotation(np.eye(2, dtype=int), [0.5, 0.5])
        assert np.allclose(w, [0.5, 0.5]) and A.tolist() == [[1, 0], [0, 1]]

    @given(st.integers(0, 2**31))
    def test_range_and_consistency(self, seed):
        rng = np.random.default_rng(seed)
        A0 = random_unimodular(rng, 3)
        omega = rng.uniform(0, 1, 3)
        A, w = canonicalize_rotation(A0, omega)
        assert abs(int_det(A)) == 1
        assert np.all((w >= 0) & (w <= 0.5))
        assert np.allclose(np.mod(A @ omega - w + 0.5, 1) - 0.5, 0, atol=1e-12)

    def test_rejects_singular(self):
        with pytest.raises(ValueError):
            canonicalize_rotation([[1, 1], [1, 1]], [0.1, 0.2])
