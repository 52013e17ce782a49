import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entformer.linalg import (
    DegenerateInput,
    DimensionMismatch,
    EmptyBatch,
    NoConvergence,
    NonHermitianInput,
    dagger,
    frobenius_norm,
    hermitian_distance,
    hermitian_eigenvalues,
    householder_qr,
    is_npt,
    kron,
    partial_transpose,
    qr_unitary,
)
from entformer.sampler import werner_state

BELL = np.array([1, 0, 0, 1]) / np.sqrt(2)
BELL_RHO = np.outer(BELL, BELL.conj())


def random_hermitian(rng, n):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return g + g.conj().T


def random_state(rng, n):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    w = g @ g.conj().T
    return w / np.trace(w).real


def charpoly_roots(a):
    """Eigenvalues as roots of the characteristic polynomial.

    Coefficients come from the Faddeev-LeVerrier recursion, independent of
    any eigensolver; roots from numpy's polynomial root finder.
    """
    n = a.shape[0]
    coeffs = [1.0 + 0j]
    m = np.zeros_like(a)
    for k in range(1, n + 1):
        m = a @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(a @ m) / k)
    return np.sort(np.roots(coeffs).real)


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_diagonal(self):
        np.testing.assert_array_equal(kron(np.diag([1, 0]), np.diag([0, 1])), np.diag([0, 1, 0, 0]))

    def test_entry_against_scalar_definition(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        k = kron(a, b)
        assert k.shape == (6, 6)
        assert k[4, 5] == pytest.approx(a[1, 1] * b[1, 2], abs=1e-15)
        for i, j, p, q in [(0, 1, 2, 0), (1, 0, 0, 2)]:
            assert k[i * 3 + p, j * 3 + q] == pytest.approx(a[i, j] * b[p, q], abs=1e-15)


class TestDaggerNorm:
    def test_dagger_definition(self):
        np.testing.assert_array_equal(dagger([[0, 1j], [0, 0]]), [[0, 0], [-1j, 0]])

    def test_hermitian_fixed_point_and_involution(self):
        rng = np.random.default_rng(0)
        h = random_hermitian(rng, 4)
        np.testing.assert_array_equal(dagger(h), h)
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        np.testing.assert_array_equal(dagger(dagger(a)), a)

    @pytest.mark.parametrize("mat, expected", [
        (np.zeros((3, 3)), 0.0),
        (np.eye(3), np.sqrt(3)),
        (np.array([[0, 1j], [1j, 0]]), np.sqrt(2)),
    ])
    def test_frobenius(self, mat, expected):
        assert frobenius_norm(mat) == pytest.approx(expected, abs=1e-15)


class TestPartialTranspose:
    def test_against_index_table(self):
        rho = np.arange(16).reshape(4, 4)
        np.testing.assert_array_equal(
            partial_transpose(rho, (2, 2), "A"),
            [[0, 1, 8, 9], [4, 5, 12, 13], [2, 3, 10, 11], [6, 7, 14, 15]])
        np.testing.assert_array_equal(
            partial_transpose(rho, (2, 2), "B"),
            [[0, 4, 2, 6], [1, 5, 3, 7], [8, 12, 10, 14], [9, 13, 11, 15]])

    def test_elementwise_definition_2x3(self):
        rng = np.random.default_rng(1)
        rho = random_state(rng, 6)
        pt_b = partial_transpose(rho, (2, 3), "B")
        pt_a = partial_transpose(rho, (2, 3), "A")
        for i in range(2):
            for k in range(3):
                for j in range(2):
                    for l in range(3):
                        assert pt_b[i * 3 + l, j * 3 + k] == rho[i * 3 + k, j * 3 + l]
                        assert pt_a[j * 3 + k, i * 3 + l] == rho[i * 3 + k, j * 3 + l]

    def test_maximally_mixed_invariant(self):
        np.testing.assert_array_equal(partial_transpose(np.eye(4) / 4, (2, 2)), np.eye(4) / 4)

    def test_product_state(self):
        rng = np.random.default_rng(2)
        ra, rb = random_state(rng, 2), random_state(rng, 3)
        np.testing.assert_allclose(partial_transpose(kron(ra, rb), (2, 3), "B"), kron(ra, rb.T), atol=1e-15)

    def test_bell_spectrum(self):
        lam = hermitian_eigenvalues(partial_transpose(BELL_RHO, (2, 2)))
        np.testing.assert_allclose(lam, [-0.5, 0.5, 0.5, 0.5], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            partial_transpose(np.eye(4), (2, 3))

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from([(2, 2), (2, 3), (3, 2), (3, 3)]), st.integers(0, 2 ** 32 - 1),
           st.sampled_from("AB"))
    def test_involution_trace_hermiticity(self, dims, seed, sub):
        rho = random_state(np.random.default_rng(seed), dims[0] * dims[1])
        pt = partial_transpose(rho, dims, sub)
        np.testing.assert_array_equal(partial_transpose(pt, dims, sub), rho)
        assert abs(np.trace(pt) - np.trace(rho)) <= 1e-12
        assert frobenius_norm(pt - dagger(pt)) <= 1e-12

    def test_spectra_of_both_sides_coincide(self):
        rho = random_state(np.random.default_rng(5), 6)
        np.testing.assert_allclose(
            hermitian_eigenvalues(partial_transpose(rho, (2, 3), "A")),
            hermitian_eigenvalues(partial_transpose(rho, (2, 3), "B")), atol=1e-12)


class TestEigen:
    def test_diagonal(self):
        np.testing.assert_allclose(hermitian_eigenvalues(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])

    def test_pauli_y(self):
        np.testing.assert_allclose(hermitian_eigenvalues([[0, 1j], [-1j, 0]]), [-1, 1], atol=1e-14)

    def test_trace_identity_9x9(self):
        h = random_hermitian(np.random.default_rng(9), 9)
        assert hermitian_eigenvalues(h).sum() == pytest.approx(np.trace(h).real, abs=1e-9)

    def test_reconstruction_property(self):
        rng = np.random.default_rng(4)
        for n in (2, 5, 9):
            h = random_hermitian(rng, n)
            for lam in hermitian_eigenvalues(h):
                smin = np.linalg.svd(h - lam * np.eye(n), compute_uv=False)[-1]
                assert smin <= 1e-8 * frobenius_norm(h)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
    def test_matches_characteristic_polynomial(self, n, seed):
        h = random_hermitian(np.random.default_rng(seed), n)
        np.testing.assert_allclose(hermitian_eigenvalues(h), charpoly_roots(h), atol=1e-7)

    def test_stack_matches_single(self):
        rng = np.random.default_rng(6)
        stack = np.array([random_hermitian(rng, 5) for _ in range(7)])
        np.testing.assert_array_equal(
            hermitian_eigenvalues(stack), np.array([hermitian_eigenvalues(h) for h in stack]))

    def test_degenerate_spectrum(self):
        u = qr_unitary(np.random.default_rng(8).normal(size=(6, 6)) + 0j)
        h = u @ np.diag([1.0, 1.0, 1.0, -2.0, -2.0, 5.0]) @ dagger(u)
        np.testing.assert_allclose(hermitian_eigenvalues(h), [-2, -2, 1, 1, 1, 5], atol=1e-12)

    def test_non_hermitian_rejected(self):
        with pytest.raises(NonHermitianInput):
            hermitian_eigenvalues([[0, 1], [0, 0]])

    def test_sweep_budget(self):
        h = random_hermitian(np.random.default_rng(0), 6)
        with pytest.raises(NoConvergence):
            hermitian_eigenvalues(h, max_sweeps=1)


class TestNPT:
    def test_product_state_is_ppt(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            x = rng.normal(size=3) + 1j * rng.normal(size=3)
            y = rng.normal(size=3) + 1j * rng.normal(size=3)
            psi = np.kron(x / np.linalg.norm(x), y / np.linalg.norm(y))
            npt, _ = is_npt(np.outer(psi, psi.conj()), (3, 3))
            assert not npt

    def test_bell_is_npt(self):
        npt, lam = is_npt(BELL_RHO, (2, 2))
        assert npt
        assert lam == pytest.approx(-0.5, abs=1e-12)

    def test_werner_boundary(self):
        npt, lam = is_npt(werner_state(2, 2 / 3), (2, 2))
        assert abs(lam) <= 1e-10
        assert not npt


class TestQR:
    def test_identity(self):
        np.testing.assert_allclose(qr_unitary(np.eye(3)), np.eye(3), atol=1e-15)

    def test_negative_diagonal(self):
        np.testing.assert_allclose(qr_unitary(np.diag([-2.0, 3.0])), np.diag([-1.0, 1.0]), atol=1e-15)

    def test_factorisation(self):
        rng = np.random.default_rng(11)
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        q, r = householder_qr(g)
        np.testing.assert_allclose(q @ r, g, atol=1e-13)
        np.testing.assert_array_equal(r, np.triu(r))

    def test_unitarity_and_orthonormal_columns(self):
        rng = np.random.default_rng(12)
        for n in (2, 3, 9):
            u = qr_unitary(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
            assert frobenius_norm(dagger(u) @ u - np.eye(n)) <= 1e-10
            assert np.max(np.abs(dagger(u) @ u - np.eye(n))) <= 1e-10

    def test_matches_positive_diagonal_qr(self):
        # U is the Q of the unique QR with positive real diagonal in R
        rng = np.random.default_rng(13)
        g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        u = qr_unitary(g)
        r = dagger(u) @ g
        np.testing.assert_allclose(r, np.triu(r), atol=1e-12)
        assert np.all(np.diag(r).real > 0)
        np.testing.assert_allclose(np.diag(r).imag, 0, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            qr_unitary(np.zeros((2, 2)))


class TestHermitianDistance:
    def test_hermitian_batch(self):
        rng = np.random.default_rng(14)
        assert hermitian_distance([random_hermitian(rng, 3) for _ in range(4)]) == 0.0

    def test_single(self):
        assert hermitian_distance([np.array([[0, 1j], [0, 0]])]) == pytest.approx(2 ** 0.25, abs=1e-12)

    def test_average(self):
        h = random_hermitian(np.random.default_rng(15), 2)
        got = hermitian_distance([h, np.array([[0, 1j], [0, 0]])])
        assert got == pytest.approx(2 ** 0.25 / 2, abs=1e-12)

    def test_stack_equals_list(self):
        rng = np.random.default_rng(16)
        mats = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
        assert hermitian_distance(mats) == pytest.approx(hermitian_distance(list(mats)), rel=1e-14)

    def test_empty(self):
        with pytest.raises(EmptyBatch):
            hermitian_distance([])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0, 1e-3))
    def test_zero_iff_hermitian(self, seed, eps):
        rng = np.random.default_rng(seed)
        a = random_hermitian(rng, 3)
        a[0, 1] += eps
        assert (hermitian_distance([a]) == 0) == (frobenius_norm(a - dagger(a)) <= 1e-12)
