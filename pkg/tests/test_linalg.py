import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transgp import linalg
from transgp.errors import DimensionMismatch, NotPositiveDefinite

TWO_BY_TWO = np.array([[2.0, 1.0], [1.0, 2.0]])


def random_spd(n, seed, cond=1e3):
    gen = np.random.default_rng(seed)
    q, _ = np.linalg.qr(gen.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (q * w) @ q.T


class TestCholesky:
    def test_identity(self):
        f = linalg.cholesky(np.eye(3))
        np.testing.assert_array_equal(f.lower, np.eye(3))
        assert f.logdet == 0.0
        assert f.jitter_applied == 0.0

    def test_diagonal(self):
        f = linalg.cholesky(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(f.lower, np.diag([2.0, 3.0]))
        assert f.logdet == pytest.approx(np.log(36.0), rel=1e-14)

    def test_two_by_two_logdet(self):
        assert linalg.cholesky(TWO_BY_TWO).logdet == pytest.approx(np.log(3.0), rel=1e-14)

    def test_lower_triangular(self):
        f = linalg.cholesky(random_spd(6, 1))
        assert np.all(np.triu(f.lower, 1) == 0.0)

    def test_jitter_escalation_recorded(self):
        # rank-deficient PSD matrix: fails unjittered, succeeds at some rung
        v = np.ones((4, 1))
        m = v @ v.T
        f = linalg.cholesky(m)
        assert f.jitter_applied > 0.0
        assert f.jitter_applied in {d * 1.0 for d in (1e-10, 1e-8, 1e-6)}
        np.testing.assert_allclose(f.reconstruct(), m + f.jitter_applied * np.eye(4), atol=1e-12)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            linalg.cholesky(np.diag([1.0, -1.0]))

    def test_no_jitter_policy_fails_fast(self):
        with pytest.raises(NotPositiveDefinite):
            linalg.cholesky(np.ones((3, 3)), linalg.NO_JITTER)

    def test_non_square(self):
        with pytest.raises(DimensionMismatch):
            linalg.cholesky(np.ones((2, 3)))

    def test_asymmetric_input_is_symmetrized(self):
        m = TWO_BY_TWO.copy()
        m[0, 1] += 1e-3
        f = linalg.cholesky(m)
        np.testing.assert_allclose(f.reconstruct(), linalg.symmetrize(m), rtol=1e-14)


class TestSolveInverse:
    def test_solve_identity(self):
        np.testing.assert_array_equal(linalg.solve(linalg.cholesky(np.eye(3)), [1.0, 2.0, 3.0]), [1, 2, 3])

    def test_solve_scalar(self):
        np.testing.assert_allclose(linalg.solve(linalg.cholesky([[4.0]]), [8.0]), [2.0])

    def test_solve_two_by_two(self):
        np.testing.assert_allclose(linalg.solve(linalg.cholesky(TWO_BY_TWO), [3.0, 3.0]), [1.0, 1.0], rtol=1e-14)

    def test_solve_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            linalg.solve(linalg.cholesky(np.eye(3)), np.ones(2))

    def test_inverse_examples(self):
        np.testing.assert_array_equal(linalg.inverse(linalg.cholesky(np.eye(4))), np.eye(4))
        np.testing.assert_allclose(linalg.inverse(linalg.cholesky(np.diag([2.0, 4.0]))), np.diag([0.5, 0.25]))
        np.testing.assert_allclose(linalg.inverse(linalg.cholesky(TWO_BY_TWO)),
                                   np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0, rtol=1e-14)

    def test_inverse_exactly_symmetric(self):
        inv = linalg.inverse(linalg.cholesky(random_spd(30, 3)))
        assert np.array_equal(inv, inv.T)

    def test_inverse_ill_conditioned(self):
        m = random_spd(40, 4, cond=1e8)
        inv = linalg.inverse(linalg.cholesky(m))
        np.testing.assert_allclose(inv @ m, np.eye(40), atol=1e-6)


class TestEigen:
    def test_examples(self):
        assert linalg.extreme_eigenvalues(np.diag([1.0, 5.0])) == pytest.approx((1.0, 5.0))
        assert linalg.extreme_eigenvalues(np.eye(10)) == pytest.approx((1.0, 1.0))
        assert linalg.extreme_eigenvalues(TWO_BY_TWO) == pytest.approx((1.0, 3.0), rel=1e-14)

    def test_brackets_rayleigh_quotients(self):
        m = random_spd(25, 5) - 3.0 * np.eye(25)
        lo, hi = linalg.extreme_eigenvalues(m)
        gen = np.random.default_rng(0)
        for _ in range(100):
            v = gen.standard_normal(25)
            v /= np.linalg.norm(v)
            q = v @ m @ v
            assert lo - 1e-10 <= q <= hi + 1e-10

    def test_lanczos_branch(self, monkeypatch):
        monkeypatch.setattr(linalg, "DENSE_EIG_MAX_ORDER", 10)
        m = np.diag(np.linspace(0.5, 7.0, 60))
        lo, hi = linalg.extreme_eigenvalues(m, tol=1e-12)
        assert lo == pytest.approx(0.5, rel=1e-8) and hi == pytest.approx(7.0, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 200), seed=st.integers(0, 2**31 - 1))
def test_random_spd_residuals(n, seed):
    m = random_spd(n, seed)
    f = linalg.cholesky(m)
    assert f.jitter_applied == 0.0
    scale = np.linalg.norm(m)
    assert np.linalg.norm(f.reconstruct() - m) / scale <= 1e-10
    b = np.random.default_rng(seed + 1).standard_normal(n)
    x = linalg.solve(f, b)
    assert np.linalg.norm(m @ x - b) / np.linalg.norm(b) <= 1e-8
    inv = linalg.inverse(f)
    assert np.max(np.abs(inv @ m - np.eye(n))) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2**31 - 1))
def test_logdet_matches_eigenvalues(n, seed):
    m = random_spd(n, seed)
    expected = float(np.sum(np.log(np.linalg.eigvalsh(m))))
    assert linalg.logdet(m) == pytest.approx(expected, rel=1e-8, abs=1e-10)
    assert linalg.cholesky(m).logdet == pytest.approx(2.0 * np.sum(np.log(np.diag(linalg.cholesky(m).lower))))
