import numpy as np
import pytest

from oracles import double_factorial as df_oracle
from transgp.covmodel import exponential_model
from transgp.errors import CenteringMismatch, MehlerInversionUnavailable
from transgp.fieldsim import (FieldSample, Transform, apply_transform, double_factorial, latent_covariance_from_square,
                              latent_factor, simulate_latent, transformed_covariance)
from transgp.locations import LocationSet, perturbed_grid

MODEL = exponential_model()
THETA0 = np.array([1.5, 2.0])


def test_double_factorial():
    for k in range(0, 12):
        assert double_factorial(k) == df_oracle(k)
    assert double_factorial(5) == 15


class TestTransform:
    def test_identity_unchanged(self):
        z = np.array([-1.0, 0.0, 2.5])
        np.testing.assert_array_equal(Transform.identity()(z), z)

    def test_square_centered_value(self):
        assert Transform.square_centered(1.5)(np.array([0.0]))[0] == -1.5

    def test_even_monomial_centering(self):
        for r in range(1, 5):
            assert Transform.even_monomial(r).centering == df_oracle(2 * r - 1)
        assert Transform.even_monomial(1, 1.5) == Transform.square_centered(1.5)

    def test_even_monomial_zero_mean(self):
        z = np.random.default_rng(0).standard_normal(400_000)
        y = Transform.even_monomial(2)(z)  # z^4 - 3
        assert abs(y.mean()) < 4 * y.std() / np.sqrt(z.size)

    def test_custom_declared_unchecked(self):
        t = Transform.custom(np.exp, centering=np.exp(0.5))
        assert not t.declared_admissible
        assert t(np.array([0.0]))[0] == pytest.approx(1.0 - np.exp(0.5))


class TestSimulation:
    def test_deterministic(self):
        ls = perturbed_grid(5, 2, 0.4, seed=1)
        a = simulate_latent(MODEL, THETA0, ls, seed=3, replicate=2)
        b = simulate_latent(MODEL, THETA0, ls, seed=3, replicate=2)
        assert np.array_equal(a.values, b.values)
        c = simulate_latent(MODEL, THETA0, ls, seed=3, replicate=3)
        assert not np.array_equal(a.values, c.values)

    def test_factor_reuse_identical(self):
        ls = perturbed_grid(4, 2, 0.4, seed=1)
        f = latent_factor(MODEL, THETA0, ls)
        a = simulate_latent(MODEL, THETA0, ls, seed=0, replicate=7, factor=f)
        b = simulate_latent(MODEL, THETA0, ls, seed=0, replicate=7)
        assert np.array_equal(a.values, b.values)

    def test_single_site_variance(self):
        ls = LocationSet(np.zeros((1, 2)))
        f = latent_factor(MODEL, [4.0, 1.0], ls)
        vals = np.array([simulate_latent(MODEL, [4.0, 1.0], ls, seed=0, replicate=r, factor=f).values[0]
                         for r in range(100_000)])
        assert 3.8 <= vals.var() <= 4.2

    def test_grid_marginal_variance_and_zero_mean(self):
        ls = perturbed_grid(10, 2, 0.4, seed=0)
        f = latent_factor(MODEL, THETA0, ls)
        t = Transform.square_centered(1.5)
        Z = np.array([simulate_latent(MODEL, THETA0, ls, seed=11, replicate=r, factor=f).values
                      for r in range(2500)])
        lag0 = (Z**2).mean(axis=0)
        # per-site SE of Z^2 mean is sqrt(2) * 1.5 / 50; pooled check over 100 sites
        assert abs(lag0.mean() - 1.5) < 4 * np.sqrt(2) * 1.5 / 50
        Y = t(Z)
        se = Y.std(axis=0, ddof=1) / np.sqrt(2500)
        assert np.all(np.abs(Y.mean(axis=0)) < 4 * se)
        assert abs(Y.mean()) < 3 * Y.std() / np.sqrt(2500)  # conservative: sites positively correlated

    def test_provenance_complete(self):
        ls = perturbed_grid(3, 2, 0.4, seed=1)
        z = simulate_latent(MODEL, THETA0, ls, seed=5, replicate=1)
        for key in ("seed", "replicate", "latent_family", "latent_theta", "latent_variance", "transform"):
            assert key in z.provenance
        assert z.provenance["latent_variance"] == 1.5


class TestApplyTransform:
    def test_centering_mismatch(self):
        ls = perturbed_grid(3, 2, 0.4, seed=1)
        z = simulate_latent(MODEL, THETA0, ls)
        with pytest.raises(CenteringMismatch):
            apply_transform(z, Transform.square_centered(1.0))

    def test_preserves_locations_and_order(self):
        ls = perturbed_grid(3, 2, 0.4, seed=1)
        z = simulate_latent(MODEL, THETA0, ls)
        y = apply_transform(z, Transform.square_centered(1.5))
        assert y.locations is z.locations
        np.testing.assert_array_equal(y.values, z.values**2 - 1.5)
        assert y.provenance["transform"]["kind"] == "square_centered"
        ident = apply_transform(z, Transform.identity())
        np.testing.assert_array_equal(ident.values, z.values)

    def test_csv_roundtrip(self, tmp_path):
        ls = perturbed_grid(3, 2, 0.4, seed=1)
        y = apply_transform(simulate_latent(MODEL, THETA0, ls, seed=2), Transform.square_centered(1.5))
        path = tmp_path / "s.csv"
        y.to_csv(path)
        back = FieldSample.from_csv(path)
        assert np.array_equal(back.values, y.values)
        assert np.array_equal(back.locations.points, ls.points)
        assert back.provenance == y.provenance
        assert "index,x1,x2,value" in path.read_text()


class TestTransformedCovariance:
    def test_reference_setup_values(self):
        _, theta = transformed_covariance(MODEL, THETA0, Transform.square_centered(1.5))
        np.testing.assert_array_equal(theta, [4.5, 1.0])

    def test_identity(self):
        m, theta = transformed_covariance(MODEL, THETA0, Transform.identity())
        assert m is MODEL
        np.testing.assert_array_equal(theta, THETA0)

    def test_unavailable(self):
        assert transformed_covariance(MODEL, THETA0, Transform.even_monomial(2, 1.5)) is None
        assert transformed_covariance(MODEL, THETA0, Transform.custom(np.abs)) is None

    @pytest.mark.parametrize("lag", [0.1, 0.5, 1.0, 2.0])
    def test_mehler_monte_carlo(self, lag):
        # exponential(1, 1) -> exponential(2, 0.5); at lag 1 the covariance is 2 e^-2
        _, theta_y = transformed_covariance(MODEL, [1.0, 1.0], Transform.square_centered(1.0))
        np.testing.assert_array_equal(theta_y, [2.0, 0.5])
        c = np.exp(-lag)
        gen = np.random.default_rng(123)
        L = np.linalg.cholesky(np.array([[1.0, c], [c, 1.0]]))
        z = gen.standard_normal((100_000, 2)) @ L.T
        y = z**2 - 1.0
        prod = (y[:, 0] - y[:, 0].mean()) * (y[:, 1] - y[:, 1].mean())
        target = MODEL.family.k(theta_y, lag)
        assert target == pytest.approx(2 * c**2, rel=1e-14)
        assert abs(prod.mean() - target) < 3 * prod.std() / np.sqrt(prod.size)

    def test_mehler_inversion(self):
        ls = perturbed_grid(4, 2, 0.4, seed=0)
        kz = latent_covariance_from_square(MODEL, [4.5, 1.0], ls)
        np.testing.assert_allclose(kz, MODEL.cov_matrix(THETA0, ls), rtol=1e-14)

    def test_mehler_inversion_negative(self):
        class Neg:
            def cov_matrix(self, theta, ls):
                return np.array([[1.0, -0.1], [-0.1, 1.0]])

        with pytest.raises(MehlerInversionUnavailable):
            latent_covariance_from_square(Neg(), None, None)
