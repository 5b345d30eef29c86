import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_diff
from transgp import linalg
from transgp.covmodel import (CovarianceFamily, CovarianceModel, Exponential, ParamBox, exponential_model,
                              get_family, register_family)
from transgp.errors import NoVarianceSplit, ParamOutOfBox, UnsupportedOrder
from transgp.locations import LocationSet, perturbed_grid, regular_grid

E = np.exp(-1.0)


@pytest.fixture
def model():
    return exponential_model()


class TestEval:
    def test_zero_lag(self, model):
        assert model.eval([1.5, 2.0], [0.0, 0.0]) == 1.5

    def test_one_range_unit(self, model):
        assert model.eval([1.5, 2.0], [1.2, 1.6]) == pytest.approx(1.5 * E, rel=1e-15)

    def test_symmetric_in_lag(self, model):
        lag = np.array([0.3, -1.7])
        assert model.eval([2.0, 0.7], lag) == model.eval([2.0, 0.7], -lag)

    def test_out_of_box(self, model):
        with pytest.raises(ParamOutOfBox):
            model.eval([100.0, 1.0], [0.0, 0.0])

    def test_decreasing_in_lag(self, model):
        h = np.linspace(0, 10, 50)
        k = model.family.k(np.array([1.5, 2.0]), h)
        assert np.all(np.diff(k) < 0)


class TestDerivatives:
    def test_examples(self, model):
        theta = [1.5, 2.0]
        assert model.eval_deriv(theta, [0.0, 0.0], 0) == 1.0
        assert model.eval_deriv(theta, [0.0, 0.0], 1) == 0.0
        assert model.eval_deriv(theta, [2.0, 0.0], 1) == pytest.approx(0.75 * E, rel=1e-14)
        fd = central_diff(lambda t: model.family.k(t, 2.0), np.array(theta), 1e-6)
        assert fd[1] == pytest.approx(0.75 * E, rel=1e-8)

    def test_unsupported_order(self, model):
        with pytest.raises(UnsupportedOrder):
            model.eval_deriv([1.5, 2.0], [1.0, 0.0], (0, 1, 1))
        with pytest.raises(UnsupportedOrder):
            model.deriv_matrices([1.5, 2.0], perturbed_grid(2, 2), order=3)

    @settings(max_examples=60, deadline=None)
    @given(s2=st.floats(0.1, 20.0), rho=st.floats(0.1, 10.0), h=st.floats(0.0, 15.0))
    def test_first_and_second_derivatives_match_fd(self, s2, rho, h):
        fam = Exponential()
        theta = np.array([s2, rho])
        step = 1e-6 * theta
        g = fam.grad(theta, h)
        fd = central_diff(lambda t: fam.k(t, h), theta, step)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9 * s2)
        H = fam.hess(theta, h)
        fdH = np.array([central_diff(lambda t, i=i: fam.grad(t, h)[i], theta, step) for i in range(2)])
        np.testing.assert_allclose(H, fdH, rtol=1e-5, atol=1e-7 * max(1.0, s2))
        k, g2 = fam.k_and_grad(theta, h)
        assert k == fam.k(theta, h)
        np.testing.assert_allclose(np.stack(g2), g, rtol=1e-14)


class TestMatrices:
    def test_single_point(self, model):
        ls = LocationSet(np.array([[0.0, 0.0]]))
        np.testing.assert_array_equal(model.cov_matrix([1.5, 2.0], ls), [[1.5]])
        np.testing.assert_array_equal(model.deriv_matrices([1.5, 2.0], ls)[1], [[0.0]])

    def test_two_points_one_range_apart(self, model):
        ls = LocationSet(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert model.cov_matrix([1.5, 2.0], ls)[0, 1] == pytest.approx(1.5 * E, rel=1e-15)

    def test_grid_positive_definite(self, model):
        ls = perturbed_grid(10, 2, 0.4, seed=0)
        lo, _ = linalg.extreme_eigenvalues(model.cov_matrix([1.5, 2.0], ls))
        assert lo > 1e-8

    def test_variance_derivative_is_correlation(self, model):
        ls = perturbed_grid(4, 2, 0.4, seed=1)
        np.testing.assert_array_equal(model.deriv_matrices([1.5, 2.0], ls)[0], model.correlation_matrix([2.0], ls))

    def test_deriv_matrices_match_fd(self, model):
        ls = regular_grid(3, 2)
        ls = LocationSet(ls)
        theta = np.array([1.5, 2.0])
        d1 = model.deriv_matrices(theta, ls, 1)
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6
            fd = (model.cov_matrix(theta + e, ls) - model.cov_matrix(theta - e, ls)) / 2e-6
            np.testing.assert_allclose(d1[i], fd, atol=1e-6)
        d2 = model.deriv_matrices(theta, ls, 2)
        assert len(d2) == 3
        for (i, j), m in zip([(0, 0), (0, 1), (1, 1)], d2):
            e = np.zeros(2)
            e[j] = 1e-6
            fd = (model.deriv_matrices(theta + e, ls)[i] - model.deriv_matrices(theta - e, ls)[i]) / 2e-6
            np.testing.assert_allclose(m, fd, atol=1e-6)

    def test_matrices_exactly_symmetric(self, model):
        ls = perturbed_grid(6, 2, 0.4, seed=2)
        for m in [model.cov_matrix([1.5, 2.0], ls), *model.deriv_matrices([1.5, 2.0], ls, 2)]:
            assert np.array_equal(m, m.T)


class TestSplit:
    def test_examples(self, model):
        s2, psi = model.correlation_split([1.5, 2.0])
        assert s2 == 1.5 and psi.tolist() == [2.0]
        s2, psi = model.correlation_split([4.5, 1.0])
        assert s2 == 4.5 and psi.tolist() == [1.0]

    def test_reconstruction(self, model):
        ls = perturbed_grid(5, 2, 0.4, seed=4)
        theta = np.array([4.5, 1.0])
        s2, psi = model.correlation_split(theta)
        np.testing.assert_allclose(s2 * model.correlation_matrix(psi, ls), model.cov_matrix(theta, ls),
                                   rtol=1e-14, atol=0)
        np.testing.assert_array_equal(model.join(s2, psi), theta)

    def test_cv_box_checked(self, model):
        with pytest.raises(ParamOutOfBox):
            model.correlation_matrix([20.0], perturbed_grid(2, 2))

    def test_no_variance_split(self):
        class Shape(Exponential):
            name = "shape_only"
            variance_index = None

        m = CovarianceModel(Shape(), ParamBox([0.1, 0.1], [10.0, 10.0]))
        with pytest.raises(NoVarianceSplit):
            m.correlation_split([1.0, 1.0])


class TestBoxAndRegistry:
    def test_box_validation(self):
        with pytest.raises(ValueError):
            ParamBox([1.0], [1.0])
        with pytest.raises(ValueError):
            ParamBox([0.0], [np.inf])

    def test_at_boundary(self):
        box = ParamBox([0.1, 0.1], [10.0, 10.0])
        assert box.at_boundary([0.1, 5.0]) and not box.at_boundary([5.0, 5.0])

    def test_register_requires_derivatives(self):
        class Broken(CovarianceFamily):
            name = "broken"
            param_names = ("a",)

            def k(self, theta, h):
                return np.exp(-h)

        with pytest.raises(TypeError):
            register_family(Broken())

    def test_register_and_lookup(self):
        class Renamed(Exponential):
            name = "exponential_copy"

        register_family(Renamed())
        assert get_family("exponential_copy").name == "exponential_copy"
        with pytest.raises(KeyError):
            get_family("matern_nonexistent")

    def test_square_roundtrip(self):
        fam = Exponential()
        np.testing.assert_array_equal(fam.square([1.5, 2.0]), [4.5, 1.0])
        np.testing.assert_allclose(fam.unsquare(fam.square([1.5, 2.0])), [1.5, 2.0], rtol=1e-15)

    def test_identifiability_gap(self, model):
        ls = perturbed_grid(4, 2, 0.4, seed=0)
        assert model.identifiability_gap([1.5, 2.0], [1.5, 2.0], ls) == 0.0
        assert model.identifiability_gap([1.0, 2.0], [1.5, 2.0], ls) > 0.0
