import numpy as np
import pytest

from diffeoflow import kernels
from diffeoflow.kernels import KernelSpec

import oracles

# frozen: (1 + 6 + 15 + 15)/15 * exp(-1), from the reversed Bessel recurrence
MATERN3_AT_ONE = 0.9074359548895577


def scalar_specs():
    return [kernels.gaussian(0.8), kernels.matern(1.3, order=1),
            kernels.matern(0.6, order=3), kernels.matern(1.0, order=4)]


def graph_spec(radial="matern"):
    return kernels.graph_diagonal(
        0.9, [(0, 1), (1, 2), (0, 2)], radial=radial, order=3)


def all_specs():
    return scalar_specs() + [graph_spec("matern"), graph_spec("gaussian")]


class TestReversedBessel:
    def test_matches_closed_form(self):
        for k in range(6):
            np.testing.assert_allclose(kernels.reversed_bessel(k),
                                       oracles.reversed_bessel_explicit(k))

    def test_base_cases(self):
        assert list(kernels.reversed_bessel(0)) == [1.0]
        assert list(kernels.reversed_bessel(1)) == [1.0, 1.0]
        assert list(kernels.reversed_bessel(3)) == [15.0, 15.0, 6.0, 1.0]

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            kernels.reversed_bessel(-1)


class TestEvalScalar:
    def test_gaussian_at_zero(self):
        assert kernels.eval_scalar(kernels.gaussian(1.0), 0.0) == 1.0

    def test_gaussian_at_sqrt2(self):
        val = kernels.eval_scalar(kernels.gaussian(1.0), np.sqrt(2.0))
        np.testing.assert_allclose(val, np.exp(-1.0), rtol=1e-15)

    def test_matern3_frozen_value(self):
        val = kernels.eval_scalar(kernels.matern(1.0, order=3), 1.0)
        np.testing.assert_allclose(val, MATERN3_AT_ONE, rtol=1e-15)
        np.testing.assert_allclose(val, (37.0 / 15.0) * np.exp(-1.0), rtol=1e-15)

    def test_normalization_exact(self):
        for spec in scalar_specs():
            assert kernels.eval_scalar(spec, 0.0) == 1.0

    def test_vectorized(self):
        spec = kernels.matern(0.7, order=2)
        r = np.array([0.0, 0.3, 1.5])
        vals = kernels.eval_scalar(spec, r)
        for i in range(3):
            assert vals[i] == kernels.eval_scalar(spec, float(r[i]))

    def test_underflow_flush(self):
        assert kernels.eval_scalar(kernels.gaussian(1.0), 60.0) == 0.0

    def test_rejects_bad_r(self):
        spec = kernels.gaussian(1.0)
        with pytest.raises(ValueError):
            kernels.eval_scalar(spec, -0.1)
        with pytest.raises(ValueError):
            kernels.eval_scalar(spec, np.nan)

    def test_rejects_graph(self):
        with pytest.raises(ValueError):
            kernels.eval_scalar(graph_spec(), 1.0)


class TestSpecValidation:
    def test_bad_rho(self):
        for rho in (0.0, -1.0, np.nan):
            with pytest.raises(ValueError):
                KernelSpec("gaussian", rho)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            KernelSpec("matern", 1.0, order=0)

    def test_bad_family(self):
        with pytest.raises(ValueError):
            KernelSpec("cubic", 1.0)

    def test_graph_needs_neighborhoods(self):
        with pytest.raises(ValueError):
            KernelSpec("graph", 1.0)

    def test_graph_empty_neighborhood(self):
        with pytest.raises(ValueError):
            kernels.graph_diagonal(1.0, [(0,), ()])

    def test_graph_index_out_of_range(self):
        with pytest.raises(ValueError):
            kernels.graph_diagonal(1.0, [(0,), (2,)])

    def test_neighborhoods_rejected_on_scalar(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 1.0, neighborhoods=((0,),))

    def test_bad_affine_weights(self):
        with pytest.raises(ValueError):
            kernels.gaussian(1.0, affine_weights=(0.0, 1.0))


class TestEvalMatrix:
    def test_gaussian_self_identity(self):
        x = np.array([0.3, -1.2])
        np.testing.assert_array_equal(
            kernels.eval_matrix(kernels.gaussian(1.0), x, x), np.eye(2))

    def test_graph_example(self):
        spec = kernels.graph_diagonal(1.0, [(0,), (1,)], radial="gaussian")
        K = kernels.eval_matrix(spec, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(K, np.diag([np.exp(-0.5), 1.0]), rtol=1e-15)

    def test_symmetry_all_families(self):
        rng = np.random.default_rng(0)
        for spec in all_specs():
            x, y = rng.standard_normal((2, 3))
            np.testing.assert_array_equal(kernels.eval_matrix(spec, x, y),
                                          kernels.eval_matrix(spec, y, x).T)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernels.eval_matrix(kernels.gaussian(1.0),
                                np.zeros(2), np.zeros(3))
        with pytest.raises(ValueError):
            kernels.eval_matrix(graph_spec(), np.zeros(2), np.zeros(2))

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        shift = rng.standard_normal(3)
        for spec in scalar_specs():
            x, y = rng.standard_normal((2, 3))
            np.testing.assert_allclose(
                kernels.eval_matrix(spec, q @ x + shift, q @ y + shift),
                kernels.eval_matrix(spec, x, y), atol=1e-12)


class TestApplyField:
    def test_zero_momenta(self):
        rng = np.random.default_rng(2)
        centers = rng.standard_normal((4, 3))
        out = kernels.apply_field(kernels.matern(1.0), centers,
                                  np.zeros((4, 3)), rng.standard_normal((2, 3)))
        np.testing.assert_array_equal(out, np.zeros((2, 3)))

    def test_single_center_identity(self):
        z = np.array([[0.5, -0.5]])
        a = np.array([[2.0, 3.0]])
        out = kernels.apply_field(kernels.gaussian(1.0), z, a, z)
        np.testing.assert_array_equal(out, a)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(3)
        for spec in all_specs():
            centers = rng.standard_normal((3, 3))
            momenta = rng.standard_normal((3, 3))
            queries = rng.standard_normal((2, 3))
            np.testing.assert_allclose(
                kernels.apply_field(spec, centers, momenta, queries),
                oracles.apply_field_loops(spec, centers, momenta, queries),
                atol=1e-13)

    def test_deterministic_rerun(self):
        rng = np.random.default_rng(4)
        centers = rng.standard_normal((30, 4))
        momenta = rng.standard_normal((30, 4))
        queries = rng.standard_normal((17, 4))
        spec = kernels.matern(0.9)
        first = kernels.apply_field(spec, centers, momenta, queries)
        second = kernels.apply_field(spec, centers, momenta, queries)
        np.testing.assert_array_equal(first, second)

    def test_shape_errors(self):
        spec = kernels.gaussian(1.0)
        with pytest.raises(ValueError):
            kernels.apply_field(spec, np.zeros((3, 2)), np.zeros((2, 2)),
                                np.zeros((1, 2)))
        with pytest.raises(ValueError):
            kernels.apply_field(spec, np.zeros((3, 2)), np.zeros((3, 2)),
                                np.zeros((1, 3)))


class TestGramInner:
    def test_zero(self):
        rng = np.random.default_rng(5)
        pts = rng.standard_normal((4, 2))
        w = rng.standard_normal((4, 2))
        assert kernels.gram_inner(kernels.gaussian(1.0), pts,
                                  np.zeros((4, 2)), w) == 0.0

    def test_single_point_norm(self):
        a = np.array([[1.5, -2.0]])
        val = kernels.gram_inner(kernels.gaussian(1.0),
                                 np.array([[0.0, 0.0]]), a, a)
        np.testing.assert_allclose(val, 1.5 ** 2 + 2.0 ** 2, rtol=1e-15)

    def test_matches_explicit_gram(self):
        rng = np.random.default_rng(6)
        for spec in all_specs():
            pts = rng.standard_normal((4, 3))
            u = rng.standard_normal((4, 3))
            w = rng.standard_normal((4, 3))
            G = oracles.gram_matrix_loops(spec, pts)
            expected = u.ravel() @ G @ w.ravel()
            np.testing.assert_allclose(
                kernels.gram_inner(spec, pts, u, w), expected, rtol=1e-12)
            np.testing.assert_allclose(kernels.gram_matrix(spec, pts), G,
                                       atol=1e-14)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(7)
        for spec in all_specs():
            pts = rng.standard_normal((5, 3))
            u = rng.standard_normal((5, 3))
            w = rng.standard_normal((5, 3))
            np.testing.assert_allclose(kernels.gram_inner(spec, pts, u, w),
                                       kernels.gram_inner(spec, pts, w, u),
                                       rtol=1e-12)
            assert kernels.gram_inner(spec, pts, u, u) >= 0.0

    def test_consistency_with_apply_field(self):
        rng = np.random.default_rng(8)
        for spec in all_specs():
            pts = rng.standard_normal((6, 3))
            u = rng.standard_normal((6, 3))
            w = rng.standard_normal((6, 3))
            via_field = float(np.sum(u * kernels.apply_field(spec, pts, w, pts)))
            direct = kernels.gram_inner(spec, pts, u, w)
            np.testing.assert_allclose(direct, via_field,
                                       rtol=1e-10, atol=1e-12)


class TestAffineKernel:
    def test_orthogonal_gives_identity(self):
        K = kernels.eval_affine_kernel(1.0, 1.0, np.array([1.0, 0.0]),
                                       np.array([0.0, 2.0]))
        np.testing.assert_array_equal(K, np.eye(2))

    def test_example_value(self):
        x = np.array([1.0, 1.0])
        K = kernels.eval_affine_kernel(2.0, 4.0, x, x)
        np.testing.assert_allclose(K, 1.25 * np.eye(2), rtol=1e-15)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(9)
        x, y = rng.standard_normal((2, 4))
        np.testing.assert_allclose(kernels.eval_affine_kernel(0.5, 3.0, x, y),
                                   kernels.eval_affine_kernel(0.5, 3.0, y, x),
                                   rtol=1e-15)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            kernels.eval_affine_kernel(-1.0, 1.0, np.zeros(2), np.zeros(2))


class TestPositiveSemidefinite:
    @pytest.mark.parametrize("seed", range(3))
    def test_gram_psd_all_families(self, seed):
        rng = np.random.default_rng(100 + seed)
        for spec in all_specs():
            n = rng.integers(2, 21)
            pts = rng.standard_normal((n, 3)) * rng.uniform(0.2, 3.0)
            eig = np.linalg.eigvalsh(kernels.gram_matrix(spec, pts))
            assert eig[0] >= -1e-8 * max(eig[-1], 1e-30)


class TestRadialSlope:
    def test_matches_finite_differences(self):
        h = 1e-6
        for spec in all_specs():
            for r in (0.1, 0.4, 1.0, 2.7):
                fd = (kernels._kappa(spec, r + h)
                      - kernels._kappa(spec, r - h)) / (2 * h * r)
                np.testing.assert_allclose(kernels._eta(spec, r), fd,
                                           rtol=1e-6, atol=1e-12)

    def test_value_at_zero(self):
        # Gaussian: -1/rho^2; Matern order k: -1/((2k-1) rho^2)
        assert kernels._eta(kernels.gaussian(2.0), 0.0) == -0.25
        for k in (1, 2, 3, 4):
            spec = kernels.matern(1.5, order=k)
            np.testing.assert_allclose(kernels._eta(spec, 0.0),
                                       -1.0 / ((2 * k - 1) * 1.5 ** 2),
                                       rtol=1e-15)


class TestGridNeighborhoods:
    def test_small_grid(self):
        nbs = kernels.grid_neighborhoods(2, 2, radius=1)
        assert len(nbs) == 4
        assert set(nbs[0]) == {0, 1, 2, 3}

    def test_interior_patch(self):
        nbs = kernels.grid_neighborhoods(3, 3, radius=1)
        assert set(nbs[4]) == set(range(9))
        assert set(nbs[0]) == {0, 1, 3, 4}
