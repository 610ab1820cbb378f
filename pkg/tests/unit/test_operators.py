"""
Unit tests for the normalization field, extensions and the discrete Poisson solve
"""

import math

import numpy as np
import pytest

from pimspec.services.assembly import assemble_pencil
from pimspec.services.eigensolve import solve_spectrum
from pimspec.services.kernels import normalization_constant
from pimspec.services.operators import (
    KernelField, apply_solution_operator, extend_eigenvector, extend_mode, poisson_solve,
    project_compatible, smooth_field, w_field,
)
from pimspec.services.pointcloud import PointCloud
from pimspec.utils.error_handlers import (
    DimensionMismatchError, PoissonConvergenceError, UnsupportedQueryPointError, ValidationError,
)


class TestKernelField:
    """Test cases for kernel sums at arbitrary points"""

    def test_w_two_points(self, kernel):
        """Test w at a point between two samples"""
        cloud = PointCloud([[0.0], [0.1]], [0.5, 2.0], 1)
        t = 0.01
        c_t = normalization_constant(t, 1)
        expected = c_t * (kernel.R(0.0009 / 0.04) * 0.5 + kernel.R(0.0049 / 0.04) * 2.0)
        assert w_field(cloud, kernel, t, [0.03]) == pytest.approx(expected)

    def test_scalar_and_batch_queries(self, interval_cloud, kernel):
        """Test a single point returns a float and a batch returns an array"""
        field = KernelField(interval_cloud, kernel, 0.005)
        single = field.w([1.0])
        batch = field.w(np.array([[1.0], [2.0]]))
        assert isinstance(single, float)
        assert batch.shape == (2,)
        assert batch[0] == pytest.approx(single)

    def test_flat_vector_in_one_dimension_is_a_batch(self, interval_cloud, kernel):
        """Test a 1-D array of coordinates on a line is read as many points"""
        field = KernelField(interval_cloud, kernel, 0.005)
        assert field.w(np.array([0.5, 1.0, 1.5])).shape == (3,)

    def test_unsupported_point(self, interval_cloud, kernel):
        """Test a query outside every support raises"""
        with pytest.raises(UnsupportedQueryPointError) as excinfo:
            w_field(interval_cloud, kernel, 0.005, [[1.0], [10.0]])
        assert excinfo.value.payload['unsupported_points'] == [1]

    def test_dimension_mismatch(self, circle_cloud, kernel):
        """Test 3-D queries against a planar cloud are rejected"""
        with pytest.raises(DimensionMismatchError):
            w_field(circle_cloud, kernel, 0.005, [[1.0, 0.0, 0.0]])

    def test_smooth_reproduces_constants(self, circle_cloud, kernel):
        """Test smoothing a constant gives the constant"""
        x = np.array([[1.0, 0.0], [0.0, 1.02], [-0.7, -0.7]])
        values = smooth_field(circle_cloud, kernel, 0.005, np.full(circle_cloud.n, 2.5), x)
        assert np.allclose(values, 2.5, rtol=1e-13)

    def test_smooth_linear_on_line(self, interval_cloud, kernel):
        """Test smoothing x at interior points returns x"""
        u = interval_cloud.points[:, 0]
        x = np.array([[1.0], [1.337], [2.5]])
        assert np.allclose(smooth_field(interval_cloud, kernel, 0.005, u, x), x[:, 0], atol=1e-6)

    def test_wrong_sample_vector(self, interval_cloud, kernel):
        """Test sample vectors must have length n"""
        with pytest.raises(DimensionMismatchError):
            smooth_field(interval_cloud, kernel, 0.005, np.ones(3), [[1.0]])


class TestExtension:
    """Test cases for off-sample eigenvector extension"""

    def test_interpolates_at_samples(self, interval_pencil):
        """Test the extension reproduces each eigenvector at the samples"""
        spectrum = solve_spectrum(interval_pencil, 5)
        points = interval_pencil.cloud.points
        for mode in range(5):
            u = spectrum.vectors[:, mode]
            extended = extend_mode(interval_pencil, spectrum, mode, points)
            assert np.allclose(extended, u, atol=1e-8 * np.abs(u).max())

    def test_interpolates_on_circle(self, circle_cloud, kernel):
        """Test exact interpolation on a 2-D ambient cloud"""
        pencil = assemble_pencil(circle_cloud, kernel, 0.005)
        spectrum = solve_spectrum(pencil, 4)
        u = spectrum.vectors[:, 3]
        extended = extend_eigenvector(circle_cloud, kernel, 0.005, u, -spectrum.mu[3], circle_cloud.points)
        assert np.allclose(extended, u, atol=1e-8 * np.abs(u).max())

    def test_smooth_between_samples(self, interval_pencil):
        """Test the extended first mode follows cos(x) off the grid"""
        spectrum = solve_spectrum(interval_pencil, 2)
        x = np.linspace(0.3, math.pi - 0.3, 17)[:, None]
        extended = extend_mode(interval_pencil, spectrum, 1, x)
        grid = extend_mode(interval_pencil, spectrum, 1, interval_pencil.cloud.points)
        scale = np.abs(grid).max()
        assert np.allclose(extended / scale, np.sign(grid[0]) * np.cos(x[:, 0]), atol=0.05)

    def test_linearity(self, interval_cloud, kernel):
        """Test I(a u + b v) = a I(u) + b I(v)"""
        rng = np.random.default_rng(0)
        u, v = rng.standard_normal((2, interval_cloud.n))
        x = np.array([[0.4], [1.7], [3.0]])
        field = KernelField(interval_cloud, kernel, 0.005)
        combined = field.extend(2.0 * u - 3.0 * v, -4.0, x)
        separate = 2.0 * field.extend(u, -4.0, x) - 3.0 * field.extend(v, -4.0, x)
        assert np.allclose(combined, separate, atol=1e-12 * np.abs(separate).max())

    def test_zero_eigenvalue_is_smoothing(self, interval_cloud, kernel):
        """Test lambda = 0 reduces to the kernel average"""
        u = np.sin(interval_cloud.points[:, 0])
        x = np.array([[0.2], [1.1]])
        field = KernelField(interval_cloud, kernel, 0.005)
        assert np.array_equal(field.extend(u, 0.0, x), field.smooth(u, x))

    def test_mode_out_of_range(self, interval_pencil):
        """Test extending a mode the spectrum does not hold"""
        spectrum = solve_spectrum(interval_pencil, 2)
        with pytest.raises(ValidationError):
            extend_mode(interval_pencil, spectrum, 2, [[1.0]])


class TestPoissonSolve:
    """Test cases for the discrete Neumann Poisson problem"""

    def test_zero_right_side(self, interval_pencil):
        """Test f = 0 gives u = 0"""
        solution = poisson_solve(interval_pencil, np.zeros(interval_pencil.n))
        assert np.array_equal(solution.u, np.zeros(interval_pencil.n))

    def test_constant_right_side_projects_to_zero(self, interval_pencil):
        """Test a constant f is removed by the compatibility projection"""
        solution = poisson_solve(interval_pencil, np.full(interval_pencil.n, 3.0))
        assert np.abs(solution.u).max() < 1e-10
        assert np.abs(solution.rhs_f).max() < 1e-12

    def test_solution_satisfies_system(self, interval_pencil):
        """Test A u = -B f with zero weighted mean"""
        x = interval_pencil.cloud.points[:, 0]
        f = np.cos(x)
        solution = poisson_solve(interval_pencil, f)
        B = interval_pencil.B
        assert abs(float(solution.u @ interval_pencil.weights)) < 1e-12
        assert np.allclose(interval_pencil.A @ solution.u, -(B @ solution.rhs_f), atol=1e-9 * np.abs(B @ f).max())
        assert solution.residual < 1e-9

    def test_approximates_neumann_solution(self, interval_pencil):
        """Test u'' = cos(x) on [0, pi] gives u close to -cos(x)"""
        x = interval_pencil.cloud.points[:, 0]
        solution = poisson_solve(interval_pencil, np.cos(x))
        assert np.allclose(solution.u, -np.cos(x), atol=0.1)

    def test_cg_matches_direct(self, interval_pencil):
        """Test the iterative and direct solvers agree"""
        f = np.cos(2.0 * interval_pencil.cloud.points[:, 0])
        direct = poisson_solve(interval_pencil, f, method='direct')
        iterative = poisson_solve(interval_pencil, f, method='cg', tol=1e-12)
        assert iterative.iterations > 0
        assert np.allclose(direct.u, iterative.u, atol=1e-7 * np.abs(direct.u).max())

    def test_cg_iteration_cap(self, interval_pencil):
        """Test a too small iteration cap raises PoissonConvergenceError"""
        f = np.cos(interval_pencil.cloud.points[:, 0])
        with pytest.raises(PoissonConvergenceError) as excinfo:
            poisson_solve(interval_pencil, f, method='cg', max_iter=2)
        assert excinfo.value.payload['iterations'] == 2

    def test_unknown_method(self, interval_pencil):
        """Test an unknown method name is rejected"""
        with pytest.raises(ValidationError):
            poisson_solve(interval_pencil, np.ones(interval_pencil.n), method='gmres')

    def test_wrong_length(self, interval_pencil):
        """Test the right side must have length n"""
        with pytest.raises(DimensionMismatchError):
            poisson_solve(interval_pencil, np.ones(5))

    def test_project_compatible(self, interval_pencil):
        """Test projected data has zero B-weighted sum"""
        f = np.exp(interval_pencil.cloud.points[:, 0])
        g = project_compatible(interval_pencil, f)
        ones = np.ones(interval_pencil.n)
        assert abs(float(ones @ (interval_pencil.B @ g))) < 1e-10 * float(ones @ (interval_pencil.B @ f))


class TestSolutionOperator:
    """Test cases for the off-sample solution operator"""

    def test_equals_poisson_solution_at_samples(self, interval_pencil):
        """Test T(f)(p_i) = u_i"""
        f = np.cos(interval_pencil.cloud.points[:, 0])
        solution = poisson_solve(interval_pencil, f)
        values = apply_solution_operator(interval_pencil, f, interval_pencil.cloud.points, solution=solution)
        assert np.allclose(values, solution.u, atol=1e-8 * np.abs(solution.u).max())

    def test_solves_when_no_solution_given(self, interval_pencil):
        """Test the operator solves the Poisson problem itself"""
        f = np.cos(interval_pencil.cloud.points[:, 0])
        value = apply_solution_operator(interval_pencil, f, [1.0])
        assert value == pytest.approx(-math.cos(1.0), abs=0.1)
