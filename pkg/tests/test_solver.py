import math

import numpy as np
import pytest

from prefect_rbf_fmm.exceptions import MemoryCapError, NonConvergenceError
from prefect_rbf_fmm.fmm import direct_matvec
from prefect_rbf_fmm.flows import COLLOCATION_REFERENCE
from prefect_rbf_fmm.geometry import PointSet, generate_quasiuniform
from prefect_rbf_fmm.kernels import parse_kernel_spec
from prefect_rbf_fmm.solver import (
    Backend,
    InterpolationProblem,
    SigmaPolicy,
    SpectralDiagnostics,
    assemble_dense,
    backend_operator,
    best_collocation_sigma,
    default_collocation_sigma,
    diagnostics_frame,
    fit_condition_bound,
    interpolant,
    solve_collocation_1d,
    solve_interpolation,
    spectral_diagnostics,
)
from prefect_rbf_fmm.utilities import generator


@pytest.fixture
def integer_points():
    return PointSet.from_points(np.arange(32.0))


@pytest.fixture
def problem(gaussian, integer_points):
    rhs = np.sin(0.3 * integer_points.points[:, 0])
    return InterpolationProblem(
        kernel=gaussian, ps=integer_points, rhs=rhs, sigma=3 * math.pi, m_per_dim=256
    )


class TestAssembleDense:
    def test_symmetric(self, imq, unit_points):
        matrix = assemble_dense(imq, unit_points, threads=3)
        np.testing.assert_array_equal(matrix, matrix.T)
        np.testing.assert_allclose(np.diag(matrix), 1.0)

    def test_cap(self, imq, unit_points):
        with pytest.raises(MemoryCapError):
            assemble_dense(imq, unit_points, max_n=10)

    def test_band_limited_needs_sigma(self, imq, unit_points):
        with pytest.raises(ValueError):
            assemble_dense(imq, unit_points, band_limited=True)

    def test_wide_band_is_the_kernel(self, gaussian, integer_points):
        exact = assemble_dense(gaussian, integer_points)
        banded = assemble_dense(
            gaussian, integer_points, band_limited=True, sigma=40.0
        )
        np.testing.assert_array_equal(banded, banded.T)
        np.testing.assert_allclose(banded, exact, atol=1e-8)


class TestInterpolationProblem:
    def test_sample_count(self, gaussian, integer_points):
        with pytest.raises(ValueError):
            InterpolationProblem(kernel=gaussian, ps=integer_points, rhs=np.ones(3))

    def test_finite_samples(self, gaussian, integer_points):
        rhs = np.ones(integer_points.n)
        rhs[4] = np.nan
        with pytest.raises(ValueError):
            InterpolationProblem(kernel=gaussian, ps=integer_points, rhs=rhs)

    def test_leaf_level_floor(self, gaussian, integer_points):
        with pytest.raises(ValueError):
            InterpolationProblem(
                kernel=gaussian,
                ps=integer_points,
                rhs=np.ones(integer_points.n),
                leaf_level=1,
            )


class TestSolveInterpolation:
    def test_dense_uses_cg(self, problem):
        solution = solve_interpolation(problem)
        assert solution.method == "cg"
        assert solution.backend == Backend.DENSE
        assert solution.residual <= 10 * problem.tol
        assert 0 < solution.iterations <= problem.ps.n + 2
        values = interpolant(
            problem.kernel, problem.ps, solution.lam, problem.ps.points[:, 0]
        )
        np.testing.assert_allclose(values, problem.rhs, atol=1e-6)

    def test_single_level_backend_agrees_with_dense(self, problem):
        dense = solve_interpolation(problem)
        fast = solve_interpolation(problem.copy(update={"backend": Backend.SINGLE_FMM}))
        assert fast.backend == Backend.SINGLE_FMM
        assert fast.backend_residual <= 10 * problem.tol
        np.testing.assert_allclose(fast.lam, dense.lam, atol=1e-5)

    def test_backend_operator_is_reusable(self, problem):
        product = backend_operator(problem)
        v = np.ones(problem.ps.n)
        np.testing.assert_array_equal(product(v), product(v))

    def test_conditionally_positive_kernels_use_gmres(self):
        ps = PointSet.from_points(np.arange(10.0))
        prob = InterpolationProblem(
            kernel=parse_kernel_spec("mq:c=1"), ps=ps, rhs=np.cos(ps.points[:, 0])
        )
        solution = solve_interpolation(prob)
        assert solution.method == "gmres"
        assert solution.residual <= 10 * prob.tol

    @pytest.mark.parametrize("backend", [Backend.DENSE, Backend.SINGLE_FMM])
    def test_residual_is_measured_with_the_direct_sum(self, problem, backend):
        prob = problem.copy(update={"backend": backend})
        solution = solve_interpolation(prob)
        direct = direct_matvec(prob.kernel, prob.ps, solution.lam).values
        residual = np.linalg.norm(direct - prob.rhs) / np.linalg.norm(prob.rhs)
        assert solution.residual == pytest.approx(residual, rel=1e-12, abs=1e-12)
        assert solution.backend_residual <= 10 * prob.tol
        if backend == Backend.DENSE:
            assert abs(solution.residual - solution.backend_residual) <= 1e-12

    def test_zero_samples(self, problem):
        zero = problem.copy(update={"rhs": np.zeros(problem.ps.n)})
        solution = solve_interpolation(zero)
        assert solution.iterations == 0
        assert not np.any(solution.lam)

    def test_non_convergence(self, imq, unit_points, unit_weights):
        prob = InterpolationProblem(
            kernel=imq, ps=unit_points, rhs=unit_weights, tol=1e-12, max_iter=1
        )
        with pytest.raises(NonConvergenceError) as info:
            solve_interpolation(prob)
        assert info.value.iterations >= 1
        assert info.value.residual > 1e-12


def test_interpolant_accepts_columns(gaussian, integer_points):
    lam = np.zeros(integer_points.n)
    lam[0] = 1.0
    values = interpolant(gaussian, integer_points, lam, np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(values, [1.0, math.exp(-1.0)])


def test_default_collocation_sigma():
    assert default_collocation_sigma(9) == pytest.approx(32 * math.pi)


class TestCollocation:
    def test_needs_five_nodes(self, mq):
        with pytest.raises(ValueError):
            solve_collocation_1d(4, mq)

    @pytest.mark.parametrize("n", [9, 12, 15])
    def test_error_matches_reference(self, mq, n):
        result = solve_collocation_1d(n, mq)
        assert not result.band_limited
        assert result.sigma is None
        reference = COLLOCATION_REFERENCE[n]
        assert reference / 10 < result.rms < reference * 10
        assert result.condition > 1

    def test_solution_on_the_lattice(self, mq):
        result = solve_collocation_1d(11, mq, lattice_size=101)
        assert result.lattice.shape == (101,)
        np.testing.assert_allclose(
            result.solution, np.sin(math.pi * result.lattice), atol=1e-3
        )

    def test_band_limited_uses_the_default_bandwidth(self, mq):
        result = solve_collocation_1d(9, mq, band_limited=True)
        assert result.band_limited
        assert result.sigma == pytest.approx(default_collocation_sigma(9))

    def test_best_bandwidth_tracks_the_plain_error(self, mq):
        plain, best = best_collocation_sigma(9, mq)
        assert not plain.band_limited
        assert best.band_limited
        assert best.rms < 10 * plain.rms


class TestSpectralDiagnostics:
    def test_bounds_hold(self, gaussian):
        ps = PointSet.from_points(np.arange(16.0))
        diagnostics = spectral_diagnostics(gaussian, ps)
        assert diagnostics.separation == pytest.approx(0.5)
        assert diagnostics.sigma == pytest.approx(4 * math.pi)
        assert 0 < diagnostics.gamma_min <= diagnostics.gamma_max
        assert diagnostics.cond == pytest.approx(
            diagnostics.gamma_max / diagnostics.gamma_min
        )
        assert diagnostics.bound_holds
        assert diagnostics.gershgorin_holds
        assert diagnostics.tau is None

    def test_roundoff_below_a_vanishing_bound(self):
        diagnostics = SpectralDiagnostics(
            gamma_min=-9e-15,
            gamma_max=40.0,
            cond=math.inf,
            bound_gamma_min=0.0,
            bound_gamma_max=64.0,
            bound_cond=math.inf,
            tau=1.0,
            sigma=400.0,
            separation=0.015,
            kappa=6.0,
            n=64,
        )
        assert diagnostics.bound_holds
        assert not diagnostics.resolved
        assert not diagnostics.copy(update={"gamma_min": -1e-9}).bound_holds

    @pytest.mark.parametrize("seed", range(4))
    def test_imq_on_the_unit_interval(self, imq, seed):
        n = int(generator(seed).integers(8, 65))
        ps = generate_quasiuniform(n, (0.0, 1.0), seed=seed, jitter=0.4)
        diagnostics = spectral_diagnostics(imq, ps)
        assert diagnostics.n == n
        assert diagnostics.tau == 1.0
        assert diagnostics.bound_holds
        assert diagnostics.gershgorin_holds

    def test_pi_policy(self, gaussian):
        ps = PointSet.from_points(np.arange(16.0))
        diagnostics = spectral_diagnostics(gaussian, ps, SigmaPolicy.PI)
        assert diagnostics.sigma == pytest.approx(math.pi)
        assert diagnostics.kappa == pytest.approx(math.pi * ps.mesh_norm)

    def test_cap(self, gaussian):
        ps = generate_quasiuniform(2049, (0.0, 1.0))
        with pytest.raises(MemoryCapError):
            spectral_diagnostics(gaussian, ps)

    def test_frame(self, gaussian):
        ps = PointSet.from_points(np.arange(8.0))
        frame = diagnostics_frame(
            {
                "pi": spectral_diagnostics(gaussian, ps, SigmaPolicy.PI),
                "two_pi_over_q": spectral_diagnostics(gaussian, ps),
            }
        )
        assert list(frame["label"]) == ["pi", "two_pi_over_q"]
        assert {"gamma_min", "bound_gamma_min", "bound_holds"} <= set(frame.columns)


class TestFitConditionBound:
    def test_exact_power_law(self):
        q = np.array([0.1, 0.05, 0.025])
        fit = fit_condition_bound(q, 7.0 * q**-3.0, tau=1.5)
        assert fit.slope == pytest.approx(3.0)
        assert fit.constant == pytest.approx(7.0)
        assert fit.within

    def test_steeper_growth_is_flagged(self):
        q = np.array([0.1, 0.05, 0.025])
        fit = fit_condition_bound(q, q**-6.0, tau=1.5)
        assert not fit.within

    def test_rejects_decay_order(self):
        with pytest.raises(ValueError):
            fit_condition_bound([0.1, 0.05], [1.0, 2.0], tau=0.0)
