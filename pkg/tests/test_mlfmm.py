import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from prefect_rbf_fmm.bandlimit import (
    lowrank_eval,
    make_quadrature,
    translation_coefficients,
)
from prefect_rbf_fmm.exceptions import ConfigurationError, TreeTooDeepError
from prefect_rbf_fmm.fmm import (
    Expansion,
    ExpansionKind,
    SumRequest,
    far_field_reference,
)
from prefect_rbf_fmm.flows import LAGRANGE_STENCILS, LAGRANGE_REFERENCE
from prefect_rbf_fmm.geometry import build_tree, generate_quasiuniform
from prefect_rbf_fmm.kernels import eval_kernel, parse_kernel_spec
from prefect_rbf_fmm.mlfmm import (
    COARSEST_LEVEL,
    GridMode,
    build_level_grids,
    count_translations,
    couple,
    dump_expansions,
    lagrange_matrix,
    lagrange_sup_error,
    mlfmm_matvec,
    multilevel_runner,
    scaled_lowrank_eval,
    upsweep,
)
from prefect_rbf_fmm.utilities import generator


def _relative_error(values, reference):
    return float(np.max(np.abs(values - reference)) / np.max(np.abs(reference)))


class TestLagrangeMatrix:
    def test_rows_sum_to_one(self):
        nodes = np.linspace(-math.pi, math.pi, 16)
        matrix = lagrange_matrix(nodes, np.linspace(-2.0, 2.0, 33), 6)
        np.testing.assert_allclose(np.asarray(matrix.sum(axis=1)).ravel(), 1.0)
        assert matrix.shape == (33, 16)
        assert np.all(np.diff(matrix.indptr) == 6)

    @pytest.mark.parametrize("k", [2, 4, 7])
    def test_reproduces_polynomials(self, k):
        nodes = np.linspace(-1.0, 1.0, 12)
        targets = np.linspace(-1.0, 1.0, 41) * 0.97
        polynomial = np.polynomial.Polynomial(np.arange(1.0, k + 1.0))
        interpolated = lagrange_matrix(nodes, targets, k) @ polynomial(nodes)
        np.testing.assert_allclose(
            interpolated, polynomial(targets), rtol=1e-10, atol=1e-10
        )

    def test_nodes_give_unit_rows(self):
        nodes = np.linspace(0.0, 1.0, 5)
        matrix = lagrange_matrix(nodes, nodes, 3).toarray()
        np.testing.assert_allclose(matrix, np.eye(5))

    def test_rejects_unordered_nodes(self):
        with pytest.raises(ValueError):
            lagrange_matrix(np.array([0.0, 0.0, 1.0]), np.array([0.5]), 2)

    @pytest.mark.parametrize("k", [0, 6])
    def test_rejects_stencil(self, k):
        with pytest.raises(ValueError):
            lagrange_matrix(np.linspace(0.0, 1.0, 5), np.array([0.5]), k)


class TestLagrangeSupError:
    def test_decreases_with_the_stencil(self):
        errors = [lagrange_sup_error(k) for k in LAGRANGE_STENCILS]
        assert all(later < earlier for earlier, later in zip(errors, errors[1:]))

    @pytest.mark.parametrize("k", LAGRANGE_STENCILS)
    def test_matches_reference_values(self, k):
        reference = LAGRANGE_REFERENCE[k]
        assert reference / 5 <= lagrange_sup_error(k) <= reference * 5

    def test_grows_with_the_box(self):
        assert lagrange_sup_error(8, a=2.0) > lagrange_sup_error(8, a=1.0)


class TestLevelGrids:
    def test_scaled_mode(self, imq):
        grids = build_level_grids(imq, math.pi, 16, 4)
        assert list(grids.levels) == [2, 3, 4]
        for level in grids.levels:
            grid = grids.grids[level]
            assert grid.m_per_dim == 16
            scale = 2 ** (level - COARSEST_LEVEL)
            assert grid.sigma == pytest.approx(math.pi * scale)
            assert grids.factors[level].band == math.pi
        assert grids.weight_ratio(4) == pytest.approx(0.5)
        assert grids.transfers[4].shape == (16, 16)

    def test_nonscaled_mode(self, imq):
        grids = build_level_grids(imq, math.pi, 16, 4, mode=GridMode.NONSCALED)
        counts = [grids.grids[level].m_per_dim for level in grids.levels]
        assert counts == [64, 32, 16]
        assert all(grids.grids[level].sigma == math.pi for level in grids.levels)
        assert grids.weight_ratio(3) == pytest.approx(0.5)
        assert grids.transfers[3].shape == (64, 32)

    def test_two_dimensional_transfers(self, gaussian):
        grids = build_level_grids(gaussian, math.pi, 8, 3, d=2, k=4)
        assert grids.transfers[3].shape == (64, 64)

    def test_spectrum_vanishes_outside_the_band(self, imq):
        grids = build_level_grids(imq, math.pi, 16, 4)
        leaf = grids.grids[4]
        outside = np.abs(leaf.nodes[:, 0]) > math.pi * (1 + 1e-9)
        assert np.all(grids.factors[4].c_vals[outside] == 0)

    def test_rejects_odd_node_count(self, imq):
        with pytest.raises(ConfigurationError):
            build_level_grids(imq, math.pi, 15, 4)

    @pytest.mark.parametrize("leaf_level,k", [(1, 10), (4, 1)])
    def test_rejects(self, imq, leaf_level, k):
        with pytest.raises(ValueError):
            build_level_grids(imq, math.pi, 16, leaf_level, k=k)

    def test_kernel_without_far_field(self):
        with pytest.raises(ConfigurationError):
            build_level_grids(parse_kernel_spec("tps:beta=2"), math.pi, 16, 3)


def _zero_node(grid):
    return int(np.argmin(np.abs(grid.nodes).sum(axis=1)))


class TestTransferInvariants:
    @pytest.fixture
    def tree(self, unit_points):
        return build_tree(unit_points, 4)

    @pytest.fixture
    def grids(self, imq):
        return build_level_grids(imq, math.pi, 16, 4)

    @pytest.mark.parametrize("mode", list(GridMode))
    @pytest.mark.parametrize("d", [1, 2])
    def test_weights_tile_every_level(self, gaussian, mode, d):
        grids = build_level_grids(gaussian, math.pi, 8, 4, d=d, mode=mode)
        for level in grids.levels:
            grid = grids.grids[level]
            assert grid.weights.sum() == pytest.approx((2 * grid.sigma) ** d, rel=1e-12)

    @pytest.mark.parametrize("mode", list(GridMode))
    def test_anterpolation_is_the_adjoint(self, imq, mode):
        grids = build_level_grids(imq, math.pi, 16, 4, mode=mode)
        rng = generator(21)
        for level, transfer in grids.transfers.items():
            rows, columns = transfer.shape
            u = rng.standard_normal(columns) + 1j * rng.standard_normal(columns)
            v = rng.standard_normal(rows) + 1j * rng.standard_normal(rows)
            forward = np.vdot(v, transfer @ u)
            adjoint = np.vdot(transfer.T @ v, u)
            scale = np.linalg.norm(u) * np.linalg.norm(v)
            assert abs(forward - adjoint) <= 1e-12 * scale

    @pytest.mark.parametrize("mode", list(GridMode))
    def test_zero_frequency_is_conserved_upward(self, imq, tree, unit_points, mode):
        grids = build_level_grids(imq, math.pi, 16, 4, mode=mode)
        weights = generator(22).standard_normal(unit_points.n)
        multipoles = upsweep(tree, grids, weights, unit_points.points)
        for level in range(tree.leaf_level, COARSEST_LEVEL, -1):
            child = multipoles[level].coeffs[:, _zero_node(grids.grids[level])]
            parent = multipoles[level - 1].coeffs[:, _zero_node(grids.grids[level - 1])]
            expected = np.zeros(len(parent), complex)
            np.add.at(expected, tree.level(level).parents(), child)
            np.testing.assert_allclose(parent, expected, rtol=1e-12, atol=1e-12)
        top = multipoles[COARSEST_LEVEL].coeffs[:, _zero_node(grids.grids[2])]
        assert top.sum() == pytest.approx(weights.sum(), rel=1e-12, abs=1e-12)

    def test_coupling_is_diagonal(self, tree, grids, unit_points, unit_weights):
        multipoles = upsweep(tree, grids, unit_weights, unit_points.points)
        before = couple(tree, grids, multipoles)
        node = grids.grids[3].size // 2 + 1
        coeffs = multipoles[3].coeffs.copy()
        coeffs[0, node] += 1.0
        perturbed = dict(multipoles)
        perturbed[3] = Expansion(
            level=3, kind=ExpansionKind.MULTIPOLE, coeffs=coeffs
        )
        after = couple(tree, grids, perturbed)
        change = np.abs(after[3].coeffs - before[3].coeffs)
        np.testing.assert_array_equal(np.delete(change, node, axis=1), 0.0)
        assert np.any(change[:, node] > 0)
        for level in (2, 4):
            np.testing.assert_array_equal(after[level].coeffs, before[level].coeffs)


def _ancestor(tree, box, level):
    for finer in range(tree.leaf_level, level, -1):
        box = tree.level(finer).parents()[box]
    return box


def _chained_sum(tree, grids, points, weights, kernel, target):
    """
    The multilevel sum at one target, built pair by pair from the same
    transfer matrices: leaf aggregation, transfers up to the level where the
    two boxes interact, coupling, transposed transfers down and evaluation.
    """
    leaf = tree.leaf_level
    target_box = tree.point_boxes[target]
    total = 0.0
    for source, weight in enumerate(weights):
        source_box = tree.point_boxes[source]
        if source_box in tree.leaf.neighbors(target_box):
            distance = np.linalg.norm(points[target] - points[source])
            total += weight * eval_kernel(kernel, distance)
            continue
        level = next(
            level
            for level in grids.levels
            if _ancestor(tree, source_box, level)
            in tree.level(level).interactions(_ancestor(tree, target_box, level))
        )
        depths = range(level, leaf + 1)
        centers = {depth: tree.level(depth).centers for depth in depths}
        nodes = {depth: grids.grids[depth].nodes for depth in depths}

        child = source_box
        vector = np.exp(1j * nodes[leaf] @ (centers[leaf][child] - points[source]))
        for finer in range(leaf, level, -1):
            parent = tree.level(finer).parents()[child]
            shift = centers[finer - 1][parent] - centers[finer][child]
            vector = np.exp(1j * nodes[finer - 1] @ shift) * (
                grids.transfers[finer] @ vector
            )
            child = parent

        box = _ancestor(tree, target_box, level)
        shift = centers[level][box] - centers[level][child]
        coupling = grids.factors[level].c_vals * np.exp(1j * nodes[level] @ shift)
        vector = coupling * vector
        for finer in range(level + 1, leaf + 1):
            below = _ancestor(tree, target_box, finer)
            shift = centers[finer][below] - centers[finer - 1][box]
            shifted = np.exp(1j * nodes[finer - 1] @ shift) * vector
            vector = grids.weight_ratio(finer) * (grids.transfers[finer].T @ shifted)
            box = below
        offset = points[target] - centers[leaf][target_box]
        phases = grids.grids[leaf].weights * np.exp(1j * nodes[leaf] @ offset)
        total += weight * float(np.sum(phases * vector).real)
    return total


class TestMultilevel:
    @pytest.fixture
    def request_1d(self, imq, unit_points, unit_weights):
        return SumRequest(
            kernel=imq,
            sigma=math.pi,
            ps=unit_points,
            weights=unit_weights,
            m_per_dim=16,
        )

    def test_matches_the_chained_transfers(self, request_1d):
        tree = build_tree(request_1d.ps, 4)
        grids = build_level_grids(request_1d.kernel, math.pi, 16, 4, k=16)
        result = mlfmm_matvec(request_1d, tree, grids)
        for target in (0, 100, 255):
            expected = _chained_sum(
                tree,
                grids,
                request_1d.ps.points,
                request_1d.weights,
                request_1d.kernel,
                target,
            )
            assert result.values[target] == pytest.approx(
                expected, rel=1e-10, abs=1e-10
            )

    @pytest.mark.parametrize(
        "mode,m", [(GridMode.SCALED, 256), (GridMode.NONSCALED, 64)]
    )
    def test_matches_hybrid_reference(self, request_1d, mode, m):
        tree = build_tree(request_1d.ps, 4)
        grids = build_level_grids(request_1d.kernel, math.pi, m, 4, mode=mode)
        result = mlfmm_matvec(request_1d, tree, grids)
        reference = far_field_reference(
            request_1d.kernel, request_1d.ps, request_1d.weights, tree, math.pi
        )
        assert _relative_error(result.values, reference) < 1e-3
        assert result.stats.levels == 3
        assert result.stats.translations == count_translations(tree, grids)
        stats = result.stats
        assert stats.max_imag_residual <= stats.imag_residual_bound + 1e-12

    def test_two_dimensions(self, gaussian, unit_square_points):
        weights = generator(4).standard_normal(unit_square_points.n)
        req = SumRequest(
            kernel=gaussian,
            sigma=2 * math.pi,
            ps=unit_square_points,
            weights=weights,
            m_per_dim=64,
        )
        tree = build_tree(unit_square_points, 3)
        result = mlfmm_matvec(req, tree)
        reference = far_field_reference(
            gaussian, unit_square_points, weights, tree, 2 * math.pi
        )
        assert _relative_error(result.values, reference) < 1e-3

    def test_threads_do_not_change_the_result(self, request_1d):
        tree = build_tree(request_1d.ps, 4)
        serial = mlfmm_matvec(request_1d, tree).values
        threaded_request = request_1d.copy(update={"threads": 3})
        threaded = mlfmm_matvec(threaded_request, tree).values
        np.testing.assert_allclose(threaded, serial, rtol=1e-14, atol=1e-14)

    def test_needs_two_coupling_levels(self, request_1d):
        with pytest.raises(TreeTooDeepError):
            mlfmm_matvec(request_1d, build_tree(request_1d.ps, 2))

    def test_grids_must_fit_the_tree(self, request_1d):
        grids = build_level_grids(request_1d.kernel, math.pi, 16, 3)
        with pytest.raises(ConfigurationError):
            mlfmm_matvec(request_1d, build_tree(request_1d.ps, 4), grids)

    def test_grids_must_share_the_bandwidth(self, request_1d):
        grids = build_level_grids(request_1d.kernel, 2 * math.pi, 16, 4)
        with pytest.raises(ConfigurationError):
            mlfmm_matvec(request_1d, build_tree(request_1d.ps, 4), grids)

    def test_tree_must_fit_the_points(self, request_1d):
        other = generate_quasiuniform(40, (0.0, 1.0))
        with pytest.raises(ConfigurationError):
            mlfmm_matvec(request_1d, build_tree(other, 3))

    def test_runner(self, request_1d):
        result = multilevel_runner(request_1d)
        assert result.stats.levels >= 2
        assert result.values.shape == (request_1d.ps.n,)

    def test_expansion_dump(self, request_1d):
        tree = build_tree(request_1d.ps, 3)
        grids = build_level_grids(request_1d.kernel, math.pi, 16, 3)
        multipoles = upsweep(tree, grids, request_1d.weights, request_1d.ps.points)
        locals_ = couple(tree, grids, multipoles)
        frame = dump_expansions(locals_)
        columns = ["level", "box", "node", "coeff_re", "coeff_im"]
        assert list(frame.columns) == columns
        assert set(frame["level"]) == {2, 3}
        assert len(dump_expansions({})) == 0


def test_scaled_evaluation_is_the_separated_form(imq):
    factors = translation_coefficients(imq, make_quadrature(math.pi, 32))
    direct = lowrank_eval(factors, 0.7, 0.1)
    assert scaled_lowrank_eval(factors, 0.7, 0.1, 4.0) == pytest.approx(direct)


def test_near_field_is_exact_for_neighbours(imq, unit_points, unit_weights):
    tree = build_tree(unit_points, 3)
    grids = build_level_grids(imq, math.pi, 16, 3)
    req = SumRequest(kernel=imq, ps=unit_points, weights=unit_weights, m_per_dim=16)
    zero_far = np.zeros(unit_points.n)
    box = tree.point_boxes == 0
    zero_far[box] = unit_weights[box]
    result = mlfmm_matvec(req.copy(update={"weights": zero_far}), tree, grids)
    targets = tree.points_in(1)
    expected = eval_kernel(
        imq, cdist(unit_points.points[targets], unit_points.points)
    ) @ zero_far
    np.testing.assert_allclose(result.values[targets], expected, rtol=1e-12)
