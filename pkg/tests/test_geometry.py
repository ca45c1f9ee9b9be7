import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prefect_rbf_fmm.exceptions import TreeTooDeepError, ZeroSeparationError
from prefect_rbf_fmm.geometry import (
    ALL_PAIRS_LIMIT,
    PointSet,
    build_tree,
    choose_leaf_level,
    generate_quasiuniform,
    mesh_norm,
    separation_distance,
)

TREES = [("unit_points", 5), ("unit_square_points", 3)]


class TestPointSet:
    def test_separation(self):
        ps = PointSet.from_points([0.0, 1.0, 3.0], domain=(0.0, 3.0))
        assert ps.separation == 0.5
        assert ps.n == 3
        assert ps.d == 1

    def test_bounding_box_is_the_default_domain(self):
        ps = PointSet.from_points([[0.0, 1.0], [2.0, -1.0]])
        np.testing.assert_array_equal(ps.lower, [0.0, -1.0])
        np.testing.assert_array_equal(ps.upper, [2.0, 1.0])
        assert ps.diameter == pytest.approx(np.sqrt(8.0))

    @pytest.mark.parametrize(
        "points,domain",
        [
            ([0.0, 2.0], (0.0, 1.0)),
            ([[0.0, 0.0, 0.0]], None),
            ([0.0, np.nan], (0.0, 1.0)),
        ],
    )
    def test_rejects(self, points, domain):
        with pytest.raises(ValueError):
            PointSet.from_points(points, domain=domain)

    def test_rejects_inverted_domain(self):
        with pytest.raises(ValueError):
            PointSet.from_points([0.5], domain=(1.0, 0.0))

    def test_points_are_read_only(self):
        ps = PointSet.from_points([0.0, 1.0])
        with pytest.raises(ValueError):
            ps.points[0, 0] = 0.5

    def test_duplicates(self):
        ps = PointSet.from_points([0.0, 0.5, 0.5, 1.0])
        with pytest.raises(ZeroSeparationError):
            ps.separation

    def test_single_point_has_no_separation(self):
        with pytest.raises(ValueError):
            separation_distance(PointSet.from_points([0.5], domain=(0.0, 1.0)))

    def test_large_sets_use_the_kd_tree(self):
        n = ALL_PAIRS_LIMIT + 100
        ps = generate_quasiuniform(n, (0.0, 1.0), seed=2, jitter=0.5)
        gaps = np.diff(np.sort(ps.points[:, 0]))
        assert ps.separation == pytest.approx(np.min(gaps) / 2)

    def test_mesh_norm_of_a_single_point(self):
        ps = PointSet.from_points([0.5], domain=(0.0, 1.0))
        assert mesh_norm(ps) == pytest.approx(0.5)

    def test_mesh_norm_of_cell_centers(self):
        ps = generate_quasiuniform(10, (0.0, 1.0))
        assert ps.mesh_norm == pytest.approx(0.05)
        assert ps.quasi_uniformity == pytest.approx(1.0)

    def test_mesh_norm_needs_a_fine_lattice(self):
        with pytest.raises(ValueError):
            mesh_norm(PointSet.from_points([0.0, 1.0]), probe_resolution=8)


class TestGenerateQuasiuniform:
    def test_lattice_without_jitter(self):
        ps = generate_quasiuniform(4, (0.0, 1.0))
        np.testing.assert_allclose(ps.points[:, 0], [0.125, 0.375, 0.625, 0.875])

    def test_two_dimensional_rows(self):
        ps = generate_quasiuniform(10, ((0.0, 0.0), (1.0, 1.0)), seed=1, jitter=0.2)
        assert ps.points.shape == (10, 2)
        assert ps.d == 2

    def test_seeded(self):
        first = generate_quasiuniform(50, (0.0, 1.0), seed=4, jitter=0.5)
        second = generate_quasiuniform(50, (0.0, 1.0), seed=4, jitter=0.5)
        third = generate_quasiuniform(50, (0.0, 1.0), seed=5, jitter=0.5)
        np.testing.assert_array_equal(first.points, second.points)
        assert not np.array_equal(first.points, third.points)

    @pytest.mark.parametrize(
        "n,domain,jitter",
        [
            (0, (0.0, 1.0), 0.0),
            (4, (0.0, 1.0), 1.0),
            (4, ((0.0,) * 3, (1.0,) * 3), 0.0),
        ],
    )
    def test_rejects(self, n, domain, jitter):
        with pytest.raises(ValueError):
            generate_quasiuniform(n, domain, jitter=jitter)


@given(
    n=st.integers(min_value=2, max_value=400),
    seed=st.integers(min_value=0, max_value=2**32),
    jitter=st.floats(min_value=0.0, max_value=0.9),
)
def test_jittered_lattice_keeps_its_separation(n, seed, jitter):
    ps = generate_quasiuniform(n, (-1.0, 3.0), seed=seed, jitter=jitter)
    spacing = 4.0 / n
    assert ps.separation >= (1 - jitter) * spacing / 2 * (1 - 1e-9)
    assert np.all((ps.points >= -1.0) & (ps.points <= 3.0))


@pytest.mark.parametrize(
    "n,d,expected", [(1024, 1, 5), (10, 1, 2), (32768, 2, 5), (2048, 2, 3)]
)
def test_choose_leaf_level(n, d, expected):
    assert choose_leaf_level(n, d) == expected


def test_choose_leaf_level_rejects():
    with pytest.raises(ValueError):
        choose_leaf_level(0, 1)
    with pytest.raises(ValueError):
        choose_leaf_level(10, 1, occupancy=0.0)


def _covering_counts(tree, box):
    """
    How often every leaf is reached from leaf `box` through its neighbours
    and the interaction lists of its ancestors.
    """
    n_leaves = tree.leaf.n_boxes
    ancestors = {tree.leaf_level: np.arange(n_leaves)}
    for level in range(tree.leaf_level, 0, -1):
        ancestors[level - 1] = tree.level(level).parents()[ancestors[level]]
    counts = np.zeros(n_leaves, dtype=int)
    counts[tree.leaf.neighbors(box)] += 1
    for level in range(1, tree.leaf_level + 1):
        mine = ancestors[level][box]
        listed = np.isin(ancestors[level], tree.level(level).interactions(mine))
        counts += listed
    return counts


class TestBoxTree:
    def test_rejects_shallow_trees(self, unit_points):
        with pytest.raises(ValueError):
            build_tree(unit_points, 1)

    def test_box_cap(self, unit_points):
        with pytest.raises(TreeTooDeepError):
            build_tree(unit_points, 3, max_boxes=10)

    def test_points_lie_in_their_boxes(self, unit_square_points):
        tree = build_tree(unit_square_points, 3)
        assert tree.occupancy.sum() == unit_square_points.n
        side = tree.leaf.side
        for box in tree.nonempty_leaves:
            inside = unit_square_points.points[tree.points_in(box)]
            center = tree.leaf.centers[box]
            assert np.all(np.abs(inside - center) <= side / 2 + 1e-12)

    def test_neighbors_and_interactions_in_one_dimension(self, unit_points):
        tree = build_tree(unit_points, 2)
        level = tree.level(2)
        assert list(level.neighbors(0)) == [0, 1]
        assert list(level.neighbors(1)) == [0, 1, 2]
        assert [list(level.interactions(box)) for box in range(4)] == [
            [2, 3],
            [3],
            [0],
            [0, 1],
        ]

    def test_interior_interaction_list_size(self, unit_square_points):
        tree = build_tree(unit_square_points, 3)
        level = tree.level(3)
        interior = np.ravel_multi_index((3, 3), (8, 8))
        assert len(level.interactions(interior)) == 27
        assert len(level.neighbors(interior)) == 9

    @pytest.mark.parametrize("fixture,leaf_level", TREES)
    def test_interaction_lists_are_symmetric(self, fixture, leaf_level, request):
        tree = build_tree(request.getfixturevalue(fixture), leaf_level)
        targets, sources = tree.interaction_pairs(leaf_level)
        pairs = set(zip(targets.tolist(), sources.tolist()))
        assert pairs == {(source, target) for target, source in pairs}

    @pytest.mark.parametrize("fixture,leaf_level", TREES)
    def test_lists_cover_every_leaf_once(self, fixture, leaf_level, request):
        tree = build_tree(request.getfixturevalue(fixture), leaf_level)
        for box in (0, tree.leaf.n_boxes // 2 + 1, tree.leaf.n_boxes - 1):
            assert np.all(_covering_counts(tree, box) == 1)

    def test_parents(self, unit_points):
        tree = build_tree(unit_points, 3)
        np.testing.assert_array_equal(tree.level(3).parents(), np.arange(8) // 2)

    def test_occupied_propagates_upwards(self):
        ps = PointSet.from_points([0.01, 0.02], domain=(0.0, 1.0))
        tree = build_tree(ps, 3)
        assert list(tree.occupied(3)) == [True] + [False] * 7
        assert list(tree.occupied(2)) == [True, False, False, False]
        assert list(tree.nonempty_leaves) == [0]

    def test_far_boxes(self, unit_points):
        tree = build_tree(unit_points, 3)
        far = tree.far_boxes(3)
        assert set(far) == {0, 1, 5, 6, 7}

    def test_average_neighbors(self, unit_points):
        tree = build_tree(unit_points, 3)
        assert tree.average_neighbors == pytest.approx((2 * 2 + 6 * 3) / 8)

    def test_small_bounding_box(self):
        ps = PointSet.from_points([0.5, 0.5 + 1e-3])
        tree = build_tree(ps, 2)
        assert tree.occupancy.sum() == 2
