"""Point sets and the uniform box tree the FMM traverses."""

import itertools
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from prefect.logging import get_logger
from pydantic import BaseModel, PrivateAttr, root_validator, validator
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from prefect_rbf_fmm.exceptions import TreeTooDeepError, ZeroSeparationError
from prefect_rbf_fmm.utilities import generator

logger = get_logger(__name__)

ALL_PAIRS_LIMIT = 4096
DEFAULT_PROBE_RESOLUTION = 256
MAX_BOXES = 2**22

Domain = Union[Tuple[float, float], Tuple[Sequence[float], Sequence[float]]]


def _domain_arrays(domain: Domain) -> Tuple[np.ndarray, np.ndarray]:
    lower, upper = domain
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape or np.any(upper < lower):
        raise ValueError(f"Invalid domain {domain!r}")
    return lower, upper


class PointSet(BaseModel):
    """
    Data sites inside an axis-aligned box, with cached mesh norm and
    separation distance.

    Attributes:
        points: Coordinates, shape (n, d).
        lower: Lower corner of the domain box.
        upper: Upper corner of the domain box.

    Example:
        ```python
        from prefect_rbf_fmm.geometry import PointSet

        ps = PointSet.from_points([0.0, 1.0, 3.0], domain=(0.0, 3.0))
        ps.separation  # 0.5
        ```
    """

    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    _mesh_norm: Optional[float] = PrivateAttr(default=None)
    _separation: Optional[float] = PrivateAttr(default=None)

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("points")
    def _two_dimensional(cls, value):
        """
        Points are stored as an (n, d) array with d in {1, 2}.
        """
        value = np.array(value, dtype=float)
        if value.ndim == 1:
            value = value[:, None]
        if value.ndim != 2 or value.shape[1] not in (1, 2):
            raise ValueError(
                f"Points must have shape (n, 1) or (n, 2), got {value.shape}"
            )
        if not np.all(np.isfinite(value)):
            raise ValueError("Points must be finite")
        value.setflags(write=False)
        return value

    @validator("lower", "upper")
    def _vector(cls, value):
        """
        Domain corners are float vectors.
        """
        value = np.atleast_1d(np.array(value, dtype=float))
        value.setflags(write=False)
        return value

    @root_validator(skip_on_failure=True)
    def _inside_domain(cls, values):
        """
        Every point must lie in the domain box.
        """
        points, lower, upper = values["points"], values["lower"], values["upper"]
        d = points.shape[1]
        if lower.shape != (d,) or upper.shape != (d,):
            raise ValueError(f"Domain corners must have {d} coordinates")
        slack = 1e-12 * max(1.0, float(np.max(upper - lower)))
        if np.any(points < lower - slack) or np.any(points > upper + slack):
            raise ValueError("All points must lie inside the domain")
        return values

    @classmethod
    def from_points(cls, points, domain: Optional[Domain] = None) -> "PointSet":
        """
        Builds a point set, using the bounding box as domain unless given.
        """
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if domain is None:
            lower, upper = points.min(axis=0), points.max(axis=0)
        else:
            lower, upper = _domain_arrays(domain)
        return cls(points=points, lower=lower, upper=upper)

    @property
    def n(self) -> int:
        """Number of points."""
        return self.points.shape[0]

    @property
    def d(self) -> int:
        """Dimension."""
        return self.points.shape[1]

    @property
    def diameter(self) -> float:
        """Diagonal of the domain box."""
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def mesh_norm(self) -> float:
        """Mesh norm at the default probe resolution, cached."""
        if self._mesh_norm is None:
            self._mesh_norm = mesh_norm(self)
        return self._mesh_norm

    @property
    def separation(self) -> float:
        """Separation distance, cached."""
        if self._separation is None:
            self._separation = separation_distance(self)
        return self._separation

    @property
    def quasi_uniformity(self) -> float:
        """The ratio h / q_X."""
        return self.mesh_norm / self.separation


def mesh_norm(ps: PointSet, probe_resolution: int = DEFAULT_PROBE_RESOLUTION) -> float:
    """
    Approximates the mesh norm `sup_x min_j |x - x_j|` over the domain by the
    largest nearest-site distance on a probe lattice.

    The lattice includes the domain corners, so the true mesh norm lies between
    the returned value and that value plus half the lattice cell diagonal.

    Args:
        ps: The point set.
        probe_resolution: Lattice points per dimension, at least 64.

    Returns:
        The lattice estimate of the mesh norm.
    """
    if probe_resolution < 64:
        raise ValueError(
            f"Probe resolution must be at least 64, got {probe_resolution}"
        )
    if ps.n == 0:
        raise ValueError("Mesh norm of an empty point set")
    axes = [
        np.linspace(lo, hi, probe_resolution) for lo, hi in zip(ps.lower, ps.upper)
    ]
    probes = np.stack([axis.ravel() for axis in np.meshgrid(*axes)], axis=1)
    distances, _ = cKDTree(ps.points).query(probes)
    return float(np.max(distances))


def separation_distance(ps: PointSet) -> float:
    """
    Computes `q_X = min_{j != k} |x_j - x_k| / 2` exactly.

    Small sets use all pairs; larger sets use nearest-neighbour queries on
    scipy's bucketed kd-tree.

    Raises:
        ZeroSeparationError: If two points coincide.
    """
    if ps.n < 2:
        raise ValueError("Separation distance needs at least two points")
    if ps.n <= ALL_PAIRS_LIMIT:
        smallest = float(np.min(pdist(ps.points)))
    else:
        distances, _ = cKDTree(ps.points).query(ps.points, k=2)
        smallest = float(np.min(distances[:, 1]))
    if smallest == 0.0:
        raise ZeroSeparationError("The point set contains duplicate points")
    return 0.5 * smallest


def generate_quasiuniform(
    n: int, domain: Domain, seed: int = 0, jitter: float = 0.0
) -> PointSet:
    """
    Generates a jittered cell-centered lattice.

    In two dimensions the lattice has `ceil(sqrt(n))` columns and enough rows
    for n points, filled row by row.

    Args:
        n: Number of points.
        domain: `(lower, upper)`, scalars for d=1 or pairs for d=2.
        seed: Seed of the Philox generator.
        jitter: Fraction in [0, 1); each coordinate moves by at most
            `jitter * spacing / 2`.

    Returns:
        The point set on the given domain.

    Example:
        ```python
        from prefect_rbf_fmm.geometry import generate_quasiuniform

        ps = generate_quasiuniform(1000, (0.0, 1.0), seed=7, jitter=0.3)
        ```
    """
    if n < 1:
        raise ValueError(f"At least one point is needed, got {n}")
    if not 0.0 <= jitter < 1.0:
        raise ValueError(f"Jitter must lie in [0, 1), got {jitter}")
    lower, upper = _domain_arrays(domain)
    d = len(lower)
    if d == 1:
        counts = [n]
    elif d == 2:
        columns = math.ceil(math.sqrt(n))
        counts = [columns, math.ceil(n / columns)]
    else:
        raise ValueError(f"Only d=1 and d=2 are supported, got d={d}")

    spacing = (upper - lower) / np.asarray(counts)
    grids = np.meshgrid(*[np.arange(count) + 0.5 for count in counts], indexing="ij")
    cells = np.stack([grid.ravel() for grid in grids], axis=1)[:n]
    points = lower + cells * spacing
    if jitter > 0:
        offsets = generator(seed).uniform(-1.0, 1.0, size=points.shape)
        points = points + offsets * jitter * spacing / 2
    return PointSet(points=points, lower=lower, upper=upper)


class TreeLevel(BaseModel):
    """
    One level of a uniform box tree.

    Boxes are numbered by their multi-index in C order. Neighbour and
    interaction lists are stored in compressed form: the list of box `b` is
    `indices[pointers[b]:pointers[b + 1]]`.

    Attributes:
        level: Level index, 0 for the root.
        side: Box side length.
        per_dim: Boxes per dimension, `2 ** level`.
        centers: Box centers, shape (boxes, d).
        neighbor_pointers: Offsets into `neighbor_indices`.
        neighbor_indices: Adjacent boxes, self included.
        interaction_pointers: Offsets into `interaction_indices`.
        interaction_indices: Children of the parent's neighbours that are not
            neighbours.
    """

    level: int
    side: float
    per_dim: int
    centers: np.ndarray
    neighbor_pointers: np.ndarray
    neighbor_indices: np.ndarray
    interaction_pointers: np.ndarray
    interaction_indices: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def n_boxes(self) -> int:
        """Box count."""
        return self.centers.shape[0]

    def neighbors(self, box: int) -> np.ndarray:
        """Adjacent boxes of `box`, itself included."""
        start, stop = self.neighbor_pointers[box : box + 2]
        return self.neighbor_indices[start:stop]

    def interactions(self, box: int) -> np.ndarray:
        """The interaction list of `box`."""
        start, stop = self.interaction_pointers[box : box + 2]
        return self.interaction_indices[start:stop]

    def parents(self) -> np.ndarray:
        """Parent index of every box at the next coarser level."""
        d = self.centers.shape[1]
        multi = np.stack(np.unravel_index(np.arange(self.n_boxes), (self.per_dim,) * d))
        return np.ravel_multi_index(tuple(multi // 2), (max(self.per_dim // 2, 1),) * d)


def _lists(per_dim: int, d: int, offsets, keep) -> Tuple[np.ndarray, np.ndarray]:
    """
    Compressed lists of boxes `I + o` for the offsets o that `keep(I, J)` accepts.
    """
    shape = (per_dim,) * d
    multi = np.stack(np.unravel_index(np.arange(per_dim**d), shape), axis=1)
    rows, cols = [], []
    for offset in offsets:
        other = multi + np.asarray(offset)
        valid = np.all((other >= 0) & (other < per_dim), axis=1) & keep(multi, other)
        rows.append(np.flatnonzero(valid))
        cols.append(np.ravel_multi_index(tuple(other[valid].T), shape))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    order = np.lexsort((cols, rows))
    pointers = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=per_dim**d))])
    return pointers, cols[order]


def _build_level(level: int, lower: np.ndarray, root_side: float) -> TreeLevel:
    d = len(lower)
    per_dim = 2**level
    side = root_side / per_dim
    grids = np.meshgrid(*([np.arange(per_dim)] * d), indexing="ij")
    multi = np.stack([grid.ravel() for grid in grids], axis=1)

    near = list(itertools.product((-1, 0, 1), repeat=d))
    neighbor_pointers, neighbor_indices = _lists(
        per_dim, d, near, lambda mine, other: np.ones(len(mine), dtype=bool)
    )

    def well_separated_cousin(mine, other):
        same_parent_block = np.all(np.abs(other // 2 - mine // 2) <= 1, axis=1)
        return same_parent_block & (np.max(np.abs(other - mine), axis=1) > 1)

    wide = list(itertools.product(range(-3, 4), repeat=d))
    interaction_pointers, interaction_indices = _lists(
        per_dim, d, wide, well_separated_cousin
    )
    return TreeLevel(
        level=level,
        side=side,
        per_dim=per_dim,
        centers=lower + (multi + 0.5) * side,
        neighbor_pointers=neighbor_pointers,
        neighbor_indices=neighbor_indices,
        interaction_pointers=interaction_pointers,
        interaction_indices=interaction_indices,
    )


class BoxTree(BaseModel):
    """
    Uniform 2^d-ary subdivision of the bounding cube of a point set.

    Attributes:
        d: Dimension.
        lower: Lower corner of the root cube.
        side: Side length of the root cube.
        leaf_level: Finest level.
        levels: One `TreeLevel` per level, root first.
        point_order: Point indices sorted by leaf box.
        leaf_starts: Offsets into `point_order` per leaf box.
        point_boxes: Leaf box of every point.
    """

    d: int
    lower: np.ndarray
    side: float
    leaf_level: int
    levels: List[TreeLevel]
    point_order: np.ndarray
    leaf_starts: np.ndarray
    point_boxes: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def leaf(self) -> TreeLevel:
        """The finest level."""
        return self.levels[self.leaf_level]

    def level(self, index: int) -> TreeLevel:
        """Level `index`, 0 being the root."""
        return self.levels[index]

    def points_in(self, box: int) -> np.ndarray:
        """Indices of the points binned in leaf `box`."""
        return self.point_order[self.leaf_starts[box] : self.leaf_starts[box + 1]]

    @property
    def occupancy(self) -> np.ndarray:
        """Point count per leaf box."""
        return np.diff(self.leaf_starts)

    @property
    def nonempty_leaves(self) -> np.ndarray:
        """Leaf boxes holding at least one point."""
        return np.flatnonzero(self.occupancy)

    def occupied(self, level: int) -> np.ndarray:
        """Boolean mask of the boxes at `level` holding points."""
        mask = self.occupancy > 0
        for finer in range(self.leaf_level, level, -1):
            parents = self.levels[finer].parents()
            coarse = np.zeros(self.levels[finer - 1].n_boxes, dtype=bool)
            np.logical_or.at(coarse, parents, mask)
            mask = coarse
        return mask

    def interaction_pairs(self, level: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        All (target box, source box) pairs of the interaction lists at `level`.
        """
        tree_level = self.levels[level]
        counts = np.diff(tree_level.interaction_pointers)
        targets = np.repeat(np.arange(tree_level.n_boxes), counts)
        return targets, tree_level.interaction_indices.copy()

    def far_boxes(self, box: int) -> np.ndarray:
        """All leaf boxes that are not neighbours of leaf `box`."""
        mask = np.ones(self.leaf.n_boxes, dtype=bool)
        mask[self.leaf.neighbors(box)] = False
        return np.flatnonzero(mask)

    @property
    def average_neighbors(self) -> float:
        """Measured mean number of nonempty neighbour boxes of a nonempty leaf."""
        occupied = self.occupancy > 0
        leaves = self.nonempty_leaves
        if not len(leaves):
            return 0.0
        return float(
            np.mean([occupied[self.leaf.neighbors(box)].sum() for box in leaves])
        )


def choose_leaf_level(n: int, d: int, occupancy: float = 32.0) -> int:
    """
    Picks the leaf level whose average box occupancy is closest to `occupancy`,
    never coarser than level 2.
    """
    if n < 1 or occupancy <= 0:
        raise ValueError(f"Invalid point count {n} or occupancy {occupancy}")
    return max(2, round(math.log2(max(n / occupancy, 1.0)) / d))


def build_tree(ps: PointSet, leaf_level: int, max_boxes: int = MAX_BOXES) -> BoxTree:
    """
    Subdivides the bounding cube of the domain down to `leaf_level` and bins
    the points into leaf boxes.

    Args:
        ps: The point set.
        leaf_level: Finest level, at least 2.
        max_boxes: Cap on the total box count over all levels.

    Returns:
        The tree.

    Raises:
        TreeTooDeepError: If the tree would exceed `max_boxes`.
    """
    if leaf_level < 2:
        raise ValueError(f"The leaf level must be at least 2, got {leaf_level}")
    d = ps.d
    total = sum(2 ** (d * level) for level in range(leaf_level + 1))
    if total > max_boxes:
        raise TreeTooDeepError(
            f"Leaf level {leaf_level} needs {total} boxes, above the cap {max_boxes}"
        )

    lower = np.array(ps.lower)
    side = float(np.max(ps.upper - ps.lower)) or 1.0
    levels = [_build_level(level, lower, side) for level in range(leaf_level + 1)]

    per_dim = 2**leaf_level
    leaf_side = side / per_dim
    cells = np.clip(((ps.points - lower) // leaf_side).astype(int), 0, per_dim - 1)
    point_boxes = np.ravel_multi_index(tuple(cells.T), (per_dim,) * d)
    point_order = np.argsort(point_boxes, kind="stable")
    counts = np.bincount(point_boxes, minlength=per_dim**d)
    leaf_starts = np.concatenate([[0], np.cumsum(counts)])
    logger.debug(
        "Built a %s-level tree over %s points, %s nonempty leaves",
        leaf_level + 1,
        ps.n,
        int(np.count_nonzero(counts)),
    )
    return BoxTree(
        d=d,
        lower=lower,
        side=side,
        leaf_level=leaf_level,
        levels=levels,
        point_order=point_order,
        leaf_starts=leaf_starts,
        point_boxes=point_boxes,
    )
