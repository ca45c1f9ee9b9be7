"""
The multilevel fast multipole method: upward pass with Lagrange
interpolation between level grids, diagonal coupling at every level and the
downward pass with its transpose.
"""

import math
from enum import Enum
from typing import Dict, Optional

import numpy as np
import pandas as pd
from prefect.logging import get_logger
from pydantic import BaseModel
from scipy import sparse

from prefect_rbf_fmm.bandlimit import (
    LowRankFactors,
    QuadratureGrid,
    make_quadrature,
    rescale_grid,
    translation_coefficients,
)
from prefect_rbf_fmm.exceptions import (
    ConfigurationError,
    TreeTooDeepError,
    UnsupportedKernelError,
)
from prefect_rbf_fmm.fmm import (
    Expansion,
    ExpansionKind,
    FmmStats,
    SumRequest,
    SumResult,
    aggregate,
    disaggregate,
    near_field,
)
from prefect_rbf_fmm.geometry import BoxTree, build_tree, choose_leaf_level
from prefect_rbf_fmm.kernels import RadialKernel
from prefect_rbf_fmm.utilities import box_blocks, map_blocks

logger = get_logger(__name__)

COARSEST_LEVEL = 2
DEFAULT_STENCIL = 10


class GridMode(str, Enum):
    """
    How the level grids relate.

    `scaled` keeps M nodes on every level and halves bandwidth and weights
    towards the root; `nonscaled` keeps the bandwidth and doubles M towards
    the root.
    """

    SCALED = "scaled"
    NONSCALED = "nonscaled"


class LevelGrids(BaseModel):
    """
    Per-level frequency grids, translation spectra and transfer matrices.

    Attributes:
        mode: How consecutive grids relate.
        band: Bandwidth of the kernel approximation, shared by all levels.
        stencil: Lagrange stencil size K.
        leaf_level: Finest level.
        d: Dimension.
        grids: Grid of every level from 2 to the leaf.
        factors: Translation spectrum of every level.
        transfers: For every level l > 2, the sparse matrix P interpolating
            level-l coefficients at the level-(l - 1) nodes.
    """

    mode: GridMode
    band: float
    stencil: int
    leaf_level: int
    d: int
    grids: Dict[int, QuadratureGrid]
    factors: Dict[int, LowRankFactors]
    transfers: Dict[int, sparse.csr_matrix]

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def levels(self) -> range:
        """Levels carrying expansions, coarsest first."""
        return range(COARSEST_LEVEL, self.leaf_level + 1)

    def weight_ratio(self, level: int) -> float:
        """omega_(l-1) / omega_l for the uniform weights of levels l-1 and l."""
        return float(
            self.grids[level - 1].weights[0] / self.grids[level].weights[0]
        )


def lagrange_matrix(
    source_nodes: np.ndarray, targets: np.ndarray, k: int
) -> sparse.csr_matrix:
    """
    Local Lagrange interpolation from increasing nodes to arbitrary targets.

    Row t holds the Lagrange basis of the k nodes nearest target t, evaluated
    at t in barycentric form; targets that hit a node get a unit row.

    Args:
        source_nodes: Strictly increasing nodes.
        targets: Interpolation points.
        k: Stencil size, at most the node count.

    Returns:
        A (len(targets), len(source_nodes)) matrix whose rows sum to one.

    Raises:
        ValueError: For coincident or unordered nodes, or a stencil too large.

    Example:
        ```python
        import numpy as np
        from prefect_rbf_fmm.mlfmm import lagrange_matrix

        nodes = np.linspace(-np.pi, np.pi, 8)
        P = lagrange_matrix(nodes, nodes / 2, 8)
        ```
    """
    nodes = np.asarray(source_nodes, dtype=float)
    points = np.atleast_1d(np.asarray(targets, dtype=float))
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("Interpolation nodes must be strictly increasing")
    if not 1 <= k <= len(nodes):
        raise ValueError(f"Stencil size must lie in [1, {len(nodes)}], got {k}")

    starts = np.clip(np.searchsorted(nodes, points) - k // 2, 0, len(nodes) - k)
    columns = starts[:, None] + np.arange(k)[None, :]
    stencil = nodes[columns]
    # barycentric weights of each stencil, scaled to its width
    width = stencil[:, -1] - stencil[:, 0]
    scale = np.where(width > 0, width, 1.0)[:, None]
    gaps = (stencil[:, :, None] - stencil[:, None, :]) / scale[:, :, None]
    gaps[:, np.arange(k), np.arange(k)] = 1.0
    bary = 1.0 / np.prod(gaps, axis=2)

    offsets = (points[:, None] - stencil) / scale
    exact = offsets == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = bary / offsets
        values = terms / np.sum(terms, axis=1, keepdims=True)
    hits = np.any(exact, axis=1)
    values[hits] = exact[hits].astype(float)

    rows = np.repeat(np.arange(len(points)), k)
    return sparse.csr_matrix(
        (values.ravel(), (rows, columns.ravel())), shape=(len(points), len(nodes))
    )


def lagrange_sup_error(
    k: int,
    a: float = 1.0,
    sigma: float = math.pi,
    frequency_samples: int = 2001,
    space_samples: int = 201,
) -> float:
    """
    Largest error of interpolating `exp(i eta x)` at `eta = xi / 2` from k
    equispaced nodes spanning [-sigma, sigma], over xi in [-sigma, sigma] and
    x in [-a, a].
    """
    nodes = np.linspace(-sigma, sigma, k)
    xi = np.linspace(-sigma, sigma, frequency_samples)
    x = np.linspace(-a, a, space_samples)
    interpolation = lagrange_matrix(nodes, xi / 2, k)
    approximation = interpolation @ np.exp(1j * np.outer(nodes, x))
    exact = np.exp(1j * np.outer(xi / 2, x))
    return float(np.max(np.abs(exact - approximation)))


def _transfer(child: QuadratureGrid, parent: QuadratureGrid, k: int):
    one_dimensional = lagrange_matrix(child.axis, parent.axis, min(k, child.m_per_dim))
    if child.d == 1:
        return one_dimensional.tocsr()
    return sparse.kron(one_dimensional, one_dimensional, format="csr")


def build_level_grids(
    kernel: RadialKernel,
    sigma: float,
    m: int,
    leaf_level: int,
    d: int = 1,
    k: int = DEFAULT_STENCIL,
    mode: GridMode = GridMode.SCALED,
) -> LevelGrids:
    """
    Builds the grids, spectra and transfer matrices of every level.

    In scaled mode level 2 carries the grid of bandwidth sigma with m nodes
    per dimension and level l that grid with nodes and weights multiplied by
    `2 ** (l - 2)`. In nonscaled mode the leaf carries it and every coarser
    level doubles the node count. Either way each level's spectrum is the
    kernel's restricted to [-sigma, sigma].

    Args:
        kernel: The kernel.
        sigma: Bandwidth.
        m: Nodes per dimension of the reference grid; even.
        leaf_level: Finest level, at least 2.
        d: Dimension.
        k: Lagrange stencil size.
        mode: Grid relation between levels.

    Returns:
        The level grids.

    Raises:
        ConfigurationError: For an odd m or a kernel without far-field factors.
    """
    mode = GridMode(mode)
    if m % 2:
        raise ConfigurationError(f"Level grids need an even node count, got {m}")
    if leaf_level < COARSEST_LEVEL:
        raise ValueError(f"The leaf level must be at least 2, got {leaf_level}")
    if k < 2:
        raise ValueError(f"The stencil needs at least two nodes, got {k}")

    grids = {}
    for level in range(COARSEST_LEVEL, leaf_level + 1):
        if mode == GridMode.SCALED:
            base = make_quadrature(sigma, m, d)
            grids[level] = rescale_grid(base, 0.5 ** (level - COARSEST_LEVEL))
        else:
            grids[level] = make_quadrature(sigma, m * 2 ** (leaf_level - level), d)

    try:
        factors = {
            level: translation_coefficients(kernel, grid, band=sigma)
            for level, grid in grids.items()
        }
    except UnsupportedKernelError as exc:
        raise ConfigurationError(f"No far-field factors for {kernel.spec}") from exc
    transfers = {
        level: _transfer(grids[level], grids[level - 1], k)
        for level in range(COARSEST_LEVEL + 1, leaf_level + 1)
    }
    logger.debug(
        "Built %s level grids in %s mode, %s nodes at the leaf",
        len(grids),
        mode.value,
        grids[leaf_level].size,
    )
    return LevelGrids(
        mode=mode,
        band=sigma,
        stencil=k,
        leaf_level=leaf_level,
        d=d,
        grids=grids,
        factors=factors,
        transfers=transfers,
    )


def _check_compatible(tree: BoxTree, grids: LevelGrids):
    if tree.leaf_level != grids.leaf_level or tree.d != grids.d:
        raise ConfigurationError(
            f"Grids for leaf level {grids.leaf_level} in d={grids.d} do not fit a "
            f"tree with leaf level {tree.leaf_level} in d={tree.d}"
        )


def upsweep(
    tree: BoxTree,
    grids: LevelGrids,
    weights: np.ndarray,
    points: np.ndarray,
    threads: int = 1,
) -> Dict[int, Expansion]:
    """
    Multipole expansions of every box from the leaf up to level 2.

    Leaf boxes aggregate their points; a parent collects
    `exp(i xi_p.(x_parent - x_child)) P V_child` from its children.

    Args:
        tree: The box tree.
        grids: Level grids matching the tree.
        weights: The coefficients lambda_j.
        points: Point coordinates, shape (n, d).
        threads: Worker threads for the leaf aggregation.

    Returns:
        Multipole expansions keyed by level.
    """
    _check_compatible(tree, grids)
    leaf = tree.leaf_level
    multipoles = {
        leaf: aggregate(tree, points, weights, grids.grids[leaf].nodes, threads)
    }
    for level in range(leaf, COARSEST_LEVEL, -1):
        child_level, parent_level = tree.level(level), tree.level(level - 1)
        parent_nodes = grids.grids[level - 1].nodes
        parents = child_level.parents()
        interpolated = (grids.transfers[level] @ multipoles[level].coeffs.T).T
        shifts = parent_level.centers[parents] - child_level.centers
        contributions = np.exp(1j * shifts @ parent_nodes.T) * interpolated
        coeffs = np.zeros((parent_level.n_boxes, len(parent_nodes)), complex)
        np.add.at(coeffs, parents, contributions)
        multipoles[level - 1] = Expansion(
            level=level - 1, kind=ExpansionKind.MULTIPOLE, coeffs=coeffs
        )
    return multipoles


def couple(
    tree: BoxTree,
    grids: LevelGrids,
    multipoles: Dict[int, Expansion],
    threads: int = 1,
) -> Dict[int, Expansion]:
    """
    Local expansions from the interaction lists of every level:
    `L_a(xi_m) += C(xi_m) exp(i xi_m.(x_a - x_b)) V_b(xi_m)`, one node at a time.

    Returns:
        Local expansions keyed by level.
    """
    _check_compatible(tree, grids)
    locals_ = {}
    for level in grids.levels:
        tree_level = tree.level(level)
        nodes = grids.grids[level].nodes
        c_vals = grids.factors[level].c_vals
        multipole = multipoles[level].coeffs
        local = Expansion.zeros(
            level, tree_level.n_boxes, len(nodes), ExpansionKind.LOCAL
        )
        occupied = tree.occupied(level)

        def run(block: np.ndarray):
            for target in block:
                sources = tree_level.interactions(target)
                sources = sources[occupied[sources]]
                if not len(sources):
                    continue
                shifts = tree_level.centers[target] - tree_level.centers[sources]
                phases = np.exp(1j * shifts @ nodes.T)
                local.coeffs[target] = c_vals * np.sum(
                    phases * multipole[sources], axis=0
                )

        map_blocks(run, box_blocks(np.arange(tree_level.n_boxes), threads), threads)
        locals_[level] = local
    return locals_


def count_translations(tree: BoxTree, grids: LevelGrids) -> int:
    """Number of box-to-box couplings over all levels."""
    total = 0
    for level in grids.levels:
        occupied = tree.occupied(level)
        targets, sources = tree.interaction_pairs(level)
        total += int(np.count_nonzero(occupied[targets] & occupied[sources]))
    return total


def downsweep(
    tree: BoxTree,
    grids: LevelGrids,
    locals_: Dict[int, Expansion],
    points: np.ndarray,
    values: np.ndarray,
    threads: int = 1,
) -> float:
    """
    Pushes local expansions to the leaves and evaluates them at the points.

    A child receives `(omega_p / omega_c) P^T (exp(i xi_p.(x_child - x_parent))
    L_parent)`, the transpose of the upward transfer; leaves add
    `Re sum_m omega_m exp(i xi_m.(x_i - x_a)) L_a(xi_m)` into `values`.

    Returns:
        The largest discarded imaginary part.
    """
    _check_compatible(tree, grids)
    incoming = locals_[COARSEST_LEVEL].coeffs.copy()
    for level in range(COARSEST_LEVEL + 1, tree.leaf_level + 1):
        child_level, parent_level = tree.level(level), tree.level(level - 1)
        parent_nodes = grids.grids[level - 1].nodes
        parents = child_level.parents()
        shifts = child_level.centers - parent_level.centers[parents]
        shifted = np.exp(1j * shifts @ parent_nodes.T) * incoming[parents]
        pushed = grids.weight_ratio(level) * (grids.transfers[level].T @ shifted.T).T
        incoming = locals_[level].coeffs + pushed
    leaf = tree.leaf_level
    local = Expansion(level=leaf, kind=ExpansionKind.LOCAL, coeffs=incoming)
    grid = grids.grids[leaf]
    return disaggregate(tree, points, grid.nodes, grid.weights, local, values, threads)


def mlfmm_matvec(
    req: SumRequest, tree: BoxTree, grids: Optional[LevelGrids] = None
) -> SumResult:
    """
    Multilevel fast multipole product: near field plus the upward pass,
    coupling on every level from 2 to the leaf and the downward pass.

    Args:
        req: The sum to compute.
        tree: A tree over `req.ps` with leaf level at least 3.
        grids: Level grids; built in scaled mode with the default stencil
            from the request if omitted.

    Returns:
        The real parts of the sums and the work statistics.

    Raises:
        TreeTooDeepError: If the tree has fewer than two coupling levels.
        ConfigurationError: If tree, grids and request do not fit together.
    """
    if tree.leaf_level < COARSEST_LEVEL + 1:
        raise TreeTooDeepError(
            f"The multilevel method needs leaf level >= 3, got {tree.leaf_level}; "
            "use the single-level method"
        )
    if len(tree.point_boxes) != req.ps.n:
        raise ConfigurationError("The tree was not built over the request's points")
    if grids is None:
        grids = build_level_grids(
            req.kernel, req.sigma, req.m_per_dim, tree.leaf_level, req.ps.d
        )
    if not math.isclose(grids.band, req.sigma):
        raise ConfigurationError(
            f"Grids have bandwidth {grids.band}, the request {req.sigma}"
        )

    points, weights = req.ps.points, req.weights
    values, near_pairs = near_field(req.kernel, points, weights, tree, req.threads)
    multipoles = upsweep(tree, grids, weights, points, req.threads)
    locals_ = couple(tree, grids, multipoles, req.threads)
    imaginary = downsweep(tree, grids, locals_, points, values, req.threads)

    translations = count_translations(tree, grids)
    leaf_nodes = grids.grids[tree.leaf_level].size
    weight_sum = float(np.sum(np.abs(weights)))
    stats = FmmStats(
        near_pairs=near_pairs,
        far_work=leaf_nodes * 2 * req.ps.n
        + sum(
            grids.grids[level].size * tree.level(level).n_boxes
            for level in grids.levels
        )
        + translations * leaf_nodes,
        translations=translations,
        boxes=len(tree.nonempty_leaves),
        levels=len(grids.levels),
        average_neighbors=tree.average_neighbors,
        max_imag_residual=imaginary,
        imag_residual_bound=sum(
            factors.imaginary_residual_bound(weight_sum)
            for factors in grids.factors.values()
        ),
    )
    logger.info(
        "Multilevel FMM over %s points on %s levels: %s near pairs, %s translations",
        req.ps.n,
        stats.levels,
        near_pairs,
        translations,
    )
    return SumResult(values=values, stats=stats)


def multilevel_runner(req: SumRequest) -> SumResult:
    """
    Builds a tree with about 32 points per leaf box, at least three levels
    deep, and runs the multilevel method.
    """
    leaf_level = max(choose_leaf_level(req.ps.n, req.ps.d), COARSEST_LEVEL + 1)
    return mlfmm_matvec(req, build_tree(req.ps, leaf_level))


def scaled_lowrank_eval(
    factors: LowRankFactors, xi_pt: np.ndarray, xj_pt: np.ndarray, s: float
) -> float:
    """
    Evaluates the separated form after mapping the displacement into a box
    scaled down by s: nodes `s xi_m` on the scaled displacement with
    coefficients `mu_m = omega_m C(xi_m) / s^d` on the rescaled weights.
    """
    d = factors.grid.d
    scaled = rescale_grid(factors.grid, 1.0 / s)
    offset = (np.ravel(xi_pt) - np.ravel(xj_pt)).reshape(d) / s
    mu = factors.c_vals / s**d
    return float(np.sum(scaled.weights * mu * np.exp(1j * scaled.nodes @ offset)).real)


def dump_expansions(expansions: Dict[int, Expansion]) -> pd.DataFrame:
    """
    Flattens expansions into rows `level, box, node, coeff_re, coeff_im`,
    skipping boxes whose coefficients are all zero.
    """
    frames = []
    for level in sorted(expansions):
        coeffs = expansions[level].coeffs
        boxes = np.flatnonzero(np.any(coeffs != 0, axis=1))
        box_index, node_index = np.meshgrid(
            boxes, np.arange(coeffs.shape[1]), indexing="ij"
        )
        values = coeffs[boxes].ravel()
        frames.append(
            pd.DataFrame(
                {
                    "level": level,
                    "box": box_index.ravel(),
                    "node": node_index.ravel(),
                    "coeff_re": values.real,
                    "coeff_im": values.imag,
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=["level", "box", "node", "coeff_re", "coeff_im"])
    return pd.concat(frames, ignore_index=True)
