"""Direct summation and the single-level fast multipole method."""

import math
import time
from enum import Enum
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from prefect.logging import get_logger
from pydantic import BaseModel, Field, validator
from scipy.spatial.distance import cdist

from prefect_rbf_fmm.bandlimit import (
    LowRankFactors,
    bandlimited_matvec,
    eval_bandlimited,
    make_quadrature,
    translation_coefficients,
)
from prefect_rbf_fmm.exceptions import ConfigurationError, UnsupportedKernelError
from prefect_rbf_fmm.geometry import (
    BoxTree,
    PointSet,
    build_tree,
    choose_leaf_level,
    generate_quasiuniform,
)
from prefect_rbf_fmm.kernels import RadialKernel, eval_kernel
from prefect_rbf_fmm.utilities import (
    box_blocks,
    fit_loglog_slope,
    generator,
    map_blocks,
    row_slices,
)

logger = get_logger(__name__)

DIRECT_ROWS = 128


class ExpansionKind(str, Enum):
    """
    Outgoing (multipole) or incoming (local) coefficients.
    """

    MULTIPOLE = "multipole"
    LOCAL = "local"


class Expansion(BaseModel):
    """
    The expansions of every box of one tree level, one row per box and one
    column per frequency node of that level's grid.

    Boxes without points keep all-zero multipole rows.
    """

    level: int
    kind: ExpansionKind
    coeffs: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @classmethod
    def zeros(
        cls, level: int, n_boxes: int, n_nodes: int, kind: ExpansionKind
    ) -> "Expansion":
        """All-zero expansions."""
        return cls(level=level, kind=kind, coeffs=np.zeros((n_boxes, n_nodes), complex))

    @property
    def n_nodes(self) -> int:
        """Coefficients per box."""
        return self.coeffs.shape[1]

    def box(self, index: int) -> np.ndarray:
        """The coefficients of one box."""
        return self.coeffs[index]


class FmmStats(BaseModel):
    """
    Work counters and diagnostics of one matrix-vector product.

    Attributes:
        near_pairs: Kernel evaluations in the near field.
        far_work: Complex multiply-adds in the far-field stages.
        translations: Box-to-box translations.
        boxes: Nonempty leaf boxes.
        levels: Tree levels that carried expansions.
        average_neighbors: Measured mean count of nonempty neighbour boxes.
        max_imag_residual: Largest discarded imaginary part.
        imag_residual_bound: A priori bound on that imaginary part.
    """

    near_pairs: int = 0
    far_work: int = 0
    translations: int = 0
    boxes: int = 0
    levels: int = 1
    average_neighbors: float = 0.0
    max_imag_residual: float = 0.0
    imag_residual_bound: float = 0.0


class SumRequest(BaseModel):
    """
    An RBF sum `u(x_i) = sum_j lambda_j phi(x_i - x_j)` over a shared set of
    sources and targets.

    Attributes:
        kernel: The kernel.
        sigma: Bandwidth of the far-field approximation.
        ps: Sources and targets.
        weights: The coefficients lambda_j.
        m_per_dim: Frequency nodes per dimension.
        threads: Worker threads for the data-parallel stages.
    """

    kernel: RadialKernel
    sigma: float = Field(default=math.pi, gt=0)
    ps: PointSet
    weights: np.ndarray
    m_per_dim: int = Field(default=64, ge=2)
    threads: int = Field(default=1, ge=1)

    class Config:
        arbitrary_types_allowed = True

    @validator("weights")
    def _one_per_point(cls, value, values):
        """
        One finite coefficient per point.
        """
        value = np.array(value, dtype=float).ravel()
        ps = values.get("ps")
        if ps is not None and len(value) != ps.n:
            raise ValueError(f"Expected {ps.n} weights, got {len(value)}")
        if not np.all(np.isfinite(value)):
            raise ValueError("Weights must be finite")
        return value


class SumResult(BaseModel):
    """
    The sums at every point and the statistics of their computation.
    """

    values: np.ndarray
    stats: FmmStats

    class Config:
        arbitrary_types_allowed = True

    @validator("values")
    def _finite(cls, value):
        """
        Sums are finite.
        """
        if not np.all(np.isfinite(value)):
            raise ValueError("The sum produced non-finite values")
        return value


def _weights(weights, n: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float).ravel()
    if len(weights) != n:
        raise ValueError(f"Expected {n} weights, got {len(weights)}")
    return weights


def direct_matvec(
    kernel: RadialKernel,
    ps: PointSet,
    weights: np.ndarray,
    use_bandlimited: bool = False,
    sigma: Optional[float] = None,
    threads: int = 1,
) -> SumResult:
    """
    Sums the kernel over all pairs; the oracle for every fast method.

    Args:
        kernel: The kernel.
        ps: Sources and targets.
        weights: The coefficients lambda_j.
        use_bandlimited: Sum the band-limited kernel instead.
        sigma: Bandwidth, required with `use_bandlimited`.
        threads: Worker threads over row blocks.

    Returns:
        The sums.

    Example:
        ```python
        from prefect_rbf_fmm.fmm import direct_matvec
        from prefect_rbf_fmm.geometry import PointSet
        from prefect_rbf_fmm.kernels import parse_kernel_spec

        ps = PointSet.from_points([0.0, 0.5, 2.0])
        direct_matvec(parse_kernel_spec("gaussian:c=1"), ps, [1, 2, -1]).values
        ```
    """
    weights = _weights(weights, ps.n)
    if use_bandlimited:
        if sigma is None:
            raise ValueError("A bandwidth is required for the band-limited sum")
        values = bandlimited_matvec(kernel, sigma, ps.points, weights)
    else:
        values = np.zeros(ps.n)

        def rows(block: slice):
            distances = cdist(ps.points[block], ps.points)
            values[block] = eval_kernel(kernel, distances) @ weights

        map_blocks(rows, row_slices(ps.n, DIRECT_ROWS), threads)
    return SumResult(values=values, stats=FmmStats(near_pairs=ps.n**2, boxes=1))


def choose_truncation(n: int) -> int:
    """
    Balances near and far work: `ceil(sqrt(n))` rounded up to an even number,
    so that xi = 0 stays on the grid.
    """
    if n < 4:
        raise ValueError(f"The truncation rule needs n >= 4, got {n}")
    m = math.ceil(math.sqrt(n))
    return m + m % 2


def _neighbor_sources(tree: BoxTree, box: int) -> np.ndarray:
    return np.concatenate([tree.points_in(other) for other in tree.leaf.neighbors(box)])


def near_field(
    kernel: RadialKernel,
    points: np.ndarray,
    weights: np.ndarray,
    tree: BoxTree,
    threads: int = 1,
) -> Tuple[np.ndarray, int]:
    """
    Sums the kernel directly over every pair of points in adjacent leaf boxes.

    Returns:
        The near-field sums and the number of kernel evaluations.
    """
    values = np.zeros(len(weights))
    leaves = tree.nonempty_leaves

    def run(block: np.ndarray):
        for box in block:
            targets = tree.points_in(box)
            sources = _neighbor_sources(tree, box)
            distances = cdist(points[targets], points[sources])
            values[targets] = eval_kernel(kernel, distances) @ weights[sources]

    map_blocks(run, box_blocks(leaves, threads), threads)
    occupancy = tree.occupancy
    pairs = sum(
        int(occupancy[box]) * int(occupancy[tree.leaf.neighbors(box)].sum())
        for box in leaves
    )
    return values, pairs


def aggregate(
    tree: BoxTree,
    points: np.ndarray,
    weights: np.ndarray,
    nodes: np.ndarray,
    threads: int = 1,
) -> Expansion:
    """
    Leaf multipole expansions
    `V_b(xi_m) = sum_{j in b} lambda_j exp(i xi_m.(x_b - x_j))`.
    """
    leaf = tree.leaf
    multipole = Expansion.zeros(
        tree.leaf_level, leaf.n_boxes, len(nodes), ExpansionKind.MULTIPOLE
    )

    def run(block: np.ndarray):
        for box in block:
            members = tree.points_in(box)
            offsets = leaf.centers[box] - points[members]
            multipole.coeffs[box] = weights[members] @ np.exp(1j * offsets @ nodes.T)

    map_blocks(run, box_blocks(tree.nonempty_leaves, threads), threads)
    return multipole


def disaggregate(
    tree: BoxTree,
    points: np.ndarray,
    nodes: np.ndarray,
    node_weights: np.ndarray,
    local: Expansion,
    values: np.ndarray,
    threads: int = 1,
) -> float:
    """
    Adds `Re sum_m omega_m exp(i xi_m.(x_i - x_a)) L_a(xi_m)` into `values`
    for every point i of every leaf a.

    Returns:
        The largest discarded imaginary part.
    """
    leaf = tree.leaf
    leaves = tree.nonempty_leaves
    imaginary = np.zeros(len(values))

    def run(block: np.ndarray):
        for box in block:
            members = tree.points_in(box)
            offsets = points[members] - leaf.centers[box]
            total = np.exp(1j * offsets @ nodes.T) @ (node_weights * local.coeffs[box])
            values[members] += total.real
            imaginary[members] = total.imag

    map_blocks(run, box_blocks(leaves, threads), threads)
    return float(np.max(np.abs(imaginary), initial=0.0))


def translate_far(
    tree: BoxTree,
    factors: LowRankFactors,
    multipole: Expansion,
    threads: int = 1,
) -> Tuple[Expansion, int]:
    """
    Single-level coupling: every nonempty leaf receives
    `C(xi_m) exp(i xi_m.(x_a - x_b)) V_b(xi_m)` from every nonempty leaf b
    outside its neighbourhood.

    Returns:
        The local expansions and the number of translations.
    """
    leaf = tree.leaf
    nodes = factors.grid.nodes
    local = Expansion.zeros(
        tree.leaf_level, leaf.n_boxes, factors.grid.size, ExpansionKind.LOCAL
    )
    occupied = tree.occupancy > 0
    leaves = tree.nonempty_leaves
    far = {}
    for box in leaves:
        candidates = tree.far_boxes(box)
        far[int(box)] = candidates[occupied[candidates]]

    def run(block: np.ndarray):
        for box in block:
            sources = far[int(box)]
            if not len(sources):
                continue
            shifts = np.exp(1j * (leaf.centers[box] - leaf.centers[sources]) @ nodes.T)
            local.coeffs[box] = factors.c_vals * np.sum(
                shifts * multipole.coeffs[sources], axis=0
            )

    map_blocks(run, box_blocks(leaves, threads), threads)
    return local, sum(len(sources) for sources in far.values())


def _check_tree(req: SumRequest, tree: BoxTree):
    if len(tree.point_boxes) != req.ps.n or tree.d != req.ps.d:
        raise ConfigurationError("The tree was not built over the request's points")


def _factors(req: SumRequest, **kwargs) -> LowRankFactors:
    grid = make_quadrature(req.sigma, req.m_per_dim, req.ps.d)
    try:
        return translation_coefficients(req.kernel, grid, **kwargs)
    except UnsupportedKernelError as exc:
        raise ConfigurationError(
            f"No far-field factors for {req.kernel.spec} at sigma={req.sigma}: {exc}"
        ) from exc


def fmm_matvec_single(req: SumRequest, tree: BoxTree) -> SumResult:
    """
    Single-level fast multipole product.

    Adjacent leaf boxes interact through the original kernel; all other pairs
    go through aggregation about the source box center, a diagonal translation
    and disaggregation about the target box center on the request's
    frequency grid.

    Args:
        req: The sum to compute.
        tree: A tree over `req.ps`; its leaf level is the operative level.

    Returns:
        The real parts of the sums and the work statistics.

    Raises:
        ConfigurationError: If no far-field factors exist for the kernel.
    """
    _check_tree(req, tree)
    factors = _factors(req)
    grid = factors.grid
    points, weights = req.ps.points, req.weights

    values, near_pairs = near_field(req.kernel, points, weights, tree, req.threads)
    multipole = aggregate(tree, points, weights, grid.nodes, req.threads)
    local, translations = translate_far(tree, factors, multipole, req.threads)
    imaginary = disaggregate(
        tree, points, grid.nodes, grid.weights, local, values, req.threads
    )
    stats = FmmStats(
        near_pairs=near_pairs,
        far_work=grid.size * (2 * req.ps.n + translations),
        translations=translations,
        boxes=len(tree.nonempty_leaves),
        average_neighbors=tree.average_neighbors,
        max_imag_residual=imaginary,
        imag_residual_bound=factors.imaginary_residual_bound(
            float(np.sum(np.abs(weights)))
        ),
    )
    logger.info(
        "Single-level FMM over %s points: %s near pairs, %s translations",
        req.ps.n,
        near_pairs,
        translations,
    )
    return SumResult(values=values, stats=stats)


def far_field_reference(
    kernel: RadialKernel,
    ps: PointSet,
    weights: np.ndarray,
    tree: BoxTree,
    sigma: float,
) -> np.ndarray:
    """
    The sum an exact far field would give: the kernel on adjacent leaf boxes
    and the band-limited kernel on all other pairs.
    """
    weights = _weights(weights, ps.n)
    values = bandlimited_matvec(kernel, sigma, ps.points, weights)
    for box in tree.nonempty_leaves:
        targets = tree.points_in(box)
        sources = _neighbor_sources(tree, box)
        offsets = ps.points[targets][:, None, :] - ps.points[sources][None, :, :]
        flat = offsets.reshape(-1, ps.d)
        banded = eval_bandlimited(
            kernel, sigma, flat[:, 0] if ps.d == 1 else flat, d=ps.d
        ).reshape(len(targets), len(sources))
        exact = eval_kernel(kernel, np.linalg.norm(offsets, axis=2))
        values[targets] += (exact - banded) @ weights[sources]
    return values


def complexity_model(n: int, m: int, nbar: float, e: float, d: int = 1) -> Dict:
    """
    Operation counts of the single-level method: near field `e N Nbar`,
    aggregation `N M^d`, translation `p^2 M^d` with `p = N / Nbar` boxes and
    disaggregation `N M^d`.
    """
    nodes = m**d
    boxes = n / nbar
    return {
        "t1_near": e * n * nbar,
        "t2_aggregate": n * nodes,
        "t3_translate": boxes**2 * nodes,
        "t4_disaggregate": n * nodes,
    }


Runner = Callable[[SumRequest], SumResult]


def single_level_runner(req: SumRequest) -> SumResult:
    """
    Builds the tree with occupancy sqrt(N) and runs the single-level method.
    """
    leaf_level = choose_leaf_level(req.ps.n, req.ps.d, occupancy=math.sqrt(req.ps.n))
    return fmm_matvec_single(req, build_tree(req.ps, leaf_level))


def direct_runner(req: SumRequest) -> SumResult:
    """Runs the direct sum of the original kernel."""
    return direct_matvec(req.kernel, req.ps, req.weights, threads=req.threads)


def benchmark_points(n: int, d: int, seed: int) -> PointSet:
    """Jittered quasi-uniform points on the unit box."""
    domain = (0.0, 1.0) if d == 1 else ((0.0, 0.0), (1.0, 1.0))
    return generate_quasiuniform(n, domain, seed=seed, jitter=0.3)


def complexity_probe(
    kernel: RadialKernel,
    sizes: Iterable[int],
    reps: int = 1,
    sigma: float = math.pi,
    runner: Optional[Runner] = None,
    d: int = 1,
    seed: int = 0,
    threads: int = 1,
    m_per_dim: Optional[int] = None,
) -> Tuple[pd.DataFrame, float]:
    """
    Times a matrix-vector product over growing problem sizes, with
    `M = choose_truncation(N)` unless a fixed truncation is given.

    Args:
        kernel: The kernel.
        sizes: Ascending problem sizes.
        reps: Repetitions per size; the fastest is kept.
        sigma: Bandwidth.
        runner: The method to time, the single-level FMM by default.
        d: Dimension.
        seed: Seed for points and weights.
        threads: Worker threads.
        m_per_dim: Fixed frequency nodes per dimension instead of the
            balanced truncation.

    Returns:
        One row per size with columns `n, time, near_pairs, far_work`, and
        the fitted log-log slope of time against n.
    """
    sizes = [int(size) for size in sizes]
    if sizes != sorted(sizes):
        raise ValueError("Sizes must be ascending")
    if reps < 1:
        raise ValueError(f"At least one repetition is needed, got {reps}")
    runner = runner or single_level_runner
    rows = []
    for n in sizes:
        ps = benchmark_points(n, d, seed)
        req = SumRequest(
            kernel=kernel,
            sigma=sigma,
            ps=ps,
            weights=generator(seed).standard_normal(n),
            m_per_dim=m_per_dim or choose_truncation(n),
            threads=threads,
        )
        timings = []
        for _ in range(reps):
            start = time.perf_counter()
            result = runner(req)
            timings.append(time.perf_counter() - start)
        rows.append(
            {
                "n": n,
                "time": min(timings),
                "near_pairs": result.stats.near_pairs,
                "far_work": result.stats.far_work,
            }
        )
        logger.debug("Timed n=%s in %.4fs", n, min(timings))
    frame = pd.DataFrame(rows)
    return frame, fit_loglog_slope(frame["n"], frame["time"])
