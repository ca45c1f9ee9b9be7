"""Interpolation and collocation solvers built around the fast products."""

import math
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from prefect.logging import get_logger
from pydantic import BaseModel, Field, validator
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg, gmres
from scipy.spatial.distance import cdist

from prefect_rbf_fmm.bandlimit import bandlimited_cross_matrix, bandlimited_matrix
from prefect_rbf_fmm.exceptions import (
    MemoryCapError,
    NonConvergenceError,
    SingularMatrixError,
)
from prefect_rbf_fmm.fmm import SumRequest, direct_matvec, fmm_matvec_single
from prefect_rbf_fmm.geometry import PointSet, build_tree, choose_leaf_level
from prefect_rbf_fmm.kernels import (
    RadialKernel,
    eval_kernel,
    eval_kernel_derivative,
    spectrum,
)
from prefect_rbf_fmm.mlfmm import (
    COARSEST_LEVEL,
    DEFAULT_STENCIL,
    build_level_grids,
    mlfmm_matvec,
)
from prefect_rbf_fmm.utilities import fit_loglog_slope, map_blocks, row_slices

logger = get_logger(__name__)

DENSE_LIMIT = 8192
EIGEN_LIMIT = 2048
EVALUATION_LATTICE = 1001
MIN_COLLOCATION_NODES = 5
TREND_SLACK = 0.3


class Backend(str, Enum):
    """
    Where the matrix-vector products of a Krylov solve come from.
    """

    DENSE = "dense"
    SINGLE_FMM = "single_fmm"
    MLFMM = "mlfmm"


class SigmaPolicy(str, Enum):
    """
    Bandwidth used for the spectral diagnostics.
    """

    PI = "pi"
    TWO_PI_OVER_Q = "two_pi_over_q"


class InterpolationProblem(BaseModel):
    """
    Find lambda with `sum_j lambda_j phi(x_i - x_j) = f(x_i)` at every site.

    Attributes:
        kernel: The kernel.
        ps: The data sites.
        rhs: Samples f(x_i).
        backend: Source of the matrix-vector products.
        tol: Relative residual tolerance of the Krylov iteration.
        max_iter: Matrix-vector products allowed.
        sigma: Bandwidth of the fast backends.
        m_per_dim: Frequency nodes per dimension of the fast backends.
        stencil: Lagrange stencil of the multilevel backend.
        leaf_level: Tree depth of the fast backends; chosen from N if omitted.
        threads: Worker threads inside each product.
    """

    kernel: RadialKernel
    ps: PointSet
    rhs: np.ndarray
    backend: Backend = Backend.DENSE
    tol: float = Field(default=1e-8, gt=0, lt=1)
    max_iter: int = Field(default=1000, ge=1)
    sigma: float = Field(default=math.pi, gt=0)
    m_per_dim: int = Field(default=64, ge=2)
    stencil: int = Field(default=DEFAULT_STENCIL, ge=2)
    leaf_level: Optional[int] = Field(default=None, ge=COARSEST_LEVEL)
    threads: int = Field(default=1, ge=1)

    class Config:
        arbitrary_types_allowed = True

    @validator("rhs")
    def _one_sample_per_site(cls, value, values):
        """
        One finite sample per data site.
        """
        value = np.array(value, dtype=float).ravel()
        ps = values.get("ps")
        if ps is not None and len(value) != ps.n:
            raise ValueError(f"Expected {ps.n} samples, got {len(value)}")
        if not np.all(np.isfinite(value)):
            raise ValueError("Samples must be finite")
        return value


class InterpolationSolution(BaseModel):
    """
    Coefficients of the interpolant and how they were found.

    Attributes:
        lam: The coefficients lambda_j.
        method: "cg" or "gmres".
        backend: Source of the products.
        iterations: Products performed by the Krylov method.
        residual: Relative residual `||A lambda - f|| / ||f||` recomputed with
            the direct sum of the kernel.
        backend_residual: The same residual measured with the backend's
            product, which decides convergence.
    """

    lam: np.ndarray
    method: str
    backend: Backend
    iterations: int
    residual: float
    backend_residual: float

    class Config:
        arbitrary_types_allowed = True


class SpectralDiagnostics(BaseModel):
    """
    Extreme eigenvalues of the band-limited interpolation matrix and the
    bounds they are checked against.

    Attributes:
        gamma_min: Smallest eigenvalue.
        gamma_max: Largest eigenvalue.
        cond: Their ratio, infinite if gamma_min is not positive.
        bound_gamma_min: `q^-d phi_hat(2 pi / q)`.
        bound_gamma_max: Gershgorin bound `N max |phi_sigma(x_j - x_k)|`.
        bound_cond: Ratio of the two bounds.
        tau: Algebraic spectral decay order of the kernel, if any.
        sigma: Bandwidth of the matrix.
        separation: Separation distance q.
        kappa: sigma times the mesh norm.
        n: Matrix size, which scales the roundoff allowance of the lower
            bound check.
    """

    gamma_min: float
    gamma_max: float
    cond: float
    bound_gamma_min: float
    bound_gamma_max: float
    bound_cond: float
    tau: Optional[float]
    sigma: float
    separation: float
    kappa: float
    n: int = 1

    @property
    def roundoff(self) -> float:
        """Eigensolver roundoff allowance `N eps gamma_max`."""
        return self.n * float(np.finfo(float).eps) * abs(self.gamma_max)

    @property
    def bound_holds(self) -> bool:
        """Whether gamma_min respects the lower bound up to roundoff."""
        return self.gamma_min >= self.bound_gamma_min - self.roundoff

    @property
    def resolved(self) -> bool:
        """Whether gamma_min stands clear of roundoff, so cond is meaningful."""
        return self.gamma_min > self.roundoff

    @property
    def gershgorin_holds(self) -> bool:
        """Whether gamma_max respects the Gershgorin bound."""
        return self.gamma_max <= self.bound_gamma_max * (1 + 1e-12)


class CollocationResult(BaseModel):
    """
    Outcome of one collocation solve of `-u'' + pi^2 u = 2 pi^2 sin(pi x)` on
    [0, 1] with homogeneous boundary values.

    Attributes:
        n: Number of nodes.
        rms: RMS error against sin(pi x) on the evaluation lattice.
        band_limited: Whether the band-limited kernel was used.
        sigma: Its bandwidth, if so.
        condition: 2-norm condition number of the collocation matrix.
        lattice: The evaluation lattice.
        solution: The approximate solution on the lattice.
    """

    n: int
    rms: float
    band_limited: bool
    sigma: Optional[float]
    condition: float
    lattice: np.ndarray
    solution: np.ndarray

    class Config:
        arbitrary_types_allowed = True


class ConditionFit(BaseModel):
    """
    Fit of measured condition numbers against `c q^(-2 tau)`.

    Attributes:
        constant: Smallest c bounding every measurement.
        slope: Measured log-log slope of cond against 1 / q.
        tau: The decay order checked against.
        within: Whether the slope stays below `2 tau (1 + slack)`.
    """

    constant: float
    slope: float
    tau: float
    within: bool


def assemble_dense(
    kernel: RadialKernel,
    ps: PointSet,
    band_limited: bool = False,
    sigma: Optional[float] = None,
    max_n: int = DENSE_LIMIT,
    threads: int = 1,
) -> np.ndarray:
    """
    Assembles the interpolation matrix `A_ij = phi(x_i - x_j)` or its
    band-limited counterpart. The upper triangle is mirrored, so the result
    is exactly symmetric.

    Args:
        kernel: The kernel.
        ps: The data sites.
        band_limited: Use the band-limited kernel.
        sigma: Its bandwidth; required with `band_limited`.
        max_n: Largest admissible N.
        threads: Worker threads over row blocks.

    Returns:
        The N x N matrix.

    Raises:
        MemoryCapError: If N exceeds `max_n`.
    """
    if ps.n > max_n:
        raise MemoryCapError(
            f"Dense assembly is capped at {max_n} points, got {ps.n}"
        )
    if band_limited:
        if sigma is None:
            raise ValueError("A bandwidth is required for the band-limited matrix")
        matrix = bandlimited_matrix(kernel, sigma, ps.points)
    else:
        matrix = np.zeros((ps.n, ps.n))

        def rows(block: slice):
            matrix[block] = eval_kernel(kernel, cdist(ps.points[block], ps.points))

        map_blocks(rows, row_slices(ps.n, 256), threads)
        matrix = np.triu(matrix) + np.triu(matrix, 1).T
    logger.debug("Assembled a dense %s x %s matrix", ps.n, ps.n)
    return matrix


def _fast_leaf_level(prob: InterpolationProblem, occupancy: float) -> int:
    if prob.leaf_level is not None:
        return prob.leaf_level
    return choose_leaf_level(prob.ps.n, prob.ps.d, occupancy=occupancy)


def backend_operator(prob: InterpolationProblem) -> Callable[[np.ndarray], np.ndarray]:
    """
    The product `v -> A v` of the problem's backend.

    Trees, grids and the dense matrix are built once and shared by every call.
    """
    backend = Backend(prob.backend)
    if backend == Backend.DENSE:
        matrix = assemble_dense(prob.kernel, prob.ps, threads=prob.threads)
        return lambda v: matrix @ v

    def request(v: np.ndarray) -> SumRequest:
        return SumRequest(
            kernel=prob.kernel,
            sigma=prob.sigma,
            ps=prob.ps,
            weights=v,
            m_per_dim=prob.m_per_dim,
            threads=prob.threads,
        )

    if backend == Backend.SINGLE_FMM:
        tree = build_tree(
            prob.ps, _fast_leaf_level(prob, occupancy=math.sqrt(prob.ps.n))
        )
        return lambda v: fmm_matvec_single(request(v), tree).values

    leaf_level = max(_fast_leaf_level(prob, occupancy=32), COARSEST_LEVEL + 1)
    tree = build_tree(prob.ps, leaf_level)
    grids = build_level_grids(
        prob.kernel, prob.sigma, prob.m_per_dim, leaf_level, prob.ps.d, prob.stencil
    )
    return lambda v: mlfmm_matvec(request(v), tree, grids).values


def solve_interpolation(prob: InterpolationProblem) -> InterpolationSolution:
    """
    Solves the interpolation system matrix-free: conjugate gradients for
    positive definite kernels, GMRES otherwise.

    Args:
        prob: The problem.

    Returns:
        The coefficients and the iteration statistics.

    Raises:
        NonConvergenceError: If the tolerance is not met within `max_iter`
            products.
    """
    n = prob.ps.n
    product = backend_operator(prob)
    calls = {"count": 0}

    def counted(v: np.ndarray) -> np.ndarray:
        calls["count"] += 1
        return product(np.asarray(v, dtype=float).ravel())

    operator = LinearOperator((n, n), matvec=counted, dtype=float)
    rhs_norm = float(np.linalg.norm(prob.rhs))
    method = "cg" if prob.kernel.positive_definite(prob.ps.d) else "gmres"
    logger.info(
        "Solving %s interpolation over %s points with %s on the %s backend",
        prob.kernel.spec,
        n,
        method,
        prob.backend.value,
    )
    if rhs_norm == 0:
        return InterpolationSolution(
            lam=np.zeros(n),
            method=method,
            backend=prob.backend,
            iterations=0,
            residual=0.0,
            backend_residual=0.0,
        )

    if method == "cg":
        lam, info = cg(operator, prob.rhs, rtol=prob.tol, atol=0, maxiter=prob.max_iter)
    else:
        restart = min(n, prob.max_iter)
        lam, info = gmres(
            operator,
            prob.rhs,
            rtol=prob.tol,
            atol=0,
            restart=restart,
            maxiter=max(1, math.ceil(prob.max_iter / restart)),
        )
    iterations = calls["count"]
    residual = float(np.linalg.norm(product(lam) - prob.rhs)) / rhs_norm
    if info != 0:
        raise NonConvergenceError(
            f"{method} stopped after {iterations} products at relative residual "
            f"{residual:.3e} (tolerance {prob.tol:.1e})",
            residual=residual,
            iterations=iterations,
        )
    direct = direct_matvec(prob.kernel, prob.ps, lam, threads=prob.threads).values
    direct_residual = float(np.linalg.norm(direct - prob.rhs)) / rhs_norm
    logger.debug(
        "Converged in %s products, residual %.3e (direct %.3e)",
        iterations,
        residual,
        direct_residual,
    )
    return InterpolationSolution(
        lam=lam,
        method=method,
        backend=prob.backend,
        iterations=iterations,
        residual=direct_residual,
        backend_residual=residual,
    )


def interpolant(
    kernel: RadialKernel, ps: PointSet, lam: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """
    Evaluates `s(x) = sum_j lambda_j phi(x - x_j)` at arbitrary points.
    """
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    return eval_kernel(kernel, cdist(x, ps.points)) @ np.asarray(lam, dtype=float)


def _collocation_columns(
    kernel: RadialKernel,
    targets: np.ndarray,
    nodes: np.ndarray,
    band_limited: bool,
    sigma: Optional[float],
    derivative: int = 0,
) -> np.ndarray:
    if band_limited:
        return bandlimited_cross_matrix(
            kernel, sigma, targets, nodes, derivative=derivative
        )
    radii = np.abs(targets[:, None] - nodes[None, :])
    if derivative:
        return eval_kernel_derivative(kernel, radii, derivative)
    return eval_kernel(kernel, radii)


def default_collocation_sigma(n: int) -> float:
    """
    Bandwidth `2 pi / q` for n uniform nodes on [0, 1], where q is half the
    node spacing.
    """
    return 4 * math.pi * (n - 1)


def solve_collocation_1d(
    n: int,
    kernel: RadialKernel,
    band_limited: bool = False,
    sigma: Optional[float] = None,
    lattice_size: int = EVALUATION_LATTICE,
) -> CollocationResult:
    """
    Unsymmetric collocation of `-u'' + pi^2 u = 2 pi^2 sin(pi x)` on [0, 1]
    with `u(0) = u(1) = 0`, whose solution is sin(pi x).

    Interior rows apply `-d^2/dx^2 + pi^2` to the kernel columns, boundary
    rows apply the identity. The approximation is measured on a uniform
    lattice.

    Args:
        n: Uniform nodes including both end points, at least 5.
        kernel: The kernel, typically `mq:c=1`.
        band_limited: Collocate with the band-limited kernel.
        sigma: Its bandwidth; `default_collocation_sigma(n)` if omitted.
        lattice_size: Points of the evaluation lattice.

    Returns:
        The RMS error, the solution on the lattice and the matrix condition.

    Raises:
        SingularMatrixError: If the collocation matrix cannot be solved.
    """
    if n < MIN_COLLOCATION_NODES:
        raise ValueError(f"Collocation needs at least 5 nodes, got {n}")
    if band_limited and sigma is None:
        sigma = default_collocation_sigma(n)
    nodes = np.linspace(0.0, 1.0, n)
    values = _collocation_columns(kernel, nodes, nodes, band_limited, sigma)
    second = _collocation_columns(kernel, nodes, nodes, band_limited, sigma, 2)

    matrix = -second + math.pi**2 * values
    matrix[[0, -1]] = values[[0, -1]]
    rhs = 2 * math.pi**2 * np.sin(math.pi * nodes)
    rhs[[0, -1]] = 0.0

    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition) or condition * np.finfo(float).eps >= 1:
        raise SingularMatrixError(
            f"The collocation matrix for n={n} is singular to working precision",
            condition=condition,
        )
    try:
        lam = linalg.solve(matrix, rhs)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(
            f"The collocation matrix for n={n} could not be factorized",
            condition=condition,
        ) from exc

    lattice = np.linspace(0.0, 1.0, lattice_size)
    columns = _collocation_columns(kernel, lattice, nodes, band_limited, sigma)
    solution = columns @ lam
    rms = float(np.sqrt(np.mean((solution - np.sin(math.pi * lattice)) ** 2)))
    logger.debug("Collocation with n=%s: rms %.3e, cond %.3e", n, rms, condition)
    return CollocationResult(
        n=n,
        rms=rms,
        band_limited=band_limited,
        sigma=sigma,
        condition=condition,
        lattice=lattice,
        solution=solution,
    )


def best_collocation_sigma(
    n: int, kernel: RadialKernel, candidates: Optional[Iterable[float]] = None
) -> Tuple[CollocationResult, CollocationResult]:
    """
    Runs the plain collocation and the band-limited one for each candidate
    bandwidth, keeping the band-limited run closest to the plain RMS.

    The default candidates are pi, `2 pi / q` and `4 pi / q`.

    Returns:
        The plain result and the best band-limited result.
    """
    plain = solve_collocation_1d(n, kernel)
    if candidates is None:
        two_pi_over_q = default_collocation_sigma(n)
        candidates = (math.pi, two_pi_over_q, 2 * two_pi_over_q)
    runs: List[CollocationResult] = []
    for sigma in candidates:
        try:
            runs.append(solve_collocation_1d(n, kernel, band_limited=True, sigma=sigma))
        except SingularMatrixError as exc:
            logger.debug("Skipping sigma=%s: %s", sigma, exc)
    if not runs:
        raise SingularMatrixError(
            f"No candidate bandwidth gave a solvable system for n={n}",
            condition=math.inf,
        )
    best = min(runs, key=lambda run: abs(math.log(run.rms / plain.rms)))
    return plain, best


def spectral_diagnostics(
    kernel: RadialKernel,
    ps: PointSet,
    sigma_policy: SigmaPolicy = SigmaPolicy.TWO_PI_OVER_Q,
) -> SpectralDiagnostics:
    """
    Extreme eigenvalues of the band-limited matrix `A_sigma` by a dense
    symmetric eigensolve, with the lower bound `q^-d phi_hat(2 pi / q)` and
    the Gershgorin upper bound.

    Args:
        kernel: The kernel.
        ps: The data sites, at most 2048.
        sigma_policy: Bandwidth pi or `2 pi / q`.

    Returns:
        The diagnostics.

    Raises:
        MemoryCapError: If N exceeds 2048.
        SingularMatrixError: If the eigensolve fails.
    """
    if ps.n > EIGEN_LIMIT:
        raise MemoryCapError(
            f"Dense eigensolves are capped at {EIGEN_LIMIT} points, got {ps.n}"
        )
    q = ps.separation
    frequency = 2 * math.pi / q
    sigma = math.pi if SigmaPolicy(sigma_policy) == SigmaPolicy.PI else frequency
    matrix = assemble_dense(kernel, ps, band_limited=True, sigma=sigma)
    try:
        eigenvalues = linalg.eigvalsh(matrix)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(
            f"The eigensolve of the {ps.n} x {ps.n} matrix failed",
            condition=math.inf,
        ) from exc

    gamma_min, gamma_max = float(eigenvalues[0]), float(eigenvalues[-1])
    bound_gamma_min = float(spectrum(kernel, frequency, ps.d)) / q**ps.d
    bound_gamma_max = ps.n * float(np.max(np.abs(matrix)))
    mesh = ps.mesh_norm if ps.n > 1 else 0.0
    return SpectralDiagnostics(
        gamma_min=gamma_min,
        gamma_max=gamma_max,
        cond=gamma_max / gamma_min if gamma_min > 0 else math.inf,
        bound_gamma_min=bound_gamma_min,
        bound_gamma_max=bound_gamma_max,
        bound_cond=bound_gamma_max / bound_gamma_min
        if bound_gamma_min > 0
        else math.inf,
        tau=kernel.decay_order(ps.d),
        sigma=sigma,
        separation=q,
        kappa=sigma * mesh,
        n=ps.n,
    )


def fit_condition_bound(
    q_values: Iterable[float],
    conds: Iterable[float],
    tau: float,
    slack: float = TREND_SLACK,
) -> ConditionFit:
    """
    Fits `cond <= c q^(-2 tau)`: c is the smallest constant that bounds every
    sample, the slope is measured on log cond against log(1 / q).
    """
    q_values = np.asarray(list(q_values), dtype=float)
    conds = np.asarray(list(conds), dtype=float)
    if tau <= 0:
        raise ValueError(f"The decay order must be positive, got {tau}")
    slope = fit_loglog_slope(1.0 / q_values, conds)
    return ConditionFit(
        constant=float(np.max(conds * q_values ** (2 * tau))),
        slope=slope,
        tau=tau,
        within=slope <= 2 * tau * (1 + slack),
    )


def diagnostics_frame(diagnostics: Dict[str, SpectralDiagnostics]) -> pd.DataFrame:
    """
    One row per labelled diagnostics record, for CSV output.
    """
    return pd.DataFrame(
        [
            {
                "label": label,
                **record.dict(),
                "bound_holds": record.bound_holds,
                "gershgorin_holds": record.gershgorin_holds,
                "resolved": record.resolved,
            }
            for label, record in diagnostics.items()
        ]
    )
