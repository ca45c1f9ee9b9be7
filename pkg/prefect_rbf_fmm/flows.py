"""Prefect tasks and flows running the experiments of the collection."""

import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from prefect import flow, get_run_logger, task
from pydantic import BaseModel, Field

from prefect_rbf_fmm.bandlimit import (
    LowRankFactors,
    eval_bandlimited,
    factors_frame,
    lowrank_eval,
    make_quadrature,
    translation_coefficients,
)
from prefect_rbf_fmm.config import RunConfig
from prefect_rbf_fmm.fmm import (
    Runner,
    SumResult,
    complexity_probe,
    direct_matvec,
    direct_runner,
    far_field_reference,
    fmm_matvec_single,
    single_level_runner,
)
from prefect_rbf_fmm.geometry import PointSet, build_tree, generate_quasiuniform
from prefect_rbf_fmm.io import read_vector
from prefect_rbf_fmm.kernels import (
    KernelName,
    RadialKernel,
    eval_kernel,
    parse_kernel_spec,
)
from prefect_rbf_fmm.mlfmm import (
    COARSEST_LEVEL,
    build_level_grids,
    lagrange_sup_error,
    mlfmm_matvec,
    multilevel_runner,
)
from prefect_rbf_fmm.solver import (
    Backend,
    InterpolationProblem,
    InterpolationSolution,
    SpectralDiagnostics,
    best_collocation_sigma,
    diagnostics_frame,
    fit_condition_bound,
    solve_collocation_1d,
    solve_interpolation,
    spectral_diagnostics,
)
from prefect_rbf_fmm.utilities import fit_loglog_slope, generator

COLLOCATION_SIZES = tuple(range(9, 16))
LAGRANGE_STENCILS = tuple(range(5, 13))
SEPARATIONS = (2.0, 4.0, 8.0, 16.0)
TRUNCATIONS = (16, 32, 64, 128)
BENCH_SIZES = tuple(2**p for p in range(10, 17))
COLLOCATION_KERNEL = "mq:c=1"
STABILITY_INSTANCES = 20
STABILITY_SIZES = (8, 64)
STABILITY_JITTER = 0.4

# reference RMS errors of the MQ collocation and Lagrange sup-errors
COLLOCATION_REFERENCE = {
    9: 1.469348643e-04,
    10: 9.414500417e-05,
    11: 2.806645307e-05,
    12: 1.823679202e-05,
    13: 5.348123608e-06,
    14: 3.512156051e-06,
    15: 1.007928224e-06,
}
LAGRANGE_REFERENCE = {
    5: 0.0830,
    6: 0.0211,
    7: 0.0048,
    8: 5.7199e-04,
    9: 8.1828e-05,
    10: 1.3111e-05,
    11: 1.9350e-06,
    12: 1.5142e-07,
}

RUNNERS: Dict[str, Runner] = {
    "direct": direct_runner,
    "single": single_level_runner,
    "multilevel": multilevel_runner,
}
# growth exponents used to extrapolate the next timing against the budget
EXPECTED_GROWTH = {"direct": 2.0, "single": 1.5, "multilevel": 1.2}
SLOPE_RANGES = {
    "direct": (1.85, 2.15),
    "single": (1.3, 1.7),
    "multilevel": (0.0, 1.3),
}


class ExperimentReport(BaseModel):
    """
    What an experiment produced.

    Attributes:
        name: Name of the experiment.
        frames: Tables by artifact name, e.g. `profile` or `table5`.
        checks: Named pass/fail checks evaluated on the tables.
        summary: Named scalar results.
    """

    name: str
    frames: Dict[str, pd.DataFrame] = Field(default_factory=dict)
    checks: Dict[str, bool] = Field(default_factory=dict)
    summary: Dict[str, float] = Field(default_factory=dict)

    class Config:
        arbitrary_types_allowed = True

    @property
    def failed(self) -> List[str]:
        """Names of the checks that did not pass."""
        return [name for name, passed in self.checks.items() if not passed]

    @property
    def passed(self) -> bool:
        """Whether every check passed."""
        return not self.failed


def _point_frame(ps: PointSet) -> pd.DataFrame:
    return pd.DataFrame(ps.points, columns=["x", "y"][: ps.d])


@task
def load_points(config: RunConfig) -> PointSet:
    """
    Reads or generates the points of a run.

    Args:
        config: The run configuration.

    Returns:
        The point set.
    """
    logger = get_run_logger()
    ps = config.point_set()
    logger.info("Loaded %s points in %s dimension(s)", ps.n, ps.d)
    return ps


@task
def compute_factors(kernel: RadialKernel, sigma: float, m: int) -> LowRankFactors:
    """
    Samples the translation spectrum on the one-dimensional grid of
    bandwidth sigma with m nodes.
    """
    logger = get_run_logger()
    logger.info("Sampling the spectrum of %s on %s nodes", kernel.spec, m)
    return translation_coefficients(kernel, make_quadrature(sigma, m, 1))


@task
def kernel_profile(
    kernel: RadialKernel, factors: LowRankFactors, lattice_points: int = 201
) -> pd.DataFrame:
    """
    The kernel, its band-limited version and the separated form on a lattice
    over [0, 1].
    """
    logger = get_run_logger()
    logger.info("Evaluating %s on %s radii", kernel.spec, lattice_points)
    r = np.linspace(0.0, 1.0, lattice_points)
    return pd.DataFrame(
        {
            "r": r,
            "phi": eval_kernel(kernel, r),
            "phi_sigma": eval_bandlimited(kernel, factors.band, r),
            "phi_sigma_fmm": lowrank_eval(factors, r, 0.0),
        }
    )


def _spectrum_checks(kernel: RadialKernel, spectrum: pd.DataFrame) -> Dict[str, bool]:
    magnitude = np.hypot(spectrum["c_value_re"], spectrum["c_value_im"]).to_numpy()
    nodes = spectrum["node"].to_numpy()
    if kernel.name in (KernelName.IMQ, KernelName.GAUSSIAN):
        edge = np.abs(nodes) >= np.quantile(np.abs(nodes), 0.9)
        return {"edge_decay": bool(magnitude[edge].mean() < 0.1 * magnitude.max())}
    if kernel.name == KernelName.MQ:
        positive = magnitude[nodes > 0]
        return {"decreasing_away_from_origin": bool(np.all(np.diff(positive) <= 0))}
    if kernel.compact_support is not None:
        return {"spectrum_not_constant": bool(magnitude.max() > 1.5 * magnitude.min())}
    return {}


@flow(name="kernel-dump")
def kernel_dump_flow(config: RunConfig, lattice_points: int = 201) -> ExperimentReport:
    """
    Dumps a kernel, its band-limited version and the separated form on radii
    in [0, 1], together with the translation spectrum on the configured grid.

    Args:
        config: The run configuration; kernel, sigma and m are used.
        lattice_points: Number of radii.

    Returns:
        A report with the `profile` and `spectrum` tables.

    Example:
        ```python
        from prefect_rbf_fmm.config import RunConfig
        from prefect_rbf_fmm.flows import kernel_dump_flow

        report = kernel_dump_flow(RunConfig(kernel="imq:c=1", m=128))
        report.frames["spectrum"]
        ```
    """
    logger = get_run_logger()
    kernel = config.radial_kernel
    logger.info("Running kernel dump for %s", kernel.spec)
    factors = compute_factors(kernel, config.sigma, config.m)
    profile = kernel_profile(kernel, factors, lattice_points)
    spectrum = factors_frame(factors)
    spectrum.insert(1, "node", factors.grid.nodes[:, 0])
    spectrum.insert(2, "weight", factors.grid.weights)

    origin = profile.iloc[0]
    checks = {"spectrum_rows": len(spectrum) == config.m}
    if kernel.name == KernelName.IMQ:
        checks["origin_within_5_percent"] = bool(
            abs(origin["phi_sigma_fmm"] - origin["phi"]) <= 0.05 * abs(origin["phi"])
        )
    checks.update(_spectrum_checks(kernel, spectrum))
    return ExperimentReport(
        name="kernel-dump",
        frames={"profile": profile, "spectrum": spectrum},
        checks=checks,
        summary={
            "max_fmm_deviation": float(
                np.max(np.abs(profile["phi_sigma_fmm"] - profile["phi_sigma"]))
            ),
        },
    )


def _leaf_level(config: RunConfig, ps: PointSet) -> int:
    if config.backend == Backend.SINGLE_FMM:
        return config.leaf_level(ps, occupancy=math.sqrt(ps.n))
    return max(config.leaf_level(ps), COARSEST_LEVEL + 1)


@task
def run_matvec(config: RunConfig, ps: PointSet, weights: np.ndarray) -> SumResult:
    """
    One product with the configured backend.
    """
    logger = get_run_logger()
    logger.info("Running the %s product over %s points", config.backend.value, ps.n)
    kernel = config.radial_kernel
    if config.backend == Backend.DENSE:
        return direct_matvec(kernel, ps, weights, threads=config.threads)
    req = config.sum_request(ps, weights)
    leaf_level = _leaf_level(config, ps)
    if config.backend == Backend.SINGLE_FMM:
        return fmm_matvec_single(req, build_tree(ps, leaf_level))
    grids = build_level_grids(
        kernel,
        config.sigma,
        config.m,
        leaf_level,
        ps.d,
        config.stencil_k,
        config.grid_mode,
    )
    return mlfmm_matvec(req, build_tree(ps, leaf_level), grids)


def _relative_error(values: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.max(np.abs(reference)))
    return float(np.max(np.abs(values - reference))) / (scale or 1.0)


@flow(name="fmm-matvec")
def fmm_matvec_flow(config: RunConfig, tolerance: float = 1e-3) -> ExperimentReport:
    """
    One product with the configured backend, compared with the direct sum of
    the kernel and with the hybrid oracle that uses the kernel on adjacent
    boxes and its band-limited version elsewhere.

    Args:
        config: The run configuration.
        tolerance: Relative L-infinity tolerance against the hybrid oracle.

    Returns:
        A report with the `values` table.
    """
    logger = get_run_logger()
    logger.info("Running fmm-matvec with the %s backend", config.backend.value)
    kernel = config.radial_kernel
    ps = load_points(config)
    weights = config.weights(ps.n)
    result = run_matvec(config, ps, weights)
    direct = direct_matvec(kernel, ps, weights, threads=config.threads).values

    frame = _point_frame(ps)
    frame["weight"] = weights
    frame["value"] = result.values
    frame["direct"] = direct
    checks = {}
    summary = {"relative_error_direct": _relative_error(result.values, direct)}
    if config.backend != Backend.DENSE:
        tree = build_tree(ps, _leaf_level(config, ps))
        hybrid = far_field_reference(kernel, ps, weights, tree, config.sigma)
        frame["reference"] = hybrid
        summary["relative_error_reference"] = _relative_error(result.values, hybrid)
        checks["matches_reference"] = summary["relative_error_reference"] < tolerance
        checks["imag_residual_within_bound"] = bool(
            result.stats.max_imag_residual
            <= result.stats.imag_residual_bound * (1 + 1e-9) + 1e-12
        )
    summary["max_imag_residual"] = result.stats.max_imag_residual
    summary["translations"] = float(result.stats.translations)
    return ExperimentReport(
        name="fmm-matvec", frames={"values": frame}, checks=checks, summary=summary
    )


@task
def two_cluster_errors(
    kernel: RadialKernel,
    sigma: float,
    separations: Sequence[float],
    truncations: Sequence[int],
    cluster_size: int,
    seed: int,
) -> pd.DataFrame:
    """
    Largest deviation of the separated form from the kernel between two
    unit clusters whose centers are R apart, for every R and M.
    """
    logger = get_run_logger()
    logger.info(
        "Sweeping %s separations and %s truncations for %s",
        len(separations),
        len(truncations),
        kernel.spec,
    )
    rng = generator(seed)
    sources = rng.uniform(-0.5, 0.5, cluster_size)
    offsets = rng.uniform(-0.5, 0.5, cluster_size)
    rows = []
    for m in truncations:
        factors = translation_coefficients(kernel, make_quadrature(sigma, m, 1))
        for separation in separations:
            displacements = (separation + offsets[:, None] - sources[None, :]).ravel()
            approximation = lowrank_eval(factors, displacements, 0.0)
            exact = eval_kernel(kernel, np.abs(displacements))
            rows.append(
                {
                    "R": separation,
                    "M": m,
                    "error": float(np.max(np.abs(approximation - exact))),
                }
            )
    return pd.DataFrame(rows)


@flow(name="accuracy-sweep")
def accuracy_sweep_flow(
    config: RunConfig,
    separations: Sequence[float] = SEPARATIONS,
    truncations: Sequence[int] = TRUNCATIONS,
    cluster_size: int = 16,
) -> ExperimentReport:
    """
    Two-cluster accuracy of the far-field approximation over separations R
    and truncations M.

    Args:
        config: The run configuration; kernel, sigma and seed are used.
        separations: Distances between the cluster centers.
        truncations: Node counts of the frequency grid.
        cluster_size: Points per cluster.

    Returns:
        A report with the `errors` table of `R, M, error` rows.
    """
    logger = get_run_logger()
    kernel = config.radial_kernel
    logger.info("Running accuracy sweep for %s", kernel.spec)
    separations = sorted(float(value) for value in separations)
    truncations = sorted(int(value) for value in truncations)
    errors = two_cluster_errors(
        kernel, config.sigma, separations, truncations, cluster_size, config.seed
    )
    surface = errors.pivot(index="R", columns="M", values="error")
    along_m = surface.to_numpy()
    checks = {
        "error_nonincreasing_in_m": bool(
            np.all(along_m[:, 1:] <= 1.1 * along_m[:, :-1])
        )
    }
    if kernel.name == KernelName.IMQ and len(separations) > 1:
        finest = surface[truncations[-1]]
        checks["larger_separation_not_worse"] = bool(
            finest.iloc[-1] <= finest.iloc[0]
        )
    return ExperimentReport(
        name="accuracy-sweep",
        frames={"errors": errors},
        checks=checks,
        summary={"min_error": float(errors["error"].min())},
    )


@task
def time_backend(
    config: RunConfig,
    backend: str,
    sizes: Sequence[int],
    budget_seconds: float,
) -> pd.DataFrame:
    """
    Times one backend over ascending sizes, refusing every size whose
    extrapolated time exceeds the budget.
    """
    logger = get_run_logger()
    logger.info("Timing the %s backend on up to %s sizes", backend, len(sizes))
    frames = []
    last: Optional[Tuple[int, float]] = None
    for n in sizes:
        if last is not None:
            predicted = last[1] * (n / last[0]) ** EXPECTED_GROWTH[backend]
            if predicted > budget_seconds:
                logger.warning(
                    "Refusing n=%s for %s: about %.1fs exceeds the %.1fs budget",
                    n,
                    backend,
                    predicted,
                    budget_seconds,
                )
                break
        frame, _ = complexity_probe(
            config.radial_kernel,
            [n],
            sigma=config.sigma,
            runner=RUNNERS[backend],
            d=config.dimension,
            seed=config.seed,
            threads=config.threads,
            m_per_dim=config.m if backend == "multilevel" else None,
        )
        frames.append(frame.assign(backend=backend))
        last = (n, float(frame["time"].iloc[0]))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


@flow(name="bench")
def bench_flow(
    config: RunConfig,
    sizes: Sequence[int] = BENCH_SIZES,
    backends: Iterable[str] = tuple(RUNNERS),
    budget_seconds: float = 60.0,
) -> ExperimentReport:
    """
    Wall-clock times of the direct, single-level and multilevel products over
    growing N, with fitted log-log slopes.

    Args:
        config: The run configuration; kernel, sigma, m (multilevel),
            dimension, seed and threads are used.
        sizes: Ascending problem sizes.
        backends: Any of "direct", "single" and "multilevel".
        budget_seconds: Largest extrapolated time of a single product.

    Returns:
        A report with the `timings` and `slopes` tables; slope checks are only
        evaluated for backends timed on at least three sizes.
    """
    logger = get_run_logger()
    logger.info("Running bench over %s sizes", len(sizes))
    sizes = sorted(int(size) for size in sizes)
    timings, slopes, checks = [], [], {}
    for backend in backends:
        if backend not in RUNNERS:
            raise ValueError(f"Unknown backend {backend!r}; use one of {list(RUNNERS)}")
        frame = time_backend(config, backend, sizes, budget_seconds)
        timings.append(frame)
        if len(frame) < 2:
            continue
        slope = fit_loglog_slope(frame["n"], frame["time"])
        slopes.append({"backend": backend, "slope": slope, "sizes": len(frame)})
        if len(frame) >= 3:
            low, high = SLOPE_RANGES[backend]
            checks[f"{backend}_slope"] = low <= slope <= high
    return ExperimentReport(
        name="bench",
        frames={
            "timings": pd.concat(timings, ignore_index=True),
            "slopes": pd.DataFrame(slopes, columns=["backend", "slope", "sizes"]),
        },
        checks=checks,
    )


@task
def solve_task(prob: InterpolationProblem) -> InterpolationSolution:
    """
    Solves an interpolation problem.
    """
    logger = get_run_logger()
    logger.info(
        "Solving for %s coefficients on the %s backend", prob.ps.n, prob.backend.value
    )
    return solve_interpolation(prob)


@flow(name="solve")
def solve_flow(
    config: RunConfig,
    rhs_file: Optional[str] = None,
    rhs_column: Optional[str] = None,
) -> ExperimentReport:
    """
    Interpolates data at the configured points with a Krylov method whose
    products come from the configured backend.

    Args:
        config: The run configuration.
        rhs_file: CSV holding the samples; `prod sin(pi x)` if omitted.
        rhs_column: Column of the samples, the last one by default.

    Returns:
        A report with the `lambda` table.
    """
    logger = get_run_logger()
    logger.info("Running solve with the %s backend", config.backend.value)
    kernel = config.radial_kernel
    ps = load_points(config)
    if rhs_file is not None:
        rhs = read_vector(rhs_file, rhs_column)
    else:
        rhs = np.prod(np.sin(math.pi * ps.points), axis=1)
    prob = InterpolationProblem(
        kernel=kernel,
        ps=ps,
        rhs=rhs,
        backend=config.backend,
        tol=config.tol,
        max_iter=config.max_iter,
        sigma=config.sigma,
        m_per_dim=config.m,
        stencil=config.stencil_k,
        leaf_level=config.levels,
        threads=config.threads,
    )
    solution = solve_task(prob)
    frame = _point_frame(ps)
    frame["rhs"] = prob.rhs
    frame["lambda"] = solution.lam
    return ExperimentReport(
        name="solve",
        frames={"lambda": frame},
        checks={
            "residual_within_tol": solution.backend_residual
            <= config.tol * (1 + 1e-6)
        },
        summary={
            "iterations": float(solution.iterations),
            "residual": solution.residual,
            "backend_residual": solution.backend_residual,
        },
    )


@task
def collocation_table(
    kernel: RadialKernel,
    sizes: Sequence[int],
    band_limited: bool = True,
    sigma: Optional[float] = None,
) -> pd.DataFrame:
    """
    RMS errors of the collocation solve, plain and band-limited, one row per
    node count. Without a sigma the best of the default candidates is used.
    """
    logger = get_run_logger()
    logger.info("Collocating with %s for %s node counts", kernel.spec, len(sizes))
    rows = []
    for n in sizes:
        row = {"N": n}
        if not band_limited:
            plain = solve_collocation_1d(n, kernel)
        elif sigma is None:
            plain, banded = best_collocation_sigma(n, kernel)
        else:
            plain = solve_collocation_1d(n, kernel)
            banded = solve_collocation_1d(n, kernel, band_limited=True, sigma=sigma)
        row["rms_plain"] = plain.rms
        row["condition"] = plain.condition
        if band_limited:
            row["rms_bandlimited"] = banded.rms
            row["sigma"] = banded.sigma
        rows.append(row)
    return pd.DataFrame(rows)


def _collocation_checks(table: pd.DataFrame) -> Dict[str, bool]:
    checks = {"plain_rms_decreasing": bool(np.all(np.diff(table["rms_plain"]) < 0))}
    if "rms_bandlimited" in table:
        tracked = table[table["N"] <= 14]
        agreement = np.abs(tracked["rms_bandlimited"] / tracked["rms_plain"] - 1)
        checks["bandlimited_tracks_plain"] = bool(np.all(agreement <= 1e-2))
    return checks


@flow(name="collocate1d")
def collocate1d_flow(
    config: RunConfig,
    sizes: Sequence[int] = COLLOCATION_SIZES,
    band_limited: bool = True,
    sigma: Optional[float] = None,
) -> ExperimentReport:
    """
    Collocation of `-u'' + pi^2 u = 2 pi^2 sin(pi x)` on [0, 1] for several
    node counts, with the plain and the band-limited kernel.

    Args:
        config: The run configuration; the kernel is used.
        sizes: Node counts, each at least 5.
        band_limited: Also solve with the band-limited kernel.
        sigma: Its bandwidth; swept over pi, 2 pi / q and 4 pi / q if omitted.

    Returns:
        A report with the `rms` table.
    """
    logger = get_run_logger()
    kernel = config.radial_kernel
    logger.info("Running collocate1d for %s", kernel.spec)
    table = collocation_table(kernel, list(sizes), band_limited, sigma)
    return ExperimentReport(
        name="collocate1d",
        frames={"rms": table},
        checks=_collocation_checks(table),
        summary={"min_rms": float(table["rms_plain"].min())},
    )


@task
def lagrange_table(stencils: Sequence[int], a: float, sigma: float) -> pd.DataFrame:
    """
    Sup-errors of the Lagrange interpolation between level grids.
    """
    logger = get_run_logger()
    logger.info("Measuring Lagrange errors for %s stencils", len(stencils))
    return pd.DataFrame(
        {
            "K": list(stencils),
            "sup_error": [lagrange_sup_error(k, a, sigma) for k in stencils],
        }
    )


def _against_reference(
    table: pd.DataFrame, key: str, column: str, reference: Dict[int, float], factor
) -> pd.DataFrame:
    table = table.copy()
    table["reference"] = table[key].map(reference)
    ratio = table[column] / table["reference"]
    table["pass"] = (ratio <= factor) & (ratio >= 1 / factor)
    return table


@flow(name="tables")
def tables_flow(config: RunConfig) -> ExperimentReport:
    """
    Reproduces the reference collocation errors (MQ with c = 1, N = 9..15)
    and Lagrange interpolation errors (K = 5..12, a = 1, sigma = pi), each
    row compared with its reference value.

    Args:
        config: The run configuration; only its output settings matter.

    Returns:
        A report with the collocation errors as `table4` and the Lagrange
        errors as `table5`.
    """
    logger = get_run_logger()
    logger.info("Running tables with seed %s", config.seed)
    kernel = parse_kernel_spec(COLLOCATION_KERNEL)
    sweep = collocation_table(kernel, list(COLLOCATION_SIZES))
    collocation = _against_reference(
        sweep, "N", "rms_plain", COLLOCATION_REFERENCE, factor=10
    )
    lagrange = _against_reference(
        lagrange_table(list(LAGRANGE_STENCILS), 1.0, math.pi),
        "K",
        "sup_error",
        LAGRANGE_REFERENCE,
        factor=5,
    )
    checks = _collocation_checks(sweep)
    checks["collocation_within_10x"] = bool(collocation["pass"].all())
    checks["lagrange_within_5x"] = bool(lagrange["pass"].all())
    checks["lagrange_decreasing"] = bool(np.all(np.diff(lagrange["sup_error"]) < 0))
    return ExperimentReport(
        name="tables",
        frames={
            "table4": collocation[
                ["N", "rms_plain", "rms_bandlimited", "reference", "pass"]
            ],
            "table5": lagrange[["K", "sup_error", "reference", "pass"]],
        },
        checks=checks,
    )


def _stability_point_sets(
    counts: Sequence[int], jitter: float, seed: int
) -> Dict[str, PointSet]:
    point_sets = {}
    for index, n in enumerate(counts):
        instance_seed = seed + index
        point_sets[f"unit-{index}"] = generate_quasiuniform(
            n, (0.0, 1.0), seed=instance_seed, jitter=jitter
        )
        point_sets[f"spread-{index}"] = generate_quasiuniform(
            n, (0.0, float(n)), seed=instance_seed, jitter=jitter
        )
    return point_sets


@task
def spectral_sweep(
    kernel: RadialKernel, point_sets: Dict[str, PointSet]
) -> Dict[str, SpectralDiagnostics]:
    """
    Dense eigensolves of the band-limited matrix with sigma = 2 pi / q, one
    per labelled point set.
    """
    logger = get_run_logger()
    logger.info("Running %s eigensolves for %s", len(point_sets), kernel.spec)
    return {
        label: spectral_diagnostics(kernel, ps) for label, ps in point_sets.items()
    }


@flow(name="stability")
def stability_flow(
    config: RunConfig,
    instances: int = STABILITY_INSTANCES,
    sizes: Tuple[int, int] = STABILITY_SIZES,
    jitter: float = STABILITY_JITTER,
) -> ExperimentReport:
    """
    Checks the smallest eigenvalue of the band-limited interpolation matrix
    against `q^-1 phi_hat(2 pi / q)` and the largest against its Gershgorin
    bound on random quasi-uniform sets, and fits the growth of the condition
    number against `q^(-2 tau)`.

    Every instance is drawn twice: on [0, 1], where the lower bound is
    sharpest, and stretched to (0, N), where the smallest eigenvalue stays
    clear of roundoff and the condition number can be fitted.

    Args:
        config: The run configuration; kernel and seed are used.
        instances: Number of random sets per family.
        sizes: Inclusive range of N.
        jitter: Jitter of the lattices.

    Returns:
        A report with the `stability` table.

    Raises:
        ValueError: For a kernel that is not positive definite in one
            dimension.
    """
    logger = get_run_logger()
    kernel = config.radial_kernel
    logger.info("Running stability over %s instances of %s", instances, kernel.spec)
    if not kernel.positive_definite(1):
        raise ValueError(
            f"The eigenvalue bounds need a positive definite kernel, got {kernel.spec}"
        )
    low, high = sizes
    counts = generator(config.seed).integers(low, high + 1, size=instances)
    point_sets = _stability_point_sets([int(n) for n in counts], jitter, config.seed)
    frame = diagnostics_frame(spectral_sweep(kernel, point_sets))
    frame.insert(1, "family", frame["label"].str.split("-").str[0])

    bound_violations = int((~frame["bound_holds"]).sum())
    gershgorin_violations = int((~frame["gershgorin_holds"]).sum())
    summary = {
        "bound_violations": float(bound_violations),
        "gershgorin_violations": float(gershgorin_violations),
    }
    tau = kernel.decay_order(1)
    fitted = frame[(frame["family"] == "spread") & frame["resolved"]]
    if tau is not None and fitted["separation"].nunique() > 1:
        fit = fit_condition_bound(fitted["separation"], fitted["cond"], tau)
        summary.update(
            tau=fit.tau,
            condition_slope=fit.slope,
            condition_constant=fit.constant,
            condition_within=float(fit.within),
        )
    else:
        logger.warning("Skipping the condition fit for %s", kernel.spec)
    return ExperimentReport(
        name="stability",
        frames={"stability": frame},
        checks={
            "lower_bound_holds": bound_violations == 0,
            "gershgorin_bound_holds": gershgorin_violations == 0,
        },
        summary=summary,
    )
