"""The `rbf-fmm` command line: one command per experiment flow."""

import functools
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import typer

from prefect_rbf_fmm._version import __version__
from prefect_rbf_fmm.config import RunConfig
from prefect_rbf_fmm.exceptions import RbfFmmError
from prefect_rbf_fmm.flows import (
    BENCH_SIZES,
    COLLOCATION_SIZES,
    RUNNERS,
    SEPARATIONS,
    STABILITY_INSTANCES,
    STABILITY_JITTER,
    STABILITY_SIZES,
    TRUNCATIONS,
    ExperimentReport,
    accuracy_sweep_flow,
    bench_flow,
    collocate1d_flow,
    fmm_matvec_flow,
    kernel_dump_flow,
    solve_flow,
    stability_flow,
    tables_flow,
)
from prefect_rbf_fmm.io import write_frame
from prefect_rbf_fmm.solver import Backend

app = typer.Typer(
    name="rbf-fmm",
    help="Band-limited RBF fast multipole experiments.",
    no_args_is_help=True,
    add_completion=False,
)

KERNEL = typer.Option(None, "--kernel", help="Kernel such as imq:c=1.")
SIGMA = typer.Option(None, "--sigma", help="Bandwidth.")
M = typer.Option(None, "--m", help="Frequency nodes per dimension.")
LEVELS = typer.Option(None, "--levels", help="Leaf level of the box tree.")
STENCIL_K = typer.Option(None, "--stencil-k", help="Lagrange stencil size.")
SEED = typer.Option(None, "--seed", help="Seed of every random draw.")
OUT = typer.Option(None, "--out", help="Directory for the CSV artifacts.")
THREADS = typer.Option(None, "--threads", help="Worker threads.")
POINTS = typer.Option(None, "--points", help="CSV file with x (and y) columns.")
N_POINTS = typer.Option(None, "--n", help="Number of generated points.")
DIMENSION = typer.Option(None, "--dimension", help="Dimension of generated points.")
CONFIG_BLOCK = typer.Option(
    None, "--config-block", help="Name of a saved RunConfig block to start from."
)


def _fail(payload: Dict[str, object], code: int):
    typer.echo(json.dumps(payload), err=True)
    raise typer.Exit(code)


def reports_errors(fn: Callable) -> Callable:
    """
    Turns library errors into one line of JSON on standard error and exit
    code 2.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        """
        Used for decorator.
        """
        try:
            return fn(*args, **kwargs)
        except (RbfFmmError, ValueError) as exc:
            _fail({"error": type(exc).__name__, "message": str(exc)}, 2)

    return wrapper


def build_config(config_block: Optional[str] = None, **overrides) -> RunConfig:
    """
    A RunConfig from a saved block, if named, with every flag that was
    given applied on top.
    """
    values = {key: value for key, value in overrides.items() if value is not None}
    if config_block is None:
        return RunConfig(**values)
    base = RunConfig.load(config_block)
    return RunConfig(**{**base.dict(), **values})


def parse_sizes(text: str) -> List[int]:
    """
    Parses `9..15` (inclusive) or a comma separated list such as `9,11,13`.
    """
    text = text.strip()
    if ".." in text:
        start, _, stop = text.partition("..")
        return list(range(int(start), int(stop) + 1))
    return [int(part) for part in text.split(",") if part.strip()]


def emit(report: ExperimentReport, config: RunConfig):
    """
    Writes every table of a report below the output directory, echoes the
    summary and exits with code 1 if a check failed.
    """
    metadata = {
        "command": " ".join(["rbf-fmm", *sys.argv[1:]]),
        "kernel": config.kernel,
        "seed": config.seed,
    }
    for name, frame in report.frames.items():
        path = write_frame(frame, config.out / f"{name}.csv", metadata)
        typer.echo(f"Wrote {path}")
    for name, value in report.summary.items():
        typer.echo(f"{name}: {value:.6g}")
    for name, passed in report.checks.items():
        typer.echo(f"{name}: {'pass' if passed else 'FAIL'}")
    if report.failed:
        _fail({"command": report.name, "failed": report.failed}, 1)


def _version_callback(value: bool):
    if value:
        typer.echo(__version__)
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        False, "--version", callback=_version_callback, is_eager=True
    ),
):
    """
    Band-limited RBF fast multipole experiments.
    """


@app.command("kernel-dump")
@reports_errors
def kernel_dump(
    kernel: Optional[str] = KERNEL,
    sigma: Optional[float] = SIGMA,
    m: Optional[int] = M,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    lattice: int = typer.Option(201, "--lattice", help="Radii in [0, 1]."),
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Dump a kernel, its band-limited version, the separated form and the
    translation spectrum.
    """
    config = build_config(
        config_block, kernel=kernel, sigma=sigma, m=m, seed=seed, out=out
    )
    emit(kernel_dump_flow(config, lattice), config)


@app.command("fmm-matvec")
@reports_errors
def fmm_matvec(
    kernel: Optional[str] = KERNEL,
    sigma: Optional[float] = SIGMA,
    m: Optional[int] = M,
    levels: Optional[int] = LEVELS,
    stencil_k: Optional[int] = STENCIL_K,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    threads: Optional[int] = THREADS,
    points: Optional[Path] = POINTS,
    n: Optional[int] = N_POINTS,
    dimension: Optional[int] = DIMENSION,
    backend: Optional[Backend] = typer.Option(None, "--backend"),
    tolerance: float = typer.Option(1e-3, "--tolerance"),
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    One fast product compared with the direct sum and the hybrid oracle.
    """
    config = build_config(
        config_block,
        kernel=kernel,
        sigma=sigma,
        m=m,
        levels=levels,
        stencil_k=stencil_k,
        seed=seed,
        out=out,
        threads=threads,
        points_file=points,
        n_points=n,
        dimension=dimension,
        backend=backend,
    )
    emit(fmm_matvec_flow(config, tolerance), config)


@app.command("accuracy-sweep")
@reports_errors
def accuracy_sweep(
    kernel: Optional[str] = KERNEL,
    sigma: Optional[float] = SIGMA,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    separations: List[float] = typer.Option(
        list(SEPARATIONS), "--separation", help="Cluster separation R; repeatable."
    ),
    truncations: List[int] = typer.Option(
        list(TRUNCATIONS), "--truncation", help="Node count M; repeatable."
    ),
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Two-cluster error of the separated form over separations and truncations.
    """
    config = build_config(config_block, kernel=kernel, sigma=sigma, seed=seed, out=out)
    emit(accuracy_sweep_flow(config, separations, truncations), config)


@app.command("bench")
@reports_errors
def bench(
    kernel: Optional[str] = KERNEL,
    sigma: Optional[float] = SIGMA,
    m: Optional[int] = M,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    threads: Optional[int] = THREADS,
    dimension: Optional[int] = DIMENSION,
    sizes: str = typer.Option(
        ",".join(str(size) for size in BENCH_SIZES),
        "--sizes",
        help="Problem sizes, e.g. 1024,2048 or a range a..b.",
    ),
    backends: List[str] = typer.Option(
        list(RUNNERS), "--backend", help="direct, single or multilevel; repeatable."
    ),
    budget: float = typer.Option(
        60.0, "--budget", help="Largest extrapolated seconds per product."
    ),
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Time the products over growing N and fit log-log slopes.
    """
    config = build_config(
        config_block,
        kernel=kernel,
        sigma=sigma,
        m=m,
        seed=seed,
        out=out,
        threads=threads,
        dimension=dimension,
    )
    emit(bench_flow(config, parse_sizes(sizes), backends, budget), config)


@app.command("solve")
@reports_errors
def solve(
    kernel: Optional[str] = KERNEL,
    sigma: Optional[float] = SIGMA,
    m: Optional[int] = M,
    levels: Optional[int] = LEVELS,
    stencil_k: Optional[int] = STENCIL_K,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    threads: Optional[int] = THREADS,
    points: Optional[Path] = POINTS,
    n: Optional[int] = N_POINTS,
    dimension: Optional[int] = DIMENSION,
    rhs: Optional[Path] = typer.Option(None, "--rhs", help="CSV with the samples."),
    rhs_column: Optional[str] = typer.Option(None, "--rhs-column"),
    backend: Optional[Backend] = typer.Option(None, "--backend"),
    tol: Optional[float] = typer.Option(None, "--tol"),
    max_iter: Optional[int] = typer.Option(None, "--max-iter"),
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Interpolate with a Krylov method over the chosen product backend.
    """
    config = build_config(
        config_block,
        kernel=kernel,
        sigma=sigma,
        m=m,
        levels=levels,
        stencil_k=stencil_k,
        seed=seed,
        out=out,
        threads=threads,
        points_file=points,
        n_points=n,
        dimension=dimension,
        backend=backend,
        tol=tol,
        max_iter=max_iter,
    )
    emit(solve_flow(config, str(rhs) if rhs else None, rhs_column), config)


@app.command("collocate1d")
@reports_errors
def collocate1d(
    kernel: Optional[str] = typer.Option("mq:c=1", "--kernel"),
    n: str = typer.Option(
        f"{COLLOCATION_SIZES[0]}..{COLLOCATION_SIZES[-1]}",
        "--n",
        help="Node counts, e.g. 9..15 or 9,12.",
    ),
    band_limited: bool = typer.Option(True, "--bandlimited/--no-bandlimited"),
    sigma: Optional[float] = SIGMA,
    out: Optional[Path] = OUT,
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Collocate the one-dimensional model problem for several node counts.
    """
    config = build_config(config_block, kernel=kernel, out=out)
    emit(collocate1d_flow(config, parse_sizes(n), band_limited, sigma), config)


@app.command("tables")
@reports_errors
def tables(
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Reproduce the reference collocation and Lagrange interpolation errors.
    """
    config = build_config(config_block, seed=seed, out=out)
    emit(tables_flow(config), config)


@app.command("stability")
@reports_errors
def stability(
    kernel: Optional[str] = KERNEL,
    seed: Optional[int] = SEED,
    out: Optional[Path] = OUT,
    instances: int = typer.Option(
        STABILITY_INSTANCES, "--instances", help="Random point sets per family."
    ),
    jitter: float = typer.Option(STABILITY_JITTER, "--jitter"),
    config_block: Optional[str] = CONFIG_BLOCK,
):
    """
    Check the eigenvalue bounds of the band-limited interpolation matrix on
    random quasi-uniform point sets.
    """
    config = build_config(config_block, kernel=kernel, seed=seed, out=out)
    emit(stability_flow(config, instances, STABILITY_SIZES, jitter), config)
