"""Module holding the run configuration of every experiment."""

import math
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from prefect.blocks.core import Block
from pydantic import Field, root_validator, validator

from prefect_rbf_fmm.fmm import SumRequest
from prefect_rbf_fmm.geometry import (
    MAX_BOXES,
    PointSet,
    choose_leaf_level,
    generate_quasiuniform,
)
from prefect_rbf_fmm.io import read_points
from prefect_rbf_fmm.kernels import RadialKernel, parse_kernel_spec
from prefect_rbf_fmm.mlfmm import DEFAULT_STENCIL, GridMode
from prefect_rbf_fmm.solver import Backend
from prefect_rbf_fmm.utilities import generator

DEFAULT_POINTS = 256


class RunConfig(Block):
    """
    Block holding the settings of an RBF FMM experiment: the kernel, where the
    points come from, the far-field discretization and the solver options.
    Points are read from `points_file` when it is given and generated as a
    jittered lattice on `[lower, upper]^dimension` otherwise.

    Attributes:
        kernel: Kernel specification such as `imq:c=1`.
        points_file: CSV file with `x` (and `y`) columns.
        n_points: Number of generated points.
        dimension: Dimension of generated points.
        lower: Lower bound of the domain along every axis.
        upper: Upper bound of the domain along every axis.
        jitter: Jitter of generated points as a fraction of the spacing.
        sigma: Bandwidth of the far-field approximation.
        m: Frequency nodes per dimension.
        levels: Leaf level of the box tree.
        stencil_k: Lagrange stencil size of the multilevel transfers.
        grid_mode: Relation between the grids of the multilevel levels.
        backend: Source of the products in a Krylov solve.
        tol: Relative residual tolerance of a Krylov solve.
        max_iter: Products allowed in a Krylov solve.
        seed: Seed of every random draw.
        threads: Worker threads of the data-parallel stages.
        out: Directory receiving the CSV artifacts.

    Example:
        Load a run configuration stored in a `RBF FMM Run Config` Block:
        ```python
        from prefect_rbf_fmm import RunConfig
        run_config_block = RunConfig.load("BLOCK_NAME")
        ```
    """

    _block_type_name = "RBF FMM Run Config"
    _documentation_url = "https://prefecthq.github.io/prefect-rbf-fmm/config/#prefect_rbf_fmm.config.RunConfig"  # noqa: E501

    kernel: str = Field(
        default="imq:c=1", description="Kernel specification such as `imq:c=1`."
    )
    points_file: Optional[Path] = Field(
        default=None, description="CSV file with `x` (and `y`) columns."
    )
    n_points: Optional[int] = Field(
        default=None, ge=4, le=2**20, description="Number of generated points."
    )
    dimension: int = Field(
        default=1, ge=1, le=2, description="Dimension of generated points."
    )
    lower: float = Field(
        default=0.0, description="Lower bound of the domain along every axis."
    )
    upper: float = Field(
        default=1.0, description="Upper bound of the domain along every axis."
    )
    jitter: float = Field(
        default=0.3,
        ge=0.0,
        lt=1.0,
        description="Jitter of generated points as a fraction of the spacing.",
    )
    sigma: float = Field(
        default=math.pi,
        gt=0.0,
        le=1e4,
        description="Bandwidth of the far-field approximation.",
    )
    m: int = Field(
        default=64, ge=2, le=4096, description="Frequency nodes per dimension."
    )
    levels: Optional[int] = Field(
        default=None, ge=2, le=20, description="Leaf level of the box tree."
    )
    stencil_k: int = Field(
        default=DEFAULT_STENCIL,
        ge=2,
        le=64,
        description="Lagrange stencil size of the multilevel transfers.",
    )
    grid_mode: GridMode = Field(
        default=GridMode.SCALED,
        description="Relation between the grids of the multilevel levels.",
    )
    backend: Backend = Field(
        default=Backend.SINGLE_FMM,
        description="Source of the products in a Krylov solve.",
    )
    tol: float = Field(
        default=1e-8,
        gt=0.0,
        lt=1.0,
        description="Relative residual tolerance of a Krylov solve.",
    )
    max_iter: int = Field(
        default=1000, ge=1, description="Products allowed in a Krylov solve."
    )
    seed: int = Field(default=0, ge=0, description="Seed of every random draw.")
    threads: int = Field(
        default=1,
        ge=1,
        le=256,
        description="Worker threads of the data-parallel stages.",
    )
    out: Path = Field(
        default=Path("rbf-fmm-output"),
        description="Directory receiving the CSV artifacts.",
    )

    @validator("kernel", pre=True)
    def _parse_kernel(cls, value):
        """
        Normalizes the kernel specification to its canonical form.
        """
        if isinstance(value, RadialKernel):
            return value.spec
        return parse_kernel_spec(str(value)).spec

    @validator("m")
    def _even_truncation(cls, value):
        """
        An even node count keeps xi = 0 on the grid.
        """
        if value % 2:
            raise ValueError(f"m must be even, got {value}")
        return value

    @validator("points_file")
    def _check_points_file(cls, file):
        """Expand the path of the points file and make sure that it exists."""
        if not file:
            return file
        points_file = Path(file).expanduser()
        if not points_file.exists():
            raise ValueError(f"The points file {points_file} does not exist")
        return points_file

    @root_validator(skip_on_failure=True)
    def _consistent(cls, values):
        """
        Cross-field rules: one point source, a nonempty domain, a stencil no
        wider than the grid and a tree within the box cap.
        """
        if values["points_file"] is not None and values["n_points"] is not None:
            raise ValueError("Only one of points_file or n_points can be specified")
        if values["upper"] <= values["lower"]:
            raise ValueError(
                f"The domain [{values['lower']}, {values['upper']}] is empty"
            )
        if values["stencil_k"] > values["m"]:
            raise ValueError(
                f"The stencil ({values['stencil_k']}) cannot exceed m ({values['m']})"
            )
        levels = values["levels"]
        if levels is not None:
            boxes = 2 ** (levels * values["dimension"])
            if boxes > MAX_BOXES:
                raise ValueError(
                    f"Leaf level {levels} needs {boxes} boxes, more than {MAX_BOXES}"
                )
            n_points = values["n_points"]
            if n_points is not None and boxes > 4 * max(n_points, 4):
                raise ValueError(
                    f"Leaf level {levels} gives {boxes} boxes for {n_points} points"
                )
        return values

    @property
    def radial_kernel(self) -> RadialKernel:
        """The parsed kernel."""
        return parse_kernel_spec(self.kernel)

    @property
    def domain(self) -> Tuple:
        """The domain box as `(lower, upper)`."""
        if self.dimension == 1:
            return (self.lower, self.upper)
        return ((self.lower,) * 2, (self.upper,) * 2)

    def point_set(self) -> PointSet:
        """
        Reads the points file or generates the jittered lattice.
        """
        if self.points_file is not None:
            return read_points(self.points_file)
        return generate_quasiuniform(
            self.n_points or DEFAULT_POINTS,
            self.domain,
            seed=self.seed,
            jitter=self.jitter,
        )

    def weights(self, n: int) -> np.ndarray:
        """
        Standard normal coefficients drawn from the seed.
        """
        return generator(self.seed).standard_normal(n)

    def leaf_level(self, ps: PointSet, occupancy: float = 32.0) -> int:
        """
        The configured leaf level, or one chosen for the given occupancy.
        """
        if self.levels is not None:
            return self.levels
        return choose_leaf_level(ps.n, ps.d, occupancy=occupancy)

    def sum_request(self, ps: PointSet, weights: np.ndarray) -> SumRequest:
        """
        The sum over `ps` with the configured kernel and discretization.
        """
        return SumRequest(
            kernel=self.radial_kernel,
            sigma=self.sigma,
            ps=ps,
            weights=weights,
            m_per_dim=self.m,
            threads=self.threads,
        )
