"""
Band-limited kernels, frequency quadrature grids and the low-rank factors
of the far-field expansion.
"""

import math
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from prefect.logging import get_logger
from pydantic import BaseModel, Field, validator

from prefect_rbf_fmm.exceptions import ConfigurationError, UnsupportedKernelError
from prefect_rbf_fmm.kernels import (
    ArrayLike,
    FourierKind,
    RadialKernel,
    eval_kernel,
    spectrum,
)

logger = get_logger(__name__)

# geometric panels packed towards xi = 0 when the spectrum is singular there
GRADING_LEVELS = 40
GAUSS_ORDER = 8
MIN_REFINEMENT = 1024


class MollifierGain(str, Enum):
    """
    Normalization of the frequency cutoff.
    """

    UNIT = "unit"
    PER_SIGMA = "per_sigma"


class SpectralMode(str, Enum):
    """
    How the translation spectrum C(xi_m) is sampled.
    """

    SPECTRAL = "spectral"
    FOURIER_SERIES = "fourier_series"


class Mollifier(BaseModel):
    """
    The ideal low-pass filter whose convolution with a kernel yields its
    band-limited version.

    Attributes:
        sigma: Bandwidth; the frequency response vanishes outside [-sigma, sigma].
        gain: `unit` keeps the passband at 1, so that the band-limited kernel
            converges to the kernel as sigma grows; `per_sigma` divides by sigma.
    """

    sigma: float = Field(gt=0)
    gain: MollifierGain = MollifierGain.UNIT

    class Config:
        frozen = True

    @property
    def gain_factor(self) -> float:
        """Height of the passband."""
        return 1.0 if self.gain == MollifierGain.UNIT else 1.0 / self.sigma

    def response(self, xi: ArrayLike) -> ArrayLike:
        """
        Frequency response: the passband height on |xi| <= sigma, 0 outside.
        """
        values = np.where(np.abs(xi) <= self.sigma, self.gain_factor, 0.0)
        return float(values) if np.ndim(xi) == 0 else values

    def spatial(self, x: ArrayLike) -> ArrayLike:
        """
        The filter in space, `gain * sin(sigma x) / (pi x)`.
        """
        # np.sinc(t) = sin(pi t) / (pi t)
        values = self.gain_factor * self.sigma / math.pi * np.sinc(
            self.sigma * np.asarray(x, dtype=float) / math.pi
        )
        return float(values) if np.ndim(x) == 0 else values


class QuadratureGrid(BaseModel):
    """
    A tensor grid of frequency nodes with uniform weights.

    Nodes are stored flattened in C order, one row per node, so that the
    two-dimensional grid is the Kronecker product of the axis grid with itself.

    Attributes:
        sigma: Half-width of the frequency box.
        m_per_dim: Number of nodes per dimension.
        d: Dimension.
        nodes: Array of shape (m_per_dim ** d, d).
        weights: Array of shape (m_per_dim ** d,).
    """

    sigma: float = Field(gt=0)
    m_per_dim: int = Field(ge=2)
    d: int = Field(ge=1, le=2)
    nodes: np.ndarray
    weights: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("nodes", "weights")
    def _read_only(cls, value):
        """
        Grids are shared between levels and boxes, so they are never written.
        """
        value = np.array(value, dtype=float)
        value.setflags(write=False)
        return value

    @property
    def size(self) -> int:
        """Total node count."""
        return self.m_per_dim**self.d

    @property
    def step(self) -> float:
        """Node spacing per dimension."""
        return 2.0 * self.sigma / self.m_per_dim

    @property
    def axis(self) -> np.ndarray:
        """The one-dimensional nodes the grid is a tensor product of."""
        return -self.sigma + self.step * np.arange(self.m_per_dim)

    @property
    def radii(self) -> np.ndarray:
        """|xi_m| for every node."""
        return np.linalg.norm(self.nodes, axis=1)


def make_quadrature(sigma: float, m_per_dim: int, d: int = 1) -> QuadratureGrid:
    """
    Builds the uniform left-endpoint grid `xi_m = -sigma + m * step`,
    `step = 2 sigma / M`, with every weight equal to `step ** d`.

    Args:
        sigma: Bandwidth.
        m_per_dim: Nodes per dimension, at least 2.
        d: Dimension, 1 or 2.

    Returns:
        The quadrature grid.

    Example:
        ```python
        from prefect_rbf_fmm.bandlimit import make_quadrature

        make_quadrature(2.0, 2).axis  # array([-2., 0.])
        ```
    """
    if sigma <= 0 or not math.isfinite(sigma):
        raise ValueError(f"Bandwidth must be positive, got {sigma}")
    if m_per_dim < 2:
        raise ValueError(
            f"At least two nodes per dimension are needed, got {m_per_dim}"
        )
    if d not in (1, 2):
        raise ValueError(f"Only d=1 and d=2 are supported, got d={d}")
    step = 2.0 * sigma / m_per_dim
    axis = -sigma + step * np.arange(m_per_dim)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    nodes = np.stack([component.ravel() for component in mesh], axis=1)
    weights = np.full(m_per_dim**d, step**d)
    return QuadratureGrid(
        sigma=sigma, m_per_dim=m_per_dim, d=d, nodes=nodes, weights=weights
    )


def rescale_grid(grid: QuadratureGrid, s: float) -> QuadratureGrid:
    """
    Applies the Fourier scaling property: nodes become xi / s and the weights
    omega / s per dimension.

    Args:
        grid: The grid to rescale.
        s: Positive scale factor; s = 2 moves a grid one level up the tree.

    Returns:
        A new grid with bandwidth sigma / s and the same node count.
    """
    if s <= 0:
        raise ValueError(f"Scale factor must be positive, got {s}")
    return QuadratureGrid(
        sigma=grid.sigma / s,
        m_per_dim=grid.m_per_dim,
        d=grid.d,
        nodes=grid.nodes / s,
        weights=grid.weights / s**grid.d,
    )


def _check_band_limitable(kernel: RadialKernel, d: int):
    if kernel.cpd_order >= 2:
        raise UnsupportedKernelError(
            f"{kernel.spec} has conditional order {kernel.cpd_order}; "
            "only kernels of order at most one can be band-limited"
        )
    if kernel.kind == FourierKind.GENERALIZED and d != 1:
        raise UnsupportedKernelError(
            f"Band-limiting {kernel.spec} needs its finite-part integral, "
            "which is available for d=1 only"
        )


def _half_band_rule(
    sigma: float, panels: int, graded: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Composite Gauss-Legendre rule on [0, sigma], optionally with geometric
    panels packed towards the origin.
    """
    edges = np.linspace(0.0, sigma, panels + 1)
    if graded:
        first = edges[1]
        grading = first * 0.5 ** np.arange(GRADING_LEVELS, 0, -1)
        edges = np.concatenate([[0.0], grading, edges[1:]])
    base, base_weights = leggauss(GAUSS_ORDER)
    half = 0.5 * np.diff(edges)
    nodes = edges[:-1, None] + half[:, None] * (base[None, :] + 1.0)
    weights = half[:, None] * base_weights[None, :]
    return nodes.ravel(), weights.ravel()


@lru_cache(maxsize=64)
def _weighted_spectrum(
    kernel: RadialKernel, sigma: float, d: int, refinement: int, derivative: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Quadrature nodes on [0, sigma] and the spectrum folded into the weights.
    """
    graded = kernel.singular_at_origin(d)
    if d == 1:
        t, w = _half_band_rule(sigma, refinement, graded)
        with np.errstate(over="ignore"):
            profile = w * spectrum(kernel, t, 1) / math.pi
        if derivative == 2:
            profile = -profile * t**2
    else:
        t, w = _half_band_rule(sigma, max(refinement // 16, 64), graded)
        radii = np.hypot(t[:, None], t[None, :])
        profile = np.outer(w, w) * spectrum(kernel, radii, 2) / math.pi**2
    t.setflags(write=False)
    profile.setflags(write=False)
    return t, profile


def eval_bandlimited(
    kernel: RadialKernel,
    sigma: float,
    x: ArrayLike,
    refinement: int = MIN_REFINEMENT,
    d: int = 1,
    derivative: int = 0,
    gain: MollifierGain = MollifierGain.UNIT,
) -> ArrayLike:
    """
    High-resolution reference evaluation of the band-limited kernel
    `(2 pi)^-d * integral over [-sigma, sigma]^d of phi_hat(xi) exp(i xi.x)`.

    The spectrum is real and even, so the integral folds onto the positive
    half band as a cosine integral and the imaginary part vanishes identically.
    Kernels with a first-order generalized transform (MQ) use the finite part
    `phi(0) + (1/pi) int_0^sigma phi_hat(xi) (cos(xi x) - 1) dxi`.

    Args:
        kernel: The kernel to band-limit.
        sigma: Bandwidth.
        x: Displacement(s): a scalar or array of shape (n,) in one dimension,
            a vector of length 2 or array of shape (n, 2) in two.
        refinement: Gauss-Legendre panels on the half band in one dimension;
            in two dimensions refinement / 16 panels per axis are used.
        d: Dimension, 1 or 2.
        derivative: 0 for the kernel, 2 for its second derivative (d=1 only).
        gain: Mollifier normalization.

    Returns:
        Real value(s) of the band-limited kernel.

    Raises:
        UnsupportedKernelError: For kernels that cannot be band-limited.
    """
    if refinement < MIN_REFINEMENT:
        raise ValueError(
            f"The reference evaluator needs refinement >= {MIN_REFINEMENT}, "
            f"got {refinement}"
        )
    if derivative not in (0, 2) or (derivative and d != 1):
        raise ValueError(f"Derivative {derivative} is not available in d={d}")
    _check_band_limitable(kernel, d)
    mollifier = Mollifier(sigma=sigma, gain=gain)
    t, profile = _weighted_spectrum(kernel, sigma, d, refinement, derivative)
    finite_part = kernel.kind == FourierKind.GENERALIZED and derivative == 0

    displacements = np.asarray(x, dtype=float)
    scalar = displacements.ndim == (0 if d == 1 else 1)
    displacements = displacements.reshape(-1, d) if d == 2 else displacements.ravel()

    values = np.empty(len(displacements))
    chunk = 256
    for start in range(0, len(displacements), chunk):
        block = displacements[start : start + chunk]
        if d == 1:
            phase = block[:, None] * t[None, :]
            if finite_part:
                basis = -2.0 * np.sin(0.5 * phase) ** 2
            else:
                basis = np.cos(phase)
            values[start : start + chunk] = basis @ profile
        else:
            first = np.cos(block[:, 0, None] * t[None, :])
            second = np.cos(block[:, 1, None] * t[None, :])
            values[start : start + chunk] = np.einsum(
                "na,ab,nb->n", first, profile, second
            )
    if finite_part:
        values += eval_kernel(kernel, 0.0)
    values *= mollifier.gain_factor
    return float(values[0]) if scalar else values


def bandlimited_matvec(
    kernel: RadialKernel,
    sigma: float,
    points: np.ndarray,
    weights: np.ndarray,
    refinement: int = MIN_REFINEMENT,
) -> np.ndarray:
    """
    Computes `sum_j lambda_j phi_sigma(x_i - x_j)` for all i with the same
    quadrature as `eval_bandlimited`.

    The cosine of a difference splits into products of cosines and sines, so
    the sum costs O(N) per quadrature node instead of O(N^2).

    Args:
        kernel: The kernel to band-limit.
        sigma: Bandwidth.
        points: Points of shape (n, d).
        weights: Coefficients of length n.
        refinement: As for `eval_bandlimited`.

    Returns:
        The n sums.
    """
    points = np.asarray(points, dtype=float).reshape(len(weights), -1)
    weights = np.asarray(weights, dtype=float)
    d = points.shape[1]
    _check_band_limitable(kernel, d)
    t, profile = _weighted_spectrum(kernel, sigma, d, refinement, 0)

    if d == 2:
        phase1, phase2 = np.outer(points[:, 0], t), np.outer(points[:, 1], t)
        values = np.zeros(len(weights))
        for first in (np.cos(phase1), np.sin(phase1)):
            for second in (np.cos(phase2), np.sin(phase2)):
                moments = first.T @ (weights[:, None] * second)
                values += np.sum((first @ (profile * moments)) * second, axis=1)
        return values

    if kernel.kind == FourierKind.GENERALIZED:
        return _finite_part_matvec(kernel, points[:, 0], weights, t, profile)
    x = points[:, 0]
    values = np.zeros(len(weights))
    chunk = 1024
    for start in range(0, len(t), chunk):
        phase = np.outer(x, t[start : start + chunk])
        cosines, sines = np.cos(phase), np.sin(phase)
        block = profile[start : start + chunk]
        values += cosines @ (block * (weights @ cosines))
        values += sines @ (block * (weights @ sines))
    return values


def _half_angle_factors(x: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    `cos(t x) - 1` computed as `-2 sin^2(t x / 2)`, and `sin(t x)`.
    """
    phase = np.outer(x, t)
    return -2.0 * np.sin(0.5 * phase) ** 2, np.sin(phase)


def _finite_part_matvec(
    kernel: RadialKernel,
    x: np.ndarray,
    weights: np.ndarray,
    t: np.ndarray,
    profile: np.ndarray,
) -> np.ndarray:
    """
    Finite-part sums through
    `cos(a - b) - 1 = (cos a - 1)(cos b - 1) + (cos a - 1) + (cos b - 1)
    + sin a sin b`, whose terms are all small where the profile is large.
    """
    x = x - 0.5 * (x.min() + x.max())
    total = float(np.sum(weights))
    values = np.full(len(x), eval_kernel(kernel, 0.0) * total)
    chunk = 1024
    for start in range(0, len(t), chunk):
        block = profile[start : start + chunk]
        shifted, sines = _half_angle_factors(x, t[start : start + chunk])
        shifted_moment = weights @ shifted
        values += shifted @ (block * shifted_moment)
        values += total * (shifted @ block)
        values += block @ shifted_moment
        values += sines @ (block * (weights @ sines))
    return values


def bandlimited_cross_matrix(
    kernel: RadialKernel,
    sigma: float,
    targets: np.ndarray,
    sources: np.ndarray,
    refinement: int = MIN_REFINEMENT,
    derivative: int = 0,
) -> np.ndarray:
    """
    The one-dimensional matrix `phi_sigma(y_i - x_j)` (or its second
    derivative) between two point sets.

    The cosine integral is split as `cos(t y) cos(t x) + sin(t y) sin(t x)`,
    so the cost is linear in each set. The finite part of MQ uses the
    half-angle split of `_finite_part_matvec`.
    """
    targets = np.asarray(targets, dtype=float).ravel()
    sources = np.asarray(sources, dtype=float).ravel()
    _check_band_limitable(kernel, 1)
    if derivative not in (0, 2):
        raise ValueError(f"Derivative {derivative} is not available")
    t, profile = _weighted_spectrum(kernel, sigma, 1, refinement, derivative)
    finite_part = kernel.kind == FourierKind.GENERALIZED and derivative == 0
    low = min(targets.min(), sources.min())
    high = max(targets.max(), sources.max())
    targets, sources = targets - 0.5 * (low + high), sources - 0.5 * (low + high)

    matrix = np.zeros((len(targets), len(sources)))
    if finite_part:
        matrix += eval_kernel(kernel, 0.0)
    chunk = 1024
    for start in range(0, len(t), chunk):
        nodes = t[start : start + chunk]
        block = profile[start : start + chunk]
        if finite_part:
            target_shift, target_sin = _half_angle_factors(targets, nodes)
            source_shift, source_sin = _half_angle_factors(sources, nodes)
            matrix += (target_shift * block) @ source_shift.T
            matrix += (target_shift @ block)[:, None]
            matrix += (source_shift @ block)[None, :]
            matrix += (target_sin * block) @ source_sin.T
            continue
        target_phase, source_phase = np.outer(targets, nodes), np.outer(sources, nodes)
        matrix += (np.cos(target_phase) * block) @ np.cos(source_phase).T
        matrix += (np.sin(target_phase) * block) @ np.sin(source_phase).T
    return matrix


def bandlimited_matrix(
    kernel: RadialKernel,
    sigma: float,
    points: np.ndarray,
    refinement: int = MIN_REFINEMENT,
) -> np.ndarray:
    """
    The matrix `phi_sigma(x_i - x_j)`, exactly symmetric.

    In one dimension it comes from `bandlimited_cross_matrix`; in two
    dimensions every pair of the upper triangle is evaluated.
    """
    points = np.asarray(points, dtype=float)
    points = points[:, None] if points.ndim == 1 else points
    n, d = points.shape
    if d == 1:
        matrix = bandlimited_cross_matrix(
            kernel, sigma, points[:, 0], points[:, 0], refinement
        )
    else:
        _check_band_limitable(kernel, d)
        rows, cols = np.triu_indices(n)
        matrix = np.zeros((n, n))
        matrix[rows, cols] = eval_bandlimited(
            kernel, sigma, points[rows] - points[cols], refinement=refinement, d=2
        )
    return np.triu(matrix) + np.triu(matrix, 1).T


@lru_cache(maxsize=128)
def _reference_at_origin(kernel: RadialKernel, band: float, d: int) -> float:
    return eval_bandlimited(kernel, band, np.zeros(d) if d == 2 else 0.0, d=d)


class LowRankFactors(BaseModel):
    """
    The translation spectrum of a kernel on a quadrature grid.

    With these factors a far-field interaction is
    `phi_sigma(x_i - x_j) ~ Re sum_m omega_m C(xi_m) exp(i xi_m.(x_i - x_j))`.
    Nodes outside `band` carry C = 0 and nodes on its edge carry half their
    value, so every level of a multilevel tree can share one band.

    Attributes:
        kernel: The kernel the spectrum belongs to.
        grid: The frequency grid.
        c_vals: C(xi_m) per node.
        band: Bandwidth of the kernel approximation.
        mode: How C was sampled.
        q_terms: Fourier-series truncation Q in `fourier_series` mode.
        regularized: Indices of nodes whose value was replaced because the
            spectrum is singular there.
    """

    kernel: RadialKernel
    grid: QuadratureGrid
    c_vals: np.ndarray
    band: float
    mode: SpectralMode = SpectralMode.SPECTRAL
    q_terms: Optional[int] = None
    regularized: Tuple[int, ...] = ()

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("c_vals")
    def _match_grid(cls, value, values):
        """
        One spectrum value per grid node.
        """
        grid = values.get("grid")
        value = np.array(value)
        if grid is not None and value.shape != (grid.size,):
            raise ValueError(
                f"Expected {grid.size} spectrum values, got shape {value.shape}"
            )
        value.setflags(write=False)
        return value

    @property
    def weighted(self) -> np.ndarray:
        """omega_m * C(xi_m)."""
        return self.grid.weights * self.c_vals

    def imaginary_residual_bound(self, weight_sum: float) -> float:
        """
        Bound on the discarded imaginary part of a sum with `sum |lambda|` equal
        to `weight_sum`. Only nodes on the lower grid edge lack a mirror node.
        """
        unpaired = np.any(
            np.isclose(self.grid.nodes, -self.grid.sigma, rtol=1e-12, atol=0.0),
            axis=1,
        )
        return float(np.sum(np.abs(self.weighted[unpaired]))) * weight_sum


def _edge_factors(grid: QuadratureGrid, band: float) -> np.ndarray:
    magnitude = np.abs(grid.nodes)
    on_edge = np.isclose(magnitude, band, rtol=1e-12, atol=0.0)
    inside = (magnitude < band) | on_edge
    per_axis = np.where(on_edge, 0.5, 1.0) * inside
    return np.prod(per_axis, axis=1)


def translation_coefficients(
    kernel: RadialKernel,
    grid: QuadratureGrid,
    mode: SpectralMode = SpectralMode.SPECTRAL,
    q: Optional[int] = None,
    band: Optional[float] = None,
) -> LowRankFactors:
    """
    Samples the translation spectrum C(xi_m) of a kernel on a grid.

    `spectral` mode uses `C = (2 pi)^-d phi_hat(|xi|)`. If the spectrum is
    singular at a node (xi = 0 for MQ, IMQ and r), that node gets the value
    for which `sum_m omega_m C(xi_m)` equals the band-limited kernel at the
    origin. `fourier_series` mode (d = 1) uses the truncated series
    `C = (1 / 2 pi) sum_{|q| <= Q} phi(q) exp(-i q xi)`.

    Args:
        kernel: The kernel.
        grid: The frequency grid.
        mode: Sampling mode.
        q: Series truncation, defaults to M / 2.
        band: Bandwidth of the approximation, at most the grid's own; defaults
            to the grid's.

    Returns:
        The low-rank factors.

    Raises:
        UnsupportedKernelError: For kernels that cannot be band-limited or a
            Fourier series in two dimensions.
        ConfigurationError: If the band is wider than the grid.

    Example:
        ```python
        from prefect_rbf_fmm.bandlimit import make_quadrature, translation_coefficients
        from prefect_rbf_fmm.kernels import parse_kernel_spec

        grid = make_quadrature(3.141592653589793, 64)
        factors = translation_coefficients(parse_kernel_spec("imq:c=1"), grid)
        ```
    """
    mode = SpectralMode(mode)
    if mode == SpectralMode.FOURIER_SERIES:
        if grid.d != 1:
            raise UnsupportedKernelError("The Fourier-series spectrum is 1D only")
        q = grid.m_per_dim // 2 if q is None else q
        if q < 0:
            raise ValueError(f"Series truncation must be nonnegative, got {q}")
        samples = eval_kernel(kernel, np.arange(q + 1, dtype=float))
        xi = grid.nodes[:, 0]
        series = samples[0] + 2.0 * np.cos(
            xi[:, None] * np.arange(1, q + 1)[None, :]
        ) @ samples[1:]
        return LowRankFactors(
            kernel=kernel,
            grid=grid,
            c_vals=series / (2.0 * math.pi),
            band=grid.sigma,
            mode=mode,
            q_terms=q,
        )

    band = grid.sigma if band is None else band
    if band > grid.sigma * (1 + 1e-12) or band <= 0:
        raise ConfigurationError(
            f"Band {band} must lie in (0, {grid.sigma}], the grid's own bandwidth"
        )
    _check_band_limitable(kernel, grid.d)

    radii = grid.radii
    singular = (radii == 0) & kernel.singular_at_origin(grid.d)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c_vals = spectrum(kernel, radii, grid.d) / (2.0 * math.pi) ** grid.d
    c_vals[singular] = 0.0
    if band < grid.sigma:
        c_vals *= _edge_factors(grid, band)
    if not np.all(np.isfinite(c_vals)):
        raise ConfigurationError(
            f"Spectrum of {kernel.spec} is not finite on the grid; use another grid"
        )

    regularized = tuple(int(index) for index in np.flatnonzero(singular))
    if regularized:
        remainder = float(np.sum(grid.weights * c_vals))
        reference = _reference_at_origin(kernel, band, grid.d)
        zero = regularized[0]
        c_vals[zero] = (reference - remainder) / grid.weights[zero]
        logger.debug(
            "Regularized the xi=0 node of %s: C=%s", kernel.spec, c_vals[zero]
        )
    return LowRankFactors(
        kernel=kernel,
        grid=grid,
        c_vals=c_vals,
        band=band,
        mode=mode,
        regularized=regularized,
    )


def _points(x: ArrayLike, d: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, d)


def p2m_factor(node: ArrayLike, source: ArrayLike) -> complex:
    """
    Aggregation phase `exp(-i xi.x)` of a source for one frequency node.
    """
    return complex(np.exp(-1j * np.dot(np.ravel(node), np.ravel(source))))


def l2p_factor(node: ArrayLike, weight: float, target: ArrayLike) -> complex:
    """
    Disaggregation factor `omega exp(i xi.x)` of a target for one frequency node.
    """
    return complex(weight * np.exp(1j * np.dot(np.ravel(node), np.ravel(target))))


def _lowrank_sum(factors: LowRankFactors, displacements: np.ndarray) -> np.ndarray:
    phases = np.exp(1j * displacements @ factors.grid.nodes.T)
    return phases @ factors.weighted


def lowrank_eval(
    factors: LowRankFactors,
    xi_pt: ArrayLike,
    xj_pt: ArrayLike,
    return_imag: bool = False,
):
    """
    Separated-form approximation of the band-limited kernel between points.

    Args:
        factors: Low-rank factors of the kernel.
        xi_pt: Target point(s).
        xj_pt: Source point(s), broadcast against the targets.
        return_imag: Also return the discarded imaginary part.

    Returns:
        The real part, as a float for a single pair and an array otherwise,
        and the imaginary part if requested.
    """
    d = factors.grid.d
    targets, sources = _points(xi_pt, d), _points(xj_pt, d)
    total = _lowrank_sum(factors, targets - sources)
    single = np.ndim(xi_pt) <= d - 1 and np.ndim(xj_pt) <= d - 1
    real = float(total.real[0]) if single else total.real
    if not return_imag:
        return real
    return real, (float(total.imag[0]) if single else total.imag)


def lowrank_eval_split(
    factors: LowRankFactors,
    xi_pt: ArrayLike,
    xj_pt: ArrayLike,
    xa: ArrayLike,
    xb: ArrayLike,
) -> float:
    """
    The same approximation evaluated as disaggregation about the target
    center `xa`, translation from `xb` to `xa` and aggregation about the
    source center `xb`.
    """
    d = factors.grid.d
    nodes = factors.grid.nodes
    target, source = _points(xi_pt, d)[0], _points(xj_pt, d)[0]
    a, b = _points(xa, d)[0], _points(xb, d)[0]
    disaggregation = factors.grid.weights * np.exp(1j * nodes @ (target - a))
    translation = factors.c_vals * np.exp(1j * nodes @ (a - b))
    aggregation = np.exp(1j * nodes @ (b - source))
    return float(np.sum(disaggregation * translation * aggregation).real)


def lowrank_error(
    factors: LowRankFactors,
    displacements: ArrayLike,
    refinement: int = MIN_REFINEMENT,
) -> float:
    """
    Empirical truncation error: the largest deviation of the separated form
    from the reference band-limited kernel over the given displacements.
    """
    d = factors.grid.d
    offsets = _points(displacements, d)
    approximation = _lowrank_sum(factors, offsets).real
    reference = eval_bandlimited(
        factors.kernel,
        factors.band,
        offsets if d == 2 else offsets[:, 0],
        refinement=refinement,
        d=d,
    )
    return float(np.max(np.abs(approximation - reference)))


def grid_frame(grid: QuadratureGrid) -> pd.DataFrame:
    """
    The axis nodes and weights of every dimension, one row per node.
    """
    axis = grid.axis
    return pd.DataFrame(
        {
            "dim_index": np.repeat(np.arange(grid.d), grid.m_per_dim),
            "node": np.tile(axis, grid.d),
            "weight": grid.step,
        }
    )


def factors_frame(factors: LowRankFactors) -> pd.DataFrame:
    """
    The translation spectrum, one row per node.
    """
    values = factors.c_vals.astype(complex)
    return pd.DataFrame(
        {
            "node_index": np.arange(len(values)),
            "c_value_re": values.real,
            "c_value_im": values.imag,
        }
    )
