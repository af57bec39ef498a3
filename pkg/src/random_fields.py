"""
Gaussian random field priors for log-conductivity and log-transmissivity.

Covers the exponential covariance on 1-D and 2-D cell-centred grids, the
truncated Karhunen-Loeve basis used by the 1-D example, the pixel-based
parameterization ``X = mu + Sigma^(1/2) Z`` used by the 2-D example, and
Gaussian conditioning on noisy point values.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .errors import FieldError

logger = logging.getLogger(__name__)

MATRIX_SQRT_JITTER = 1e-10


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centred grid on [0, domain_length]."""
    n_cells: int = 40
    domain_length: float = 1.0

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError(f"Grid1D needs at least 2 cells, got {self.n_cells}")
        if self.domain_length <= 0:
            raise ValueError("domain_length must be positive")

    @property
    def dimension(self) -> int:
        return 1

    @property
    def dx(self) -> float:
        return self.domain_length / self.n_cells

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def points(self) -> np.ndarray:
        return self.cell_centers[:, None]

    def cell_of(self, position: float) -> int:
        """Index of the cell containing ``position``."""
        index = int(np.floor(position / self.dx))
        return min(max(index, 0), self.n_cells - 1)


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centred grid, flattened row-major as ``iy * nx + ix``."""
    nx: int = 51
    ny: int = 51
    dx: float = 250.0 / 51
    dy: float = 250.0 / 51
    thickness: float = 5.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"Grid2D needs at least 2x2 cells, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0 or self.thickness <= 0:
            raise ValueError("cell sizes and thickness must be positive")

    @classmethod
    def square(cls, n: int, length: float = 250.0, thickness: float = 5.0) -> "Grid2D":
        return cls(nx=n, ny=n, dx=length / n, dy=length / n, thickness=thickness)

    @property
    def dimension(self) -> int:
        return 2

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def length_x(self) -> float:
        return self.nx * self.dx

    @property
    def length_y(self) -> float:
        return self.ny * self.dy

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    @property
    def points(self) -> np.ndarray:
        xx, yy = np.meshgrid(self.x_centers, self.y_centers)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def flat_index(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise ValueError(f"cell ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return iy * self.nx + ix

    def as_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a flat field to ``(ny, nx)``."""
        return np.asarray(values).reshape(self.ny, self.nx)


Grid = Union[Grid1D, Grid2D]


@dataclass(frozen=True)
class ExpCovariance:
    """Isotropic exponential covariance ``sigma^2 exp(-d / length_scale)``."""
    sigma: float = 3.0
    length_scale: float = 0.3
    dimension: int = 1

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")


@dataclass(frozen=True)
class KLBasis:
    """Truncated Karhunen-Loeve basis on a grid.

    ``eigenfunctions`` holds one column per retained mode.
    """
    mean_log: float
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray

    @property
    def n_terms(self) -> int:
        return int(self.eigenvalues.shape[0])

    def truncated_covariance(self) -> np.ndarray:
        v = self.eigenfunctions
        return (v * self.eigenvalues) @ v.T


@dataclass(frozen=True)
class PixelGRF:
    """Pixel-based Gaussian random field ``X = mean + root @ z``."""
    mean_vector: np.ndarray
    covariance_root: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_covariance(cls, mean: Union[float, np.ndarray], covariance: np.ndarray) -> "PixelGRF":
        n = covariance.shape[0]
        mean_vector = np.broadcast_to(np.asarray(mean, dtype=float), (n,)).copy()
        return cls(mean_vector, matrix_sqrt(covariance), covariance)

    @property
    def dimension(self) -> int:
        return int(self.mean_vector.shape[0])


@dataclass(frozen=True)
class PointObservations:
    """Noisy point values of the log-field at flat grid indices."""
    locations: List[int]
    values: np.ndarray
    noise_sd: float = 0.1

    def __post_init__(self):
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if len(self.locations) != len(self.values):
            raise ValueError("locations and values must have the same length")


def build_exp_covariance(grid: Grid, cov_spec: ExpCovariance) -> np.ndarray:
    """Exponential covariance between all pairs of cell centres."""
    if grid.dimension != cov_spec.dimension:
        raise ValueError(
            f"grid dimension {grid.dimension} does not match covariance dimension {cov_spec.dimension}"
        )
    distances = cdist(grid.points, grid.points)
    return cov_spec.sigma ** 2 * np.exp(-distances / cov_spec.length_scale)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each column is made positive
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def kl_decompose(covariance: np.ndarray, n_terms: int, mean_log: float = 0.0) -> KLBasis:
    """Top ``n_terms`` eigenpairs of a discretized covariance, nonincreasing."""
    n = covariance.shape[0]
    if not 1 <= n_terms <= n:
        raise ValueError(f"n_terms must be in [1, {n}], got {n_terms}")
    try:
        values, vectors = scipy.linalg.eigh(covariance, subset_by_index=[n - n_terms, n - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FieldError(f"symmetric eigensolve failed for {n}x{n} covariance: {exc}") from exc
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    vectors = _fix_signs(vectors[:, order])
    return KLBasis(mean_log=float(mean_log), eigenvalues=values, eigenfunctions=vectors)


def kl_to_log_field(basis: KLBasis, z: Sequence[float]) -> np.ndarray:
    """``mean + sum_i sqrt(w_i) v_i z_i`` at every cell centre."""
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.n_terms,):
        raise ValueError(f"expected {basis.n_terms} KL coefficients, got shape {z.shape}")
    return basis.mean_log + basis.eigenfunctions @ (np.sqrt(basis.eigenvalues) * z)


def matrix_sqrt(covariance: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, negative eigenvalues clamped."""
    try:
        values, vectors = scipy.linalg.eigh(covariance)
    except (np.linalg.LinAlgError, ValueError):
        logger.warning("eigendecomposition failed, retrying with jitter %.1e", MATRIX_SQRT_JITTER)
        jittered = covariance + MATRIX_SQRT_JITTER * np.eye(covariance.shape[0])
        try:
            values, vectors = scipy.linalg.eigh(jittered)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FieldError(f"matrix square root failed even with jitter: {exc}") from exc
    roots = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * roots) @ vectors.T


def sample_pixel_grf(grf: PixelGRF, z: Sequence[float]) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (grf.dimension,):
        raise ValueError(f"expected {grf.dimension} latent values, got shape {z.shape}")
    return grf.mean_vector + grf.covariance_root @ z


def condition_grf(grf: PixelGRF, obs: PointObservations) -> PixelGRF:
    """Condition a GRF on noisy point values (noise variance on the observed block)."""
    locations = np.asarray(obs.locations, dtype=int)
    if locations.size == 0:
        return grf
    if locations.min() < 0 or locations.max() >= grf.dimension:
        raise ValueError(f"observation locations outside field of dimension {grf.dimension}")

    cross = grf.covariance[:, locations]
    block = grf.covariance[np.ix_(locations, locations)] + obs.noise_sd ** 2 * np.eye(locations.size)
    try:
        factor = scipy.linalg.cho_factor(block, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FieldError(
            "observation block is singular; add jitter to the noise variance "
            "or remove duplicated locations"
        ) from exc

    residual = np.asarray(obs.values, dtype=float) - grf.mean_vector[locations]
    mean = grf.mean_vector + cross @ scipy.linalg.cho_solve(factor, residual)
    covariance = grf.covariance - cross @ scipy.linalg.cho_solve(factor, cross.T)
    covariance = 0.5 * (covariance + covariance.T)
    return PixelGRF(mean_vector=mean, covariance_root=matrix_sqrt(covariance), covariance=covariance)
