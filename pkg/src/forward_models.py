"""
Forward models - steady 1-D diffusion, steady 2-D confined flow with a
pumping well, observation operators, quantities of interest and the
Gaussian log-likelihood.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.stats import hmean, norm

from .errors import SolverError
from .random_fields import Grid1D, Grid2D

logger = logging.getLogger(__name__)

DIFFUSION_RESIDUAL_TOL = 1e-12
FLOW_BALANCE_TOL = 1e-8


class Parameterization(Enum):
    """Latent representation carried by a ParameterVector."""
    KL = "kl"
    PIXEL = "pixel"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ParameterVector:
    """Latent standard-normal coordinates of a parameter field."""
    values: np.ndarray
    parameterization: Parameterization = Parameterization.KL

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector has non-finite entries")

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class Observation:
    """Measured values with per-entry Gaussian noise standard deviations."""
    values: np.ndarray
    noise_sd: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        noise = np.broadcast_to(np.asarray(self.noise_sd, dtype=float), values.shape).copy()
        if values.size == 0:
            raise ValueError("observation needs at least one value")
        if np.any(noise <= 0):
            raise ValueError("noise_sd must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "noise_sd", noise)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class Source1D:
    """Point-like sources assigned to the cells containing their positions."""
    positions: Tuple[float, ...] = (0.26, 0.51, 0.76)
    strengths: Tuple[float, ...] = (0.001, 0.001, 0.001)

    def __post_init__(self):
        if len(self.positions) != len(self.strengths):
            raise ValueError("positions and strengths must have the same length")
        if any(not 0.0 < p < 1.0 for p in self.positions):
            raise ValueError("source positions must lie in (0, 1)")

    def source_term(self, grid: Grid1D) -> np.ndarray:
        b = np.zeros(grid.n_cells)
        for position, strength in zip(self.positions, self.strengths):
            b[grid.cell_of(position * grid.domain_length)] += strength
        return b


@dataclass(frozen=True)
class QoIResult:
    """Quantity of interest; censored results carry the horizon as value."""
    value: float
    censored: bool = False


# ---------------------------------------------------------------------------
# 1-D steady diffusion
# ---------------------------------------------------------------------------

def _harmonic_faces(conductivity: np.ndarray) -> np.ndarray:
    left, right = conductivity[:-1], conductivity[1:]
    return 2.0 * left * right / (left + right)


def solve_diffusion_1d(log_field: np.ndarray, sources: Source1D = Source1D(),
                       grid: Grid1D = Grid1D()) -> np.ndarray:
    """Solve ``d/dx(theta dh/dx) + b = 0`` with ``h(0) = h(L) = 0``.

    Cell-centred finite volumes; interface conductivities are harmonic means
    and the boundary faces sit half a cell from the first/last centre.
    Returns heads at the cell centres.
    """
    log_field = np.asarray(log_field, dtype=float)
    if log_field.shape != (grid.n_cells,):
        raise ValueError(f"expected {grid.n_cells} cells, got shape {log_field.shape}")
    theta = np.exp(log_field)
    dx2 = grid.dx ** 2

    faces = _harmonic_faces(theta) / dx2
    boundary = 2.0 * theta[[0, -1]] / dx2

    diagonal = np.zeros(grid.n_cells)
    diagonal[:-1] += faces
    diagonal[1:] += faces
    diagonal[0] += boundary[0]
    diagonal[-1] += boundary[1]

    banded = np.zeros((3, grid.n_cells))
    banded[0, 1:] = -faces
    banded[1] = diagonal
    banded[2, :-1] = -faces
    rhs = sources.source_term(grid)

    try:
        heads = scipy.linalg.solve_banded((1, 1), banded, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"1-D diffusion system is singular: {exc}") from exc

    residual = diagonal * heads - rhs
    residual[:-1] -= faces * heads[1:]
    residual[1:] -= faces * heads[:-1]
    scale = np.abs(diagonal).max() * np.abs(heads).max() + np.abs(rhs).max()
    if not np.all(np.isfinite(heads)) or np.abs(residual).max() > DIFFUSION_RESIDUAL_TOL * max(scale, 1e-300):
        raise SolverError("1-D diffusion solve inaccurate", residual=float(np.abs(residual).max()))
    return heads


def sensor_positions_1d(n_sensors: int = 7, grid: Grid1D = Grid1D()) -> np.ndarray:
    """Uniformly spaced sensors excluding the end points."""
    return grid.domain_length * np.arange(1, n_sensors + 1) / (n_sensors + 1)


def observe_1d(heads: np.ndarray, grid: Grid1D = Grid1D(),
               sensors: Optional[np.ndarray] = None) -> np.ndarray:
    """Heads linearly interpolated at the sensor positions."""
    if sensors is None:
        sensors = sensor_positions_1d(7, grid)
    x = np.concatenate([[0.0], grid.cell_centers, [grid.domain_length]])
    h = np.concatenate([[0.0], np.asarray(heads, dtype=float), [0.0]])
    return np.interp(sensors, x, h)


def qoi_flow_rate_1d(log_field: np.ndarray, head_difference: float = 1.0,
                     length: float = 1.0) -> QoIResult:
    """Flow rate through cells in series: harmonic mean conductivity times gradient."""
    conductivity = np.exp(np.asarray(log_field, dtype=float))
    return QoIResult(float(hmean(conductivity) * head_difference / length))


# ---------------------------------------------------------------------------
# 2-D steady confined flow
# ---------------------------------------------------------------------------

def well_cells(grid: Grid2D) -> Dict[str, object]:
    """Pumping well in the centre cell, observation wells in the quadrant centres."""
    low_x, high_x = grid.nx // 4, grid.nx - 1 - grid.nx // 4
    low_y, high_y = grid.ny // 4, grid.ny - 1 - grid.ny // 4
    return {
        "pumping": (grid.nx // 2, grid.ny // 2),
        "observation": [(low_x, low_y), (low_x, high_y), (high_x, low_y), (high_x, high_y)],
    }


def all_well_indices(grid: Grid2D) -> list:
    wells = well_cells(grid)
    cells = [wells["pumping"]] + list(wells["observation"])
    return [grid.flat_index(ix, iy) for ix, iy in cells]


@dataclass(frozen=True)
class FlowConductances:
    """Inter-cell and boundary conductances (m^2/s) of a transmissivity field."""
    x_faces: np.ndarray      # (ny, nx - 1)
    y_faces: np.ndarray      # (ny - 1, nx)
    left: np.ndarray         # (ny,)
    right: np.ndarray        # (ny,)


def flow_conductances(log_field: np.ndarray, grid: Grid2D) -> FlowConductances:
    transmissivity = grid.as_grid(np.exp(np.asarray(log_field, dtype=float)))
    tx = 2.0 * transmissivity[:, :-1] * transmissivity[:, 1:] / (transmissivity[:, :-1] + transmissivity[:, 1:])
    ty = 2.0 * transmissivity[:-1, :] * transmissivity[1:, :] / (transmissivity[:-1, :] + transmissivity[1:, :])
    return FlowConductances(
        x_faces=tx * grid.dy / grid.dx,
        y_faces=ty * grid.dx / grid.dy,
        left=2.0 * transmissivity[:, 0] * grid.dy / grid.dx,
        right=2.0 * transmissivity[:, -1] * grid.dy / grid.dx,
    )


def _flow_matrix(cond: FlowConductances, grid: Grid2D) -> scipy.sparse.csc_matrix:
    index = np.arange(grid.n_cells).reshape(grid.ny, grid.nx)
    rows, cols, vals = [], [], []
    diagonal = np.zeros((grid.ny, grid.nx))

    for a, b, c in ((index[:, :-1], index[:, 1:], cond.x_faces),
                    (index[:-1, :], index[1:, :], cond.y_faces)):
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
        vals += [-c.ravel(), -c.ravel()]
    diagonal[:, :-1] += cond.x_faces
    diagonal[:, 1:] += cond.x_faces
    diagonal[:-1, :] += cond.y_faces
    diagonal[1:, :] += cond.y_faces
    diagonal[:, 0] += cond.left
    diagonal[:, -1] += cond.right

    rows.append(index.ravel())
    cols.append(index.ravel())
    vals.append(diagonal.ravel())
    return scipy.sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_cells, grid.n_cells),
    )


def flow_mass_balance(log_field: np.ndarray, heads: np.ndarray, grid: Grid2D,
                      pumping_rate: float = 0.0,
                      boundary_heads: Tuple[float, float] = (2.5, 0.0)) -> Dict[str, float]:
    """Boundary inflow/outflow and relative residual of a steady solution."""
    cond = flow_conductances(log_field, grid)
    h = grid.as_grid(heads)
    left = cond.left * (boundary_heads[0] - h[:, 0])
    right = cond.right * (boundary_heads[1] - h[:, -1])
    fluxes = np.concatenate([left, right])
    inflow = float(fluxes[fluxes > 0].sum())
    outflow = float(-fluxes[fluxes < 0].sum())
    net = inflow - outflow - pumping_rate
    return {
        "inflow": inflow,
        "outflow": outflow,
        "pumping": float(pumping_rate),
        "residual": abs(net) / max(inflow, 1e-300),
    }


def solve_flow_2d(log_field: np.ndarray, pumping_rate: float = 5e-4,
                  boundary_heads: Tuple[float, float] = (2.5, 0.0),
                  grid: Grid2D = Grid2D(),
                  well: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Five-point steady flow: fixed heads left/right, no-flow top/bottom.

    ``log_field`` is log-transmissivity (m^2/s) on the flattened grid and
    ``pumping_rate`` (m^3/s) is withdrawn from the well cell (grid centre by
    default). Returns flat heads (m).
    """
    log_field = np.asarray(log_field, dtype=float)
    if log_field.shape != (grid.n_cells,):
        raise ValueError(f"expected {grid.n_cells} cells, got shape {log_field.shape}")
    cond = flow_conductances(log_field, grid)
    matrix = _flow_matrix(cond, grid)

    rhs = np.zeros((grid.ny, grid.nx))
    rhs[:, 0] += cond.left * boundary_heads[0]
    rhs[:, -1] += cond.right * boundary_heads[1]
    if pumping_rate:
        ix, iy = well if well is not None else well_cells(grid)["pumping"]
        rhs[iy, ix] -= pumping_rate
    rhs = rhs.ravel()

    try:
        heads = scipy.sparse.linalg.spsolve(matrix, rhs)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"2-D flow factorization failed: {exc}") from exc
    if not np.all(np.isfinite(heads)):
        raise SolverError("2-D flow solve produced non-finite heads")

    balance = flow_mass_balance(log_field, heads, grid, pumping_rate, boundary_heads)
    if balance["inflow"] > 0 and balance["residual"] > FLOW_BALANCE_TOL:
        raise SolverError("2-D flow mass balance not satisfied", residual=balance["residual"])
    return heads


def observe_heads_2d(heads: np.ndarray, grid: Grid2D = Grid2D()) -> np.ndarray:
    """Heads at the four observation wells."""
    return np.array([heads[grid.flat_index(ix, iy)] for ix, iy in well_cells(grid)["observation"]])


def observe_2d(heads: np.ndarray, log_field: np.ndarray, grid: Grid2D = Grid2D()) -> np.ndarray:
    """Four observation-well heads followed by the log-field at all five wells."""
    local = np.asarray(log_field, dtype=float)[all_well_indices(grid)]
    return np.concatenate([observe_heads_2d(heads, grid), local])


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def log_likelihood(observation: Observation, simulated: Sequence[float]) -> float:
    """Independent Gaussian log-likelihood, always in log space."""
    simulated = np.asarray(simulated, dtype=float)
    if simulated.shape != observation.values.shape:
        raise ValueError(
            f"simulated values shape {simulated.shape} does not match observation {observation.values.shape}"
        )
    return float(np.sum(norm.logpdf(observation.values, loc=simulated, scale=observation.noise_sd)))
