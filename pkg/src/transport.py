"""
Advection-dispersion transport on the 2-D grid and the breakthrough-time
quantity of interest.

The steady velocity field comes from ``solve_flow_2d`` without pumping. The
concentration equation is discretized with cell-centred finite volumes:
upwind advection, two-point dispersion with the longitudinal/transverse
tensor diagonal evaluated on each face, central differences for the
cross-dispersion terms, and explicit time stepping at a step size small
enough to keep the update stable.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from .errors import SolverError
from .forward_models import QoIResult, flow_conductances, solve_flow_2d
from .random_fields import Grid2D

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class TransportParams:
    """Transport properties; concentrations in g/l, times in days."""
    porosity: float = 0.3
    molecular_diffusion: float = 1e-9
    longitudinal_dispersivity: float = 1.0
    transverse_ratio: float = 0.1
    source_concentration: float = 1.0
    breakthrough_concentration: float = 1e-3
    horizon_days: float = 3500.0
    head_difference: float = 2.5
    courant: float = 0.9
    max_dt_days: float = 1.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        positive = ("porosity", "molecular_diffusion", "longitudinal_dispersivity",
                    "transverse_ratio", "source_concentration", "breakthrough_concentration",
                    "horizon_days", "head_difference", "courant", "max_dt_days", "max_steps")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.breakthrough_concentration >= self.source_concentration:
            raise ValueError("breakthrough concentration must be below the source concentration")

    @property
    def transverse_dispersivity(self) -> float:
        return self.longitudinal_dispersivity * self.transverse_ratio


def critical_cell(grid: Grid2D) -> Tuple[int, int]:
    """Monitoring cell in the middle of the right edge."""
    return grid.nx - 1, grid.ny // 2


class TransportOperator:
    """Linear operator ``V dc/dt = A c + s`` for one transmissivity field.

    ``matrix`` (m^3/s) couples each cell to its face neighbours and, through
    the cross-dispersion terms, to their vertical or horizontal neighbours;
    ``source`` holds the left-boundary inflow terms (m^3/s * g/l).
    ``flows`` bypasses the flow solve with given ``(qx, qy)`` face flows.
    """

    def __init__(self, log_field: Optional[np.ndarray], grid: Grid2D, params: TransportParams,
                 flows: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> None:
        self.grid = grid
        self.params = params
        self.volume = grid.dx * grid.dy * grid.thickness * params.porosity

        if flows is None:
            qx, qy = face_flows(log_field, grid, params)
        else:
            qx, qy = (np.asarray(q, dtype=float) for q in flows)
            if qx.shape != (grid.ny, grid.nx + 1) or qy.shape != (grid.ny + 1, grid.nx):
                raise ValueError("face flows do not match the grid")
        self.qx, self.qy = qx, qy

        area_x = grid.dy * grid.thickness * params.porosity
        area_y = grid.dx * grid.thickness * params.porosity
        vx_cell = 0.5 * (qx[:, :-1] + qx[:, 1:]) / area_x
        vy_cell = 0.5 * (qy[:-1, :] + qy[1:, :]) / area_y

        # transverse component on each face from the adjacent cell velocities
        vx_face = qx / area_x
        vy_on_x = np.zeros_like(qx)
        vy_on_x[:, 1:-1] = 0.5 * (vy_cell[:, :-1] + vy_cell[:, 1:])
        vy_on_x[:, 0] = vy_cell[:, 0]
        vy_on_x[:, -1] = vy_cell[:, -1]
        vy_face = qy / area_y
        vx_on_y = np.zeros_like(qy)
        vx_on_y[1:-1, :] = 0.5 * (vx_cell[:-1, :] + vx_cell[1:, :])

        d_xx = self._dispersion(vx_face, vy_on_x)
        d_yy = self._dispersion(vy_face, vx_on_y)
        disp_x = d_xx * area_x / grid.dx
        disp_y = d_yy * area_y / grid.dy
        # left boundary sits half a cell away; no dispersive flux through the outflow edge
        disp_x[:, 0] *= 2.0
        disp_x[:, -1] = 0.0
        self.boundary_dispersion = disp_x[:, 0]

        cross_x = self._cross_dispersion(vx_face[:, 1:-1], vy_on_x[:, 1:-1]) * area_x
        cross_y = self._cross_dispersion(vy_face[1:-1, :], vx_on_y[1:-1, :]) * area_y

        self.matrix, self.source = self._assemble(qx, qy, disp_x, disp_y, cross_x, cross_y)
        self.rate_diagonal = -self.matrix.diagonal() / self.volume
        self.rate_bound = float(abs(self.matrix).sum(axis=1).max()) / self.volume

    def _dispersion(self, v_long: np.ndarray, v_trans: np.ndarray) -> np.ndarray:
        speed = np.hypot(v_long, v_trans)
        safe = np.where(speed > 0, speed, 1.0)
        alpha_l = self.params.longitudinal_dispersivity
        alpha_t = self.params.transverse_dispersivity
        mechanical = np.where(speed > 0, (alpha_l * v_long ** 2 + alpha_t * v_trans ** 2) / safe, 0.0)
        return mechanical + self.params.molecular_diffusion

    def _cross_dispersion(self, v_face: np.ndarray, v_other: np.ndarray) -> np.ndarray:
        speed = np.hypot(v_face, v_other)
        safe = np.where(speed > 0, speed, 1.0)
        spread = self.params.longitudinal_dispersivity - self.params.transverse_dispersivity
        return np.where(speed > 0, spread * v_face * v_other / safe, 0.0)

    def _assemble(self, qx, qy, disp_x, disp_y, cross_x, cross_y):
        grid = self.grid
        c_src = self.params.source_concentration
        index = np.arange(grid.n_cells).reshape(grid.ny, grid.nx)
        diagonal = np.zeros((grid.ny, grid.nx))
        rows, cols, vals = [], [], []

        def couple(a, b, flow, disp):
            # flow > 0 carries mass from a to b
            out_a = np.maximum(flow, 0.0)
            out_b = np.maximum(-flow, 0.0)
            rows.extend([b.ravel(), a.ravel()])
            cols.extend([a.ravel(), b.ravel()])
            vals.extend([(out_a + disp).ravel(), (out_b + disp).ravel()])
            return out_a + disp, out_b + disp

        loss_a, loss_b = couple(index[:, :-1], index[:, 1:], qx[:, 1:-1], disp_x[:, 1:-1])
        diagonal[:, :-1] -= loss_a
        diagonal[:, 1:] -= loss_b
        loss_a, loss_b = couple(index[:-1, :], index[1:, :], qy[1:-1, :], disp_y[1:-1, :])
        diagonal[:-1, :] -= loss_a
        diagonal[1:, :] -= loss_b

        # flux a -> b gains -D_xy dc/dn_t, the tangential gradient averaged over both cells
        def cross(a, b, coef, ahead, behind):
            for cells, weight in ((ahead, -coef), (behind, coef)):
                for side in (a, b):
                    neighbour = cells[side]
                    rows.extend([index[b].ravel(), index[a].ravel()])
                    cols.extend([neighbour.ravel(), neighbour.ravel()])
                    vals.extend([weight.ravel(), -weight.ravel()])

        jp = np.minimum(np.arange(grid.ny) + 1, grid.ny - 1)
        jm = np.maximum(np.arange(grid.ny) - 1, 0)
        coef_x = cross_x / (2.0 * ((jp - jm) * grid.dy)[:, None])
        left, right = np.s_[:, :-1], np.s_[:, 1:]
        cross(left, right, coef_x, index[jp, :], index[jm, :])
        ip = np.minimum(np.arange(grid.nx) + 1, grid.nx - 1)
        im = np.maximum(np.arange(grid.nx) - 1, 0)
        coef_y = cross_y / (2.0 * ((ip - im) * grid.dx)[None, :])
        lower, upper = np.s_[:-1, :], np.s_[1:, :]
        cross(lower, upper, coef_y, index[:, ip], index[:, im])

        source = np.zeros((grid.ny, grid.nx))
        left_in = np.maximum(qx[:, 0], 0.0)
        diagonal[:, 0] -= np.maximum(-qx[:, 0], 0.0) + disp_x[:, 0]
        source[:, 0] += (left_in + disp_x[:, 0]) * c_src
        diagonal[:, -1] -= np.maximum(qx[:, -1], 0.0)

        rows.append(index.ravel())
        cols.append(index.ravel())
        vals.append(diagonal.ravel())
        matrix = scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_cells, grid.n_cells),
        )
        return matrix, source.ravel()

    def stable_dt(self) -> float:
        """Largest step (s) not exceeding ``max_dt_days`` inside the Gershgorin stability bound."""
        dt = self.params.max_dt_days * SECONDS_PER_DAY
        max_rate = max(float(self.rate_diagonal.max()), 0.5 * self.rate_bound)
        while max_rate > 0 and dt * max_rate > self.params.courant:
            dt *= 0.5
        return dt

    def rate(self, concentration: np.ndarray) -> np.ndarray:
        return (self.matrix @ concentration + self.source) / self.volume

    def mass(self, concentration: np.ndarray) -> float:
        return float(self.volume * np.sum(concentration))

    def boundary_flux(self, concentration: np.ndarray) -> float:
        """Net solute mass rate (g/s * 1e3) entering through the boundaries."""
        c = self.grid.as_grid(concentration)
        c_src = self.params.source_concentration
        left = np.where(self.qx[:, 0] > 0, self.qx[:, 0] * c_src, self.qx[:, 0] * c[:, 0])
        left = left + self.boundary_dispersion * (c_src - c[:, 0])
        right = np.where(self.qx[:, -1] > 0, self.qx[:, -1] * c[:, -1], 0.0)
        return float(left.sum() - right.sum())


def face_flows(log_field: np.ndarray, grid: Grid2D,
               params: TransportParams) -> Tuple[np.ndarray, np.ndarray]:
    """Steady face flows (m^3/s), positive along +x / +y, without pumping."""
    heads = grid.as_grid(solve_flow_2d(
        log_field, pumping_rate=0.0, boundary_heads=(params.head_difference, 0.0), grid=grid,
    ))
    cond = flow_conductances(log_field, grid)
    qx = np.zeros((grid.ny, grid.nx + 1))
    qx[:, 1:-1] = cond.x_faces * (heads[:, :-1] - heads[:, 1:])
    qx[:, 0] = cond.left * (params.head_difference - heads[:, 0])
    qx[:, -1] = cond.right * heads[:, -1]
    qy = np.zeros((grid.ny + 1, grid.nx))
    qy[1:-1, :] = cond.y_faces * (heads[:-1, :] - heads[1:, :])
    return qx, qy


@dataclass
class TransportResult:
    breakthrough: QoIResult
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)
    steps: int = 0
    dt_days: float = 0.0


def simulate_transport(log_field: np.ndarray, grid: Grid2D = Grid2D(),
                       params: TransportParams = TransportParams(),
                       snapshot_days: Sequence[float] = (),
                       stop_at_breakthrough: bool = True) -> TransportResult:
    """Time-step the plume until breakthrough at the critical cell or the horizon."""
    operator = TransportOperator(log_field, grid, params)
    dt = operator.stable_dt()
    horizon = params.horizon_days * SECONDS_PER_DAY
    n_steps = int(np.ceil(horizon / dt))
    if n_steps > params.max_steps:
        raise SolverError(
            f"transport needs {n_steps} steps (dt={dt / SECONDS_PER_DAY:.3g} d), limit is {params.max_steps}"
        )
    if dt < params.max_dt_days * SECONDS_PER_DAY:
        logger.debug("transport step reduced to %.4g days for stability", dt / SECONDS_PER_DAY)

    step_matrix = (scipy.sparse.identity(grid.n_cells, format="csr")
                   + (dt / operator.volume) * operator.matrix).tocsr()
    step_source = (dt / operator.volume) * operator.source

    ix, iy = critical_cell(grid)
    target = grid.flat_index(ix, iy)
    pending = sorted(float(d) for d in snapshot_days)
    snapshots: Dict[float, np.ndarray] = {}
    concentration = np.zeros(grid.n_cells)
    breakthrough: Optional[QoIResult] = None

    step = 0
    for step in range(1, n_steps + 1):
        concentration = step_matrix @ concentration + step_source
        t_days = step * dt / SECONDS_PER_DAY
        while pending and t_days >= pending[0]:
            snapshots[pending.pop(0)] = concentration.copy()
        if breakthrough is None and concentration[target] >= params.breakthrough_concentration:
            breakthrough = QoIResult(min(t_days, params.horizon_days), censored=False)
        if breakthrough is not None and stop_at_breakthrough and not pending:
            break
    if breakthrough is None:
        breakthrough = QoIResult(params.horizon_days, censored=True)
    return TransportResult(breakthrough, snapshots, step, dt / SECONDS_PER_DAY)


def qoi_breakthrough_2d(log_field: np.ndarray, transport: TransportParams = TransportParams(),
                        grid: Grid2D = Grid2D()) -> QoIResult:
    """First time (days) the critical-cell concentration reaches the breakthrough level."""
    return simulate_transport(log_field, grid, transport).breakthrough


def breakthrough_front(concentration: np.ndarray, grid: Grid2D,
                       params: TransportParams = TransportParams()) -> np.ndarray:
    """Boolean ``(ny, nx)`` mask of cells at or above the breakthrough level."""
    return grid.as_grid(concentration) >= params.breakthrough_concentration
