"""Mixed RT0 Darcy solver on uniform triangles, particle tracking, travel-time LSF.

The unit square is meshed with m x m cells of size h, each cut along the
SW-NE diagonal.  Velocity lives in lowest-order Raviart-Thomas space (one
normal-flux DOF per edge), pressure is piecewise constant.  Pressure data
(1 on the west boundary, 0 on the east) enters the flux equation naturally;
the no-flow condition on the horizontal boundaries is essential and is
eliminated from the system.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ModelEvaluationError, NonconvergenceError, StagnationError
from .models import LimitStateModel
from .randomfield import KlBasis, kl_basis_2d

DEFAULT_LEVEL_DIMS_2D = (10, 20, 40, 80, 150, 150)


@dataclass(frozen=True)
class FlowMesh:
    """Uniform triangulation of the unit square with RT0 edge bookkeeping."""

    h: float
    m: int                      # cells per side
    n_edges: int
    free_edges: np.ndarray      # edge ids with unknown flux
    free_index: np.ndarray      # edge id -> position among free edges (-1 if fixed)
    tri_edges: np.ndarray       # (n_tri, 3) edge ids
    tri_signs: np.ndarray       # (n_tri, 3) +-1: global normal vs outward normal
    tri_opposite: np.ndarray    # (n_tri, 3, 2) vertex opposite each edge
    centroids: np.ndarray       # (n_tri, 2)
    west_edges: np.ndarray      # edge ids on x = 0

    @property
    def n_tri(self) -> int:
        return 2 * self.m * self.m

    @property
    def area(self) -> float:
        return 0.5 * self.h * self.h

    def locate(self, x: float, y: float) -> int:
        """Triangle containing (x, y); ties on the diagonal go to the lower triangle."""
        m = self.m
        i = min(max(int(x / self.h), 0), m - 1)
        j = min(max(int(y / self.h), 0), m - 1)
        xi = x / self.h - i
        eta = y / self.h - j
        lower = eta <= xi
        return 2 * (j * m + i) + (0 if lower else 1)


@lru_cache(maxsize=None)
def build_mesh(m: int) -> FlowMesh:
    h = 1.0 / m
    n_h = m * (m + 1)           # horizontal edges H(i,j): j*m + i
    n_v = (m + 1) * m           # vertical edges V(i,j): n_h + j*(m+1) + i
    n_d = m * m                 # diagonal edges D(i,j): n_h + n_v + j*m + i
    n_edges = n_h + n_v + n_d

    def eh(i, j):
        return j * m + i

    def ev(i, j):
        return n_h + j * (m + 1) + i

    def ed(i, j):
        return n_h + n_v + j * m + i

    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    i = ii.ravel()
    j = jj.ravel()
    n_cells = m * m
    tri_edges = np.empty((2 * n_cells, 3), dtype=int)
    tri_signs = np.empty((2 * n_cells, 3), dtype=int)
    tri_opposite = np.empty((2 * n_cells, 3, 2))
    centroids = np.empty((2 * n_cells, 2))

    cell = j * m + i
    low = 2 * cell
    up = low + 1
    ax, ay = i * h, j * h
    # lower triangle (i,j)-(i+1,j)-(i+1,j+1): edges H(i,j), V(i+1,j), D(i,j)
    tri_edges[low, 0] = eh(i, j)
    tri_edges[low, 1] = ev(i + 1, j)
    tri_edges[low, 2] = ed(i, j)
    tri_signs[low] = (-1, 1, -1)
    tri_opposite[low, 0] = np.stack([ax + h, ay + h], axis=-1)   # opposite of H: C
    tri_opposite[low, 1] = np.stack([ax, ay], axis=-1)           # opposite of V: A
    tri_opposite[low, 2] = np.stack([ax + h, ay], axis=-1)       # opposite of D: B
    centroids[low] = np.stack([ax + 2 * h / 3, ay + h / 3], axis=-1)
    # upper triangle (i,j)-(i+1,j+1)-(i,j+1): edges D(i,j), H(i,j+1), V(i,j)
    tri_edges[up, 0] = ed(i, j)
    tri_edges[up, 1] = eh(i, j + 1)
    tri_edges[up, 2] = ev(i, j)
    tri_signs[up] = (1, 1, -1)
    tri_opposite[up, 0] = np.stack([ax, ay + h], axis=-1)        # opposite of D: C
    tri_opposite[up, 1] = np.stack([ax, ay], axis=-1)            # opposite of H: A
    tri_opposite[up, 2] = np.stack([ax + h, ay + h], axis=-1)    # opposite of V: B
    centroids[up] = np.stack([ax + h / 3, ay + 2 * h / 3], axis=-1)

    no_flow = np.concatenate([
        [eh(k, 0) for k in range(m)],        # y = 0
        [eh(k, m) for k in range(m)],        # y = 1
    ])
    free_mask = np.ones(n_edges, dtype=bool)
    free_mask[no_flow] = False
    free_edges = np.flatnonzero(free_mask)
    free_index = np.full(n_edges, -1, dtype=int)
    free_index[free_edges] = np.arange(free_edges.size)
    west = np.array([ev(0, k) for k in range(m)])
    return FlowMesh(
        h=h, m=m, n_edges=n_edges, free_edges=free_edges, free_index=free_index,
        tri_edges=tri_edges, tri_signs=tri_signs, tri_opposite=tri_opposite,
        centroids=centroids, west_edges=west,
    )


class _Rt0Assembler:
    """Precomputed sparsity pattern; only the 1/a scaling changes per sample."""

    def __init__(self, mesh: FlowMesh):
        self.mesh = mesh
        n_free = mesh.free_edges.size
        n_tri = mesh.n_tri
        self.n_free = n_free
        self.size = n_free + n_tri

        # local integrals S[a,b] = sum_q (m_q - p_a).(m_q - p_b) per shape,
        # exact for the quadratic integrand via edge-midpoint quadrature
        h = mesh.h
        shapes = {
            0: np.array([[0.0, 0.0], [h, 0.0], [h, h]]),   # lower
            1: np.array([[0.0, 0.0], [h, h], [0.0, h]]),   # upper
        }
        s_loc = {}
        for key, verts in shapes.items():
            mids = 0.5 * (verts + np.roll(verts, -1, axis=0))  # AB, BC, CA midpoints
            opp = np.roll(verts, -2, axis=0)                    # C, A, B
            s = np.empty((3, 3))
            for a in range(3):
                for b in range(3):
                    s[a, b] = sum((mids[q] - opp[a]) @ (mids[q] - opp[b]) for q in range(3))
            s_loc[key] = s

        area = mesh.area
        factor = 1.0 / (12.0 * area)
        sign_outer = mesh.tri_signs[:, :, None] * mesh.tri_signs[:, None, :]
        s_all = np.where(
            (np.arange(n_tri) % 2 == 0)[:, None, None], s_loc[0][None], s_loc[1][None]
        )
        self._m_base = factor * sign_outer * s_all              # (n_tri, 3, 3)

        rows = mesh.free_index[mesh.tri_edges][:, :, None].repeat(3, axis=2)
        cols = mesh.free_index[mesh.tri_edges][:, None, :].repeat(3, axis=1)
        keep = (rows >= 0) & (cols >= 0)
        self._m_rows = rows[keep]
        self._m_cols = cols[keep]
        self._m_keep = keep
        self._m_tri = np.broadcast_to(np.arange(n_tri)[:, None, None], keep.shape)[keep]

        # coupling block C[e, T] = -sign, plus its transpose
        e_free = mesh.free_index[mesh.tri_edges]
        t_ids = np.broadcast_to(np.arange(n_tri)[:, None], e_free.shape)
        ok = e_free >= 0
        c_rows = e_free[ok]
        c_cols = n_free + t_ids[ok]
        c_vals = -mesh.tri_signs[ok].astype(float)
        self._fixed_rows = np.concatenate([c_rows, c_cols])
        self._fixed_cols = np.concatenate([c_cols, c_rows])
        self._fixed_vals = np.concatenate([c_vals, c_vals])

        rhs = np.zeros(self.size)
        rhs[mesh.free_index[mesh.west_edges]] = 1.0  # west pressure datum v = 1
        self.rhs = rhs

    def solve(self, a_tri: np.ndarray) -> "DiscreteVelocity":
        if np.any(a_tri <= 0) or not np.all(np.isfinite(a_tri)):
            raise ModelEvaluationError("permeability must be positive and finite")
        m_vals = (self._m_base / a_tri[:, None, None])[self._m_keep]
        rows = np.concatenate([self._m_rows, self._fixed_rows])
        cols = np.concatenate([self._m_cols, self._fixed_cols])
        vals = np.concatenate([m_vals, self._fixed_vals])
        mat = sp.csc_matrix((vals, (rows, cols)), shape=(self.size, self.size))
        try:
            lu = splu(mat)
        except RuntimeError as exc:  # pragma: no cover - singular should not occur
            raise ModelEvaluationError(f"saddle-point factorization failed: {exc}") from exc
        sol = lu.solve(self.rhs)
        fluxes = np.zeros(self.mesh.n_edges)
        fluxes[self.mesh.free_edges] = sol[: self.n_free]
        pressures = sol[self.n_free:]
        return DiscreteVelocity(mesh=self.mesh, fluxes=fluxes, pressures=pressures)


@dataclass
class DiscreteVelocity:
    """RT0 velocity field: per-edge normal fluxes plus per-triangle pressures."""

    mesh: FlowMesh
    fluxes: np.ndarray
    pressures: np.ndarray

    def velocity_at(self, point) -> np.ndarray:
        x, y = float(point[0]), float(point[1])
        tri = self.mesh.locate(x, y)
        q = self.fluxes[self.mesh.tri_edges[tri]] * self.mesh.tri_signs[tri]
        scale = 1.0 / (2.0 * self.mesh.area)
        rel = np.array([x, y])[None, :] - self.mesh.tri_opposite[tri]
        return scale * (q @ rel)

    def divergence(self) -> np.ndarray:
        """Constant per-triangle divergence (net outflux over area)."""
        signed = self.fluxes[self.mesh.tri_edges] * self.mesh.tri_signs
        return signed.sum(axis=1) / self.mesh.area

    def boundary_flux(self, side: str) -> float:
        """Net outward flux across the 'west' or 'east' boundary."""
        m = self.mesh.m
        n_h = m * (m + 1)
        if side == "west":
            ids = [n_h + j * (m + 1) + 0 for j in range(m)]
            orient = -1.0  # outward normal (-1, 0) vs global (1, 0)
        elif side == "east":
            ids = [n_h + j * (m + 1) + m for j in range(m)]
            orient = 1.0
        else:
            raise ValueError("side must be 'west' or 'east'")
        return float(orient * self.fluxes[ids].sum())


def solve_darcy_rt0(a, h: float) -> DiscreteVelocity:
    """Solve the mixed Darcy system for one permeability sample.

    `a` is a callable on (n, 2) points or an array of per-triangle values at
    centroids.
    """
    m = round(1.0 / h)
    if abs(m * h - 1.0) > 1e-12:
        raise ValueError("1/h must be an integer")
    mesh = build_mesh(m)
    a_tri = np.asarray(a(mesh.centroids) if callable(a) else a, dtype=float)
    if a_tri.shape != (mesh.n_tri,):
        raise ValueError(f"expected {mesh.n_tri} triangle values, got {a_tri.shape}")
    return _Rt0Assembler(mesh).solve(a_tri)


def trace_particle(vel: DiscreteVelocity, start, h: float,
                   max_steps: int = 10_000_000) -> float:
    """Forward-Euler travel time from `start` to the first boundary crossing.

    Step size is h / (2 ||q||); the final step is clipped to the exact exit
    point.  A crossing requires a strictly outward velocity component through
    the face, so a start on the boundary (or a path grazing a no-flow
    boundary tangentially) keeps moving instead of terminating at time zero.
    """
    x = float(start[0])
    y = float(start[1])
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError("start point must lie in the closed unit square")
    mesh = vel.mesh
    signed = vel.fluxes[mesh.tri_edges] * mesh.tri_signs
    scale = 1.0 / (2.0 * mesh.area)
    opposite = mesh.tri_opposite
    time = 0.0
    for _ in range(max_steps):
        tri = mesh.locate(x, y)
        q = signed[tri]
        qx = scale * (q[0] * (x - opposite[tri, 0, 0]) + q[1] * (x - opposite[tri, 1, 0])
                      + q[2] * (x - opposite[tri, 2, 0]))
        qy = scale * (q[0] * (y - opposite[tri, 0, 1]) + q[1] * (y - opposite[tri, 1, 1])
                      + q[2] * (y - opposite[tri, 2, 1]))
        speed = np.hypot(qx, qy)
        if speed == 0.0:
            raise StagnationError(f"zero velocity at ({x:.6g}, {y:.6g})")
        dt = h / (2.0 * speed)
        nx = x + dt * qx
        ny = y + dt * qy
        s = np.inf
        if qx > 0 and nx >= 1.0:
            s = min(s, (1.0 - x) / (dt * qx))
        elif qx < 0 and nx <= 0.0:
            s = min(s, (0.0 - x) / (dt * qx))
        if qy > 0 and ny >= 1.0:
            s = min(s, (1.0 - y) / (dt * qy))
        elif qy < 0 and ny <= 0.0:
            s = min(s, (0.0 - y) / (dt * qy))
        if np.isfinite(s):
            return time + min(max(s, 0.0), 1.0) * dt
        x, y = nx, ny
        time += dt
    raise NonconvergenceError(f"particle did not exit within {max_steps} steps")


class FlowCellModel(LimitStateModel):
    """Travel-time limit state tau - tau0 for the 2D Darcy flow cell."""

    def __init__(self, tau0: float = 0.03, corr_length: float = 0.5,
                 variance: float = 1.0, truncation: int = 150, max_level: int = 6,
                 level_dims=None, start=(0.0, 0.5), basis: KlBasis | None = None):
        super().__init__()
        if tau0 <= 0:
            raise ValueError("travel-time threshold must be positive")
        self.tau0 = float(tau0)
        self.start = (float(start[0]), float(start[1]))
        self.max_level = int(max_level)
        self.cost_dim = 2
        if basis is None:
            basis = kl_basis_2d(corr_length, truncation, mean=0.0, variance=variance)
        self.basis = basis
        if level_dims is None:
            level_dims = DEFAULT_LEVEL_DIMS_2D[: self.max_level]
        self.level_dims = tuple(int(d) for d in level_dims)
        if len(self.level_dims) != self.max_level:
            raise ValueError("need one dimension per level")
        if any(d2 < d1 for d1, d2 in zip(self.level_dims, self.level_dims[1:])):
            raise ValueError("level dimensions must be non-decreasing")
        if self.level_dims[-1] > basis.truncation:
            raise ValueError("finest level dimension exceeds KL truncation")
        self._assemblers: dict[int, _Rt0Assembler] = {}
        self._mode_matrices: dict[int, np.ndarray] = {}

    @classmethod
    def fixed_dimension(cls, **kwargs) -> "FlowCellModel":
        max_level = kwargs.get("max_level", 6)
        truncation = kwargs.get("truncation", 150)
        return cls(level_dims=(truncation,) * max_level, **kwargs)

    def mesh_size(self, level: int) -> float:
        return 2.0 ** (-(level + 1))

    def dim(self, level: int) -> int:
        return self.level_dims[level - 1]

    def _assembler(self, level: int) -> _Rt0Assembler:
        if level not in self._assemblers:
            mesh = build_mesh(round(1.0 / self.mesh_size(level)))
            self._assemblers[level] = _Rt0Assembler(mesh)
        return self._assemblers[level]

    def _modes(self, level: int) -> np.ndarray:
        if level not in self._mode_matrices:
            mesh = self._assembler(level).mesh
            theta = self.basis.eigenfunction_matrix(mesh.centroids, self.basis.truncation)
            self._mode_matrices[level] = theta * np.sqrt(self.basis.eigenvalues)[None, :]
        return self._mode_matrices[level]

    def permeability(self, xi, level: int) -> np.ndarray:
        """Per-triangle log-normal permeability for one coefficient vector."""
        xi = np.asarray(xi, dtype=float)
        modes = self._modes(level)[:, : xi.shape[0]]
        z = self.basis.mean + np.sqrt(self.basis.variance) * (modes @ xi)
        return np.exp(z)

    def travel_time(self, xi, level: int) -> float:
        assembler = self._assembler(level)
        vel = assembler.solve(self.permeability(xi, level))
        return trace_particle(vel, self.start, self.mesh_size(level))

    def _evaluate(self, xi, level):
        return self.travel_time(xi, level) - self.tau0
