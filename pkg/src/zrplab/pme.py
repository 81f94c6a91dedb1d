"""Deterministic solver for du/dt = (1/2) Laplacian(u^alpha) on the torus.

Explicit conservative stencil on a periodic grid, step size guarded by the
diffusive stability bound, used as the macroscopic reference that trajectory
ensembles are measured against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .configurations import window_average_field, write_snapshot
from .lattice import TorusLattice

CFL_SAFETY = 0.9


@dataclass
class GridField:
    """Cell values u >= 0 on the d-dimensional periodic grid with M cells
    per axis, cell j sitting at position j / M."""

    d: int
    M: int
    values: np.ndarray

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"grids are 1d or 2d, got d={self.d}")
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape != (self.M**self.d,):
            raise ValueError(f"field size {self.values.size} != M^d")
        if (self.values < 0).any() or not np.isfinite(self.values).all():
            raise ValueError("field must be finite and nonnegative")

    @property
    def shaped(self) -> np.ndarray:
        return self.values.reshape((self.M,) * self.d)

    def mass(self) -> float:
        """Mean cell value, summed compensated so the audit itself adds no
        drift."""
        return math.fsum(self.values) / self.M**self.d

    def at_positions(self, coords: np.ndarray) -> np.ndarray:
        """Periodic linear interpolation at fractional positions in [0,1)^d;
        coords has shape (n, d)."""
        pts = (np.asarray(coords, dtype=float) * self.M).T
        return ndimage.map_coordinates(self.shaped, pts, order=1,
                                       mode="grid-wrap")

    def save(self, path, meta=None):
        write_snapshot(path, self.values, meta=meta,
                       lattice=TorusLattice(self.d, self.M))


def cfl_limit(field: GridField, alpha: float) -> float:
    """Largest stable step: CFL_SAFETY * dx^2 / (2 d alpha max(u)^(alpha-1))."""
    peak = float(field.values.max())
    dx2 = 1.0 / field.M**2
    if peak == 0.0:
        return math.inf
    return CFL_SAFETY * dx2 / (2.0 * field.d * alpha * peak ** (alpha - 1.0))


def step_pme(field: GridField, dt: float, alpha: float) -> GridField:
    """One explicit update u += dt/(2 dx^2) * discrete_laplacian(u^alpha).

    The stencil is in conservative form, so the cell sum is preserved up
    to floating-point rounding; under the step bound the update is also
    monotone and keeps u nonnegative."""
    if alpha < 1:
        raise ValueError(f"need alpha >= 1, got {alpha}")
    limit = cfl_limit(field, alpha)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:.3e} violates the stability bound {limit:.3e}")
    w = field.shaped ** alpha
    lap = np.zeros_like(w)
    for axis in range(field.d):
        lap += np.roll(w, 1, axis) + np.roll(w, -1, axis) - 2.0 * w
    new = field.shaped + (0.5 * dt * field.M**2) * lap
    # the monotone update can round a vacuum cell to -0.0; clip exact zeros
    return GridField(field.d, field.M, np.maximum(new, 0.0).reshape(-1))


@dataclass
class PMESolution:
    """Solve output: snapshots on the requested times plus audit totals."""

    times: np.ndarray
    fields: list
    steps: int
    mass_drift: float

    @property
    def final(self) -> GridField:
        return self.fields[-1]


def _initial_field(u0, M, d) -> GridField:
    if isinstance(u0, GridField):
        return u0
    if callable(u0):
        if M is None:
            raise ValueError("sampling a profile needs M")
        axes = [np.arange(M) / M] * d
        mesh = np.meshgrid(*axes, indexing="ij")
        return GridField(d, M, np.asarray(u0(*mesh), dtype=float).reshape(-1))
    arr = np.asarray(u0, dtype=float)
    side = arr.shape[0] if arr.ndim > 0 else 0
    return GridField(arr.ndim if arr.ndim > 1 else 1, side, arr.reshape(-1))


def solve_pme(u0, t_fin: float, alpha: float, *, M: int | None = None,
              d: int = 1, snap_times=None) -> PMESolution:
    """March the explicit scheme to t_fin with the step size re-bounded
    every step, landing exactly on each requested snapshot time."""
    if t_fin <= 0:
        raise ValueError("t_fin must be positive")
    field = _initial_field(u0, M, d)
    if snap_times is None:
        snap_times = [t_fin]
    snap_times = np.asarray(snap_times, dtype=float)
    if (np.diff(snap_times) <= 0).any() or snap_times.size == 0:
        raise ValueError("snapshot times must be nonempty, strictly increasing")
    if snap_times[0] < 0 or abs(snap_times[-1] - t_fin) > 1e-12 * max(1.0, t_fin):
        raise ValueError("snapshot times must end at t_fin")

    mass0 = field.mass()
    fields = []
    t = 0.0
    steps = 0
    for target in snap_times:
        while t < target - 1e-15 * max(1.0, target):
            limit = cfl_limit(field, alpha)
            if not math.isfinite(limit):  # vacuum field: nothing evolves
                t = target
                break
            dt = min(limit, target - t)
            field = step_pme(field, dt, alpha)
            t += dt
            steps += 1
        fields.append(field)
    drift = abs(field.mass() - mass0) / max(abs(mass0), 1e-300)
    return PMESolution(times=snap_times, fields=fields, steps=steps,
                       mass_drift=drift)


@dataclass
class HydroComparison:
    """Ensemble distance between smoothed trajectories and the grid
    solution at shared sample times."""

    times: np.ndarray
    distances: np.ndarray  # (n_trajectories, n_times)
    mean: np.ndarray
    stderr: np.ndarray

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
            "n_trajectories": int(self.distances.shape[0]),
        }


def compare_hydrodynamic(records, rho0, eps: float, alpha: float, *,
                         M: int | None = None) -> HydroComparison:
    """L1 distance between the window-averaged empirical field of each
    trajectory and the macroscopic solution started from rho0, per sample
    time, reported as ensemble mean with standard error.

    Records must share one sample grid and carry snapshots; rho0 is the
    profile the ensemble was drawn from, as a callable on [0,1)^d.
    """
    if not records:
        raise ValueError("need at least one trajectory record")
    times = records[0].times
    for rec in records[1:]:
        if rec.times.shape != times.shape or not np.allclose(rec.times, times):
            raise ValueError("trajectory records use mismatched sample grids")
    if any(rec.snapshots is None or len(rec.snapshots) != times.size
           for rec in records):
        raise ValueError("records need snapshots at every sample time")

    lat = records[0].snapshots[0].lattice
    if M is None:
        M = lat.N
    coords = np.array([lat.site_coords(i) for i in range(lat.n_sites)],
                      dtype=float) / lat.N

    positive = times > 0
    if positive.any():
        sol = solve_pme(rho0, float(times[-1]), alpha, M=M, d=lat.d,
                        snap_times=times[positive])
        solved = iter(sol.fields)
    ref = []
    init = _initial_field(rho0, M, lat.d)
    for t in times:
        ref.append(init.at_positions(coords) if t == 0.0
                   else next(solved).at_positions(coords))

    dist = np.zeros((len(records), times.size))
    for i, rec in enumerate(records):
        for j, snap in enumerate(rec.snapshots):
            emp = window_average_field(snap, eps)
            dist[i, j] = float(np.abs(emp - ref[j]).mean())
    mean = dist.mean(axis=0)
    stderr = (dist.std(axis=0, ddof=1) / math.sqrt(len(records))
              if len(records) > 1 else np.zeros_like(mean))
    return HydroComparison(times=times.copy(), distances=dist,
                           mean=mean, stderr=stderr)
