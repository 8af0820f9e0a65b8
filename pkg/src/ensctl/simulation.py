"""Ensemble rollouts and sup-norm error audits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    ModelError,
    ParametricSystem,
    ParamGrid,
    SampledEnsemble,
    TargetProfile,
    refine_grid,
    sample_ensemble,
)
from .zoh import discretize_zoh

__all__ = ["Trajectory", "ErrorReport", "rollout", "sup_error", "write_trajectory_csv"]


@dataclass(frozen=True)
class Trajectory:
    """States x_0 .. x_T at every grid point; ``states`` has shape (N, T+1, n)."""

    grid: ParamGrid
    states: np.ndarray
    inputs: np.ndarray  # (T, m)
    x0: np.ndarray  # (N, n)
    zoh_step: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1, :]

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def times(self) -> np.ndarray:
        k = np.arange(self.horizon + 1, dtype=float)
        return k * self.zoh_step if self.zoh_step is not None else k


def rollout(ens: SampledEnsemble, inputs, x0=None) -> Trajectory:
    """x_{t+1} = A x_t + B u_t at every grid point, from x0 (default 0).

    ``inputs`` has shape (T, m). ``x0`` is one n-vector shared by all grid
    points or an (N, n) array. Continuous ensembles must be discretized
    with ``discretize_zoh`` first.
    """
    if ens.time_mode != "discrete":
        raise ValueError("rollout needs a discrete ensemble; discretize continuous models with discretize_zoh")
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or (u.shape[0] > 0 and u.shape[1] != ens.m):
        raise ValueError(f"inputs must have shape (T, {ens.m}), got {np.shape(inputs)}")
    u = u.reshape(-1, ens.m)
    N, n = len(ens), ens.n
    if x0 is None:
        x = np.zeros((N, n), dtype=np.result_type(ens.A, float))
    else:
        x0 = np.asarray(x0)
        if x0.shape == (n,):
            x = np.tile(x0, (N, 1)).astype(np.result_type(ens.A, x0, float))
        elif x0.shape == (N, n):
            x = np.array(x0, dtype=np.result_type(ens.A, x0, float))
        else:
            raise ValueError(f"x0 must have shape ({n},) or ({N}, {n}), got {x0.shape}")
    states = np.empty((N, u.shape[0] + 1, n), dtype=x.dtype)
    states[:, 0] = x
    for t in range(u.shape[0]):
        x = np.einsum("pij,pj->pi", ens.A, x) + np.einsum("pij,j->pi", ens.B, u[t])
        states[:, t + 1] = x
    return Trajectory(ens.grid, states, u, states[:, 0].copy(), ens.zoh_step)


@dataclass
class ErrorReport:
    sup_error: float
    argmax_theta: list[float]
    per_point: np.ndarray
    revalidation_sup_error: float | None = None
    revalidation_grid_size: int | None = None
    revalidation_argmax_theta: list[float] | None = None
    notes: list[str] = field(default_factory=list)

    def to_json(self, include_table: bool = True) -> dict:
        out = {
            "sup_error": self.sup_error,
            "argmax_theta": self.argmax_theta,
            "revalidation_sup_error": self.revalidation_sup_error,
            "revalidation_grid_size": self.revalidation_grid_size,
            "revalidation_argmax_theta": self.revalidation_argmax_theta,
            "notes": self.notes,
        }
        if include_table:
            out["per_point"] = self.per_point.tolist()
        return out


def _errors(final: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.linalg.norm(final - target, axis=1)


def sup_error(
    traj: Trajectory,
    target: TargetProfile,
    system: ParametricSystem | None = None,
    revalidation_factor: int | None = 4,
) -> ErrorReport:
    """Largest Euclidean distance between final states and targets over the grid.

    With ``system`` and a factor > 1, the same inputs are replayed on a grid
    ``revalidation_factor`` times finer and that sup is reported too.
    """
    tgt = target.values(traj.grid)
    if tgt.shape != traj.final.shape:
        raise ValueError(f"target shape {tgt.shape} does not match final states {traj.final.shape}")
    per = _errors(traj.final, tgt)
    i = int(np.argmax(per))
    report = ErrorReport(float(per[i]), traj.grid.points[i].tolist(), per)
    if system is None or not revalidation_factor or revalidation_factor <= 1:
        return report
    x0 = traj.x0
    if not np.all(x0 == x0[0]):
        report.notes.append("revalidation skipped: per-grid-point initial states cannot be transferred")
        return report
    try:
        fine = refine_grid(system.domain, traj.grid, revalidation_factor)
    except ModelError as exc:
        report.notes.append(f"revalidation skipped: {exc}")
        return report
    if not target.can_evaluate(fine):
        report.notes.append("revalidation skipped: tabulated target is only known on the fitting grid")
        return report
    ens = sample_ensemble(system, fine)
    if system.time_mode == "continuous":
        if traj.zoh_step is None:
            raise ValueError("continuous system but trajectory carries no ZOH step")
        ens = discretize_zoh(ens, traj.zoh_step)
    fine_traj = rollout(ens, traj.inputs, x0[0])
    fper = _errors(fine_traj.final, target.values(fine))
    j = int(np.argmax(fper))
    report.revalidation_sup_error = float(fper[j])
    report.revalidation_grid_size = len(fine)
    report.revalidation_argmax_theta = fine.points[j].tolist()
    return report


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    """One row per (grid point, time): t, theta1..thetad, x_1..x_n."""
    d = traj.grid.d
    n = traj.states.shape[2]
    times = traj.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"theta{k + 1}" for k in range(d)] + [f"x_{k + 1}" for k in range(n)])
        for p, theta in enumerate(traj.grid.points):
            for t, x in zip(times, traj.states[p]):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in theta] + [repr(float(v)) for v in np.real(x)])
