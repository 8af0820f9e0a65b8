"""Parameter domains, parametric systems, grids and sampled ensembles.

A model file is a JSON document::

    {
      "system": {"n": 2, "m": 2, "mode": "discrete"},
      "domain": {"intervals": [[1, 2]]},          # or {"boxes": [[[0,1],[0,1]]]}
      "A": [["0", "-theta"], ["theta", "0"]],
      "B": [["1", "0"], ["0", "1"]],
      "target": ["1", "0"],                         # optional
      "network": {...}                              # optional, see ensctl.network
    }

Matrix entries are expression strings (numbers are accepted too).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .expr import Expr, ExprEvalError, ExprSyntaxError, eval_expr, max_param_index, parse_expr

__all__ = [
    "ModelError",
    "ParameterDomain",
    "ParametricSystem",
    "ParamGrid",
    "SampledEnsemble",
    "TargetProfile",
    "load_model",
    "load_model_file",
    "parse_matrix",
    "make_grid",
    "refine_count",
    "refine_grid",
    "sample_ensemble",
    "DEFAULT_COUNT_1D",
    "DEFAULT_COUNT_2D",
    "MAX_GRID_POINTS",
]

DEFAULT_COUNT_1D = 101
DEFAULT_COUNT_2D = 33
MAX_GRID_POINTS = 200_000

TIME_MODES = ("continuous", "discrete")


class ModelError(ValueError):
    """Invalid model document or inconsistent model data."""


@dataclass(frozen=True)
class ParameterDomain:
    """Finite union of compact axis-aligned boxes in R^d.

    For ``d == 1`` the boxes are intervals, kept sorted and pairwise disjoint.
    """

    boxes: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self):
        if not self.boxes:
            raise ModelError("empty domain")
        d = len(self.boxes[0])
        if d < 1:
            raise ModelError("domain dimension must be >= 1")
        for box in self.boxes:
            if len(box) != d:
                raise ModelError("all boxes must have the same dimension")
            for lo, hi in box:
                if not (math.isfinite(lo) and math.isfinite(hi)):
                    raise ModelError(f"non-finite bound in box {box}")
                if lo > hi:
                    raise ModelError(f"invalid interval [{lo}, {hi}]: lower bound exceeds upper")
        if d == 1:
            ordered = sorted(self.boxes)
            for (a,), (b,) in zip(ordered, ordered[1:]):
                if b[0] <= a[1]:
                    raise ModelError(f"intervals {list(a)} and {list(b)} are not disjoint")
            object.__setattr__(self, "boxes", tuple(ordered))

    @classmethod
    def intervals(cls, *intervals: Sequence[float]) -> "ParameterDomain":
        return cls(tuple(((float(lo), float(hi)),) for lo, hi in intervals))

    @classmethod
    def box(cls, *axes: Sequence[float]) -> "ParameterDomain":
        return cls((tuple((float(lo), float(hi)) for lo, hi in axes),))

    @property
    def d(self) -> int:
        return len(self.boxes[0])

    def contains(self, theta: Sequence[float], atol: float = 0.0) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return any(
            all(lo - atol <= t <= hi + atol for t, (lo, hi) in zip(theta, box)) for box in self.boxes
        )

    def contains_zero(self) -> bool:
        return self.contains(np.zeros(self.d))

    def to_json(self) -> dict:
        if self.d == 1:
            return {"intervals": [list(b[0]) for b in self.boxes]}
        return {"boxes": [[list(ax) for ax in b] for b in self.boxes]}


@dataclass(frozen=True)
class ParametricSystem:
    """x' = A(theta) x + B(theta) u (or the discrete-time update) over a domain."""

    A: tuple[tuple[Expr, ...], ...]
    B: tuple[tuple[Expr, ...], ...]
    domain: ParameterDomain
    time_mode: str = "discrete"
    target: tuple[Expr, ...] | None = None
    network: dict | None = None

    def __post_init__(self):
        n = len(self.A)
        if n < 1 or any(len(row) != n for row in self.A):
            raise ModelError(f"A must be square with n >= 1, got {n} rows")
        if len(self.B) != n:
            raise ModelError(f"dimension mismatch: A is {n}x{n} but B has {len(self.B)} rows")
        m = len(self.B[0])
        if m < 1 or any(len(row) != m for row in self.B):
            raise ModelError("B rows must all have the same length m >= 1")
        if self.time_mode not in TIME_MODES:
            raise ModelError(f"time mode must be one of {TIME_MODES}, got {self.time_mode!r}")
        d = self.domain.d
        entries = [e for row in self.A + self.B for e in row]
        if self.target is not None:
            if len(self.target) != n:
                raise ModelError(f"target has {len(self.target)} components, expected {n}")
            entries += list(self.target)
        for e in entries:
            if max_param_index(e) > d:
                raise ModelError(f"entry references theta{max_param_index(e)} but d={d}")

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def m(self) -> int:
        return len(self.B[0])

    @property
    def d(self) -> int:
        return self.domain.d


@dataclass(frozen=True)
class ParamGrid:
    """Ordered finite set of parameter points; ``points`` has shape (N, d)."""

    points: np.ndarray
    counts: tuple[int, ...] = ()

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, idx: Sequence[int]) -> "ParamGrid":
        return ParamGrid(self.points[np.asarray(idx)])

    def descriptor(self) -> dict:
        return {"size": len(self), "counts": list(self.counts)}


@dataclass(frozen=True)
class SampledEnsemble:
    """Numeric matrices on a grid: A has shape (N, n, n), B has shape (N, n, m).

    ``zoh_step`` is set when the ensemble is the zero-order-hold image of a
    continuous-time ensemble.
    """

    grid: ParamGrid
    A: np.ndarray
    B: np.ndarray
    time_mode: str = "discrete"
    zoh_step: float | None = None

    def __post_init__(self):
        A = np.array(self.A, copy=True)
        B = np.array(self.B, copy=True)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ModelError(f"A samples must have shape (N, n, n), got {A.shape}")
        if B.ndim != 3 or B.shape[:2] != A.shape[:2]:
            raise ModelError(f"B samples must have shape (N, n, m) matching A, got {B.shape}")
        if len(A) != len(self.grid):
            raise ModelError("sample count does not match grid size")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ModelError("ensemble matrices must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    def __len__(self) -> int:
        return len(self.grid)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    def subset(self, idx: Sequence[int]) -> "SampledEnsemble":
        idx = np.asarray(idx)
        return SampledEnsemble(self.grid.subset(idx), self.A[idx], self.B[idx], self.time_mode, self.zoh_step)


@dataclass(frozen=True)
class TargetProfile:
    """Desired final states: expression vector, tabulated values, or a callable.

    ``table`` is an (N, n) array tied to ``table_grid``; ``func`` maps a
    parameter vector to an n-vector.
    """

    exprs: tuple[Expr, ...] | None = None
    table: np.ndarray | None = None
    table_grid: ParamGrid | None = None
    func: Any = field(default=None, compare=False)

    @classmethod
    def from_strings(cls, texts: Sequence[str], d: int = 1) -> "TargetProfile":
        return cls(exprs=tuple(parse_expr(str(t), d) for t in texts))

    @classmethod
    def constant(cls, values: Sequence[float]) -> "TargetProfile":
        return cls(func=lambda theta, v=np.asarray(values, dtype=float): v)

    @property
    def n(self) -> int | None:
        if self.exprs is not None:
            return len(self.exprs)
        if self.table is not None:
            return np.shape(self.table)[1]
        return None

    def can_evaluate(self, grid: ParamGrid) -> bool:
        if self.exprs is not None or self.func is not None:
            return True
        return self.table_grid is not None and np.array_equal(self.table_grid.points, grid.points)

    def values(self, grid: ParamGrid) -> np.ndarray:
        """Target vectors on ``grid`` as an (N, n) array."""
        if self.exprs is not None:
            out = np.empty((len(grid), len(self.exprs)))
            for i, theta in enumerate(grid.points):
                for k, e in enumerate(self.exprs):
                    try:
                        out[i, k] = eval_expr(e, theta)
                    except ExprEvalError as exc:
                        raise ModelError(f"target component {k + 1}: {exc}") from exc
            return out
        if self.func is not None:
            return np.array([np.asarray(self.func(theta), dtype=float) for theta in grid.points])
        if self.table is None:
            raise ModelError("empty target profile")
        if self.table_grid is None or not np.array_equal(self.table_grid.points, grid.points):
            raise ModelError("tabulated target is only defined on its own grid")
        return np.asarray(self.table, dtype=float)


# --------------------------------------------------------------------------
# Loading


def parse_matrix(rows: Any, d: int, name: str) -> tuple[tuple[Expr, ...], ...]:
    """Parse a nested list of expression strings, reporting entry coordinates."""
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ModelError(f"{name} must be a non-empty list of rows")
    out = []
    for i, row in enumerate(rows):
        parsed = []
        for j, entry in enumerate(row):
            try:
                parsed.append(parse_expr(_entry_text(entry), d))
            except ExprSyntaxError as exc:
                raise ModelError(f"{name}[{i + 1},{j + 1}]: {exc}") from exc
        out.append(tuple(parsed))
    return tuple(out)


def _entry_text(entry: Any) -> str:
    if isinstance(entry, bool) or not isinstance(entry, (str, int, float)):
        raise ExprSyntaxError(f"entry must be a string or number, got {entry!r}", 0)
    return entry if isinstance(entry, str) else repr(float(entry))


def _parse_domain(doc: Any) -> ParameterDomain:
    if not isinstance(doc, dict):
        raise ModelError("domain section must be an object")
    try:
        if "intervals" in doc:
            ivs = doc["intervals"]
            if not ivs:
                raise ModelError("empty domain")
            return ParameterDomain.intervals(*[(float(a), float(b)) for a, b in ivs])
        if "boxes" in doc:
            boxes = doc["boxes"]
            if not boxes:
                raise ModelError("empty domain")
            return ParameterDomain(tuple(tuple((float(a), float(b)) for a, b in box) for box in boxes))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed domain: {exc}") from exc
    raise ModelError("domain must have 'intervals' or 'boxes'")


def load_model(document: str | dict) -> ParametricSystem:
    """Build a ParametricSystem from a model document (JSON text or parsed dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    if "domain" not in doc:
        raise ModelError("missing 'domain' section")
    domain = _parse_domain(doc["domain"])
    d = domain.d
    sysdoc = doc.get("system", {})
    mode = sysdoc.get("mode", "discrete")

    if "A" not in doc and "network" in doc:
        from .network import spec_from_json, assemble

        spec = spec_from_json(doc["network"], domain)
        system = assemble(spec, time_mode=mode)
        A, B = system.A, system.B
    else:
        for key in ("A", "B"):
            if key not in doc:
                raise ModelError(f"missing '{key}' matrix")
        A = parse_matrix(doc["A"], d, "A")
        B = parse_matrix(doc["B"], d, "B")

    if "n" in sysdoc and sysdoc["n"] != len(A):
        raise ModelError(f"dimension mismatch: system.n={sysdoc['n']} but A has {len(A)} rows")
    if "m" in sysdoc and B and sysdoc["m"] != len(B[0]):
        raise ModelError(f"dimension mismatch: system.m={sysdoc['m']} but B has {len(B[0])} columns")

    target = None
    if "target" in doc:
        target = tuple(parse_matrix([doc["target"]], d, "target")[0])
    return ParametricSystem(A, B, domain, mode, target, doc.get("network"))


def load_model_file(path: str | Path) -> ParametricSystem:
    return load_model(Path(path).read_text())


# --------------------------------------------------------------------------
# Grids and sampling


def refine_count(count: int, factor: int) -> int:
    """Point count of a uniform grid whose spacing is ``factor`` times finer.

    The refined grid contains every point of the original one.
    """
    return factor * (count - 1) + 1


def make_grid(
    domain: ParameterDomain,
    count: int | None = None,
    density: float | None = None,
    max_points: int = MAX_GRID_POINTS,
) -> ParamGrid:
    """Uniform grid per box (endpoints included), tensor product for d >= 2.

    ``count`` is points per interval (per axis for d >= 2); ``density`` is
    segments per unit length. Default count is 101 for d=1 and 33 otherwise.
    """
    return _build_grid(domain, count, density, max_points, None)


def refine_grid(domain: ParameterDomain, grid: ParamGrid, factor: int, max_points: int = MAX_GRID_POINTS) -> ParamGrid:
    """Grid on ``domain`` with spacing ``factor`` times finer than ``grid`` (a superset)."""
    if not grid.counts:
        raise ModelError("grid has no recorded per-axis counts; cannot refine")
    fine = [c if c == 1 else refine_count(c, factor) for c in grid.counts]
    return _build_grid(domain, None, None, max_points, fine)


def _build_grid(domain, count, density, max_points, explicit) -> ParamGrid:
    d = domain.d
    per_box = []
    counts = []
    for box in domain.boxes:
        axes = []
        for lo, hi in box:
            if hi == lo:
                axes.append(np.array([lo]))
                counts.append(1)
                continue
            if explicit is not None:
                c = explicit[len(counts)]
            elif density is not None:
                c = int(math.ceil((hi - lo) * density - 1e-9)) + 1
            elif count is not None:
                c = int(count)
            else:
                c = DEFAULT_COUNT_1D if d == 1 else DEFAULT_COUNT_2D
            if c < 2:
                raise ModelError(f"grid density yields {c} point(s) on [{lo}, {hi}]; need >= 2")
            axes.append(np.linspace(lo, hi, c))
            counts.append(c)
        size = math.prod(len(a) for a in axes)
        if size > max_points:
            raise ModelError(f"grid would have {size} points, above the maximum {max_points}")
        per_box.append(np.array(list(itertools.product(*axes))).reshape(-1, d))
    pts = np.concatenate(per_box, axis=0)
    if len(pts) > max_points:
        raise ModelError(f"grid would have {len(pts)} points, above the maximum {max_points}")
    if len(domain.boxes) > 1 and d > 1:
        # overlapping boxes: keep first occurrence
        _, first = np.unique(pts, axis=0, return_index=True)
        pts = pts[np.sort(first)]
    return ParamGrid(pts, tuple(counts))


def sample_ensemble(system: ParametricSystem, grid: ParamGrid) -> SampledEnsemble:
    """Evaluate every entry of A and B at every grid point, in grid order."""
    N, n, m = len(grid), system.n, system.m
    A = np.empty((N, n, n))
    B = np.empty((N, n, m))
    for p, theta in enumerate(grid.points):
        try:
            for i in range(n):
                for j in range(n):
                    A[p, i, j] = eval_expr(system.A[i][j], theta)
                for j in range(m):
                    B[p, i, j] = eval_expr(system.B[i][j], theta)
        except ExprEvalError as exc:
            raise ModelError(f"cannot sample system: {exc}") from exc
    return SampledEnsemble(grid, A, B, system.time_mode)
