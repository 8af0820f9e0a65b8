"""Parameter-independent open-loop inputs from polynomial approximation.

For a discrete ensemble the final state under inputs u_0 .. u_{T-1} from
x_0 = 0 is sum_j p_j(A(theta)) b_j(theta), where the coefficient of z^k in
p_j is channel j of u_{T-1-k}. Synthesis therefore fits polynomial
coefficients so that these vectors match the target over the grid.

The fit is a least-squares problem in a basis orthogonalized over the grid
(pivoted QR of the stacked Krylov columns), followed by Lawson
reweighting, which drives the weighted least-squares solution toward the
discrete sup-norm optimum. The reported error is always recomputed by
rolling out the monomial coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from .model import ModelError, SampledEnsemble, TargetProfile
from .simulation import rollout
from .zoh import AliasingError, discretize_zoh

__all__ = [
    "SynthesisConfig",
    "PolynomialControl",
    "CascadeControl",
    "synthesize",
    "fit_polynomials",
    "control_to_inputs",
    "inputs_to_coeffs",
    "cascade_synthesize",
    "discretize_zoh",
    "AliasingError",
    "krylov_stack",
]


@dataclass(frozen=True)
class SynthesisConfig:
    eps: float = 1e-3
    max_degree: int = 60
    start_degree: int = 0
    degree_step: int = 1
    ridge: float = 0.0
    lawson_iters: int = 300
    lawson_patience: int = 100
    qr_tol: float = 1e-16
    revalidation_factor: int = 4

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_degree < 0 or self.start_degree < 0 or self.degree_step < 1:
            raise ValueError("degree schedule must have start >= 0, step >= 1, max_degree >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    def degrees(self) -> range:
        return range(self.start_degree, self.max_degree + 1, self.degree_step)

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "max_degree": self.max_degree,
            "start_degree": self.start_degree,
            "degree_step": self.degree_step,
            "ridge": self.ridge,
            "lawson_iters": self.lawson_iters,
            "lawson_patience": self.lawson_patience,
            "qr_tol": self.qr_tol,
            "revalidation_factor": self.revalidation_factor,
        }


@dataclass
class PolynomialControl:
    """One polynomial per input channel; ``coeffs`` has shape (m, D+1), ascending powers."""

    coeffs: np.ndarray
    achieved_error: float
    zoh_step: float | None = None
    converged: bool = True
    orth_error: float | None = None
    history: list = field(default_factory=list)
    basis_used: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def horizon(self) -> int:
        return self.coeffs.shape[1]

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    def to_json(self, grid_descriptor: dict | None = None, tolerances: dict | None = None) -> dict:
        return {
            "mode": "continuous-zoh" if self.zoh_step is not None else "discrete",
            "h": self.zoh_step,
            "T": self.horizon,
            "coeffs": self.coeffs.tolist(),
            "achieved_error": self.achieved_error,
            "converged": self.converged,
            "orth_error": self.orth_error,
            "history": [[int(D), float(e)] for D, e in self.history],
            "basis_used": self.basis_used,
            "grid_descriptor": grid_descriptor or {},
            "tolerances": tolerances or {},
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolynomialControl":
        coeffs = np.asarray(doc["coeffs"], dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[1] != int(doc.get("T", coeffs.shape[1])):
            raise ValueError("control file: coeffs must be m x T")
        return cls(
            coeffs=coeffs,
            achieved_error=float(doc.get("achieved_error", math.nan)),
            zoh_step=doc.get("h"),
            converged=bool(doc.get("converged", True)),
            orth_error=doc.get("orth_error"),
            history=[tuple(h) for h in doc.get("history", [])],
            basis_used=doc.get("basis_used", {}),
            notes=list(doc.get("notes", [])),
        )


def control_to_inputs(ctrl: PolynomialControl | np.ndarray) -> np.ndarray:
    """Input sequence u_0 .. u_{T-1} (shape (T, m)); u_{T-1-k} holds the z^k coefficients."""
    coeffs = ctrl.coeffs if isinstance(ctrl, PolynomialControl) else np.asarray(ctrl, dtype=float)
    return coeffs[:, ::-1].T.copy()


def inputs_to_coeffs(inputs: np.ndarray) -> np.ndarray:
    """Inverse of ``control_to_inputs``."""
    return np.asarray(inputs, dtype=float)[::-1].T.copy()


def krylov_stack(ens: SampledEnsemble, degree: int) -> np.ndarray:
    """A(theta)^k b_j(theta) for k <= degree; shape (N, n, m, degree+1)."""
    N, n, m = len(ens), ens.n, ens.m
    cols = np.empty((N, n, m, degree + 1), dtype=np.result_type(ens.A, float))
    v = np.array(ens.B, dtype=cols.dtype)
    for k in range(degree + 1):
        cols[..., k] = v
        if k < degree:
            v = np.einsum("pij,pjm->pim", ens.A, v)
    return cols


def _weighted_ls(M, y, sw, ridge, qr_tol):
    """min ||diag(sw) (M c - y)|| via column-equilibrated pivoted QR; returns (c, rank)."""
    cols = M.shape[1]
    Mw = sw[:, None] * M
    yw = sw * y
    scale = np.linalg.norm(Mw, axis=0)
    scale[scale == 0] = 1.0
    Mw = Mw / scale
    if ridge > 0:
        Mw = np.vstack([Mw, math.sqrt(ridge) * np.eye(cols)])
        yw = np.concatenate([yw, np.zeros(cols)])
    Q, R, piv = qr(Mw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    c = np.zeros(cols, dtype=np.result_type(M, y, float))
    if diag.size == 0 or diag[0] == 0.0:
        return c, 0
    r = int(np.count_nonzero(diag > qr_tol * diag[0]))
    c[piv[:r]] = solve_triangular(R[:r, :r], Q[:, :r].T @ yw)
    return c / scale, r


def _final_states(ens, coeffs, x0):
    return rollout(ens, control_to_inputs(coeffs), x0).final


def fit_polynomials(
    ens: SampledEnsemble,
    target_values: np.ndarray,
    degree: int,
    cfg: SynthesisConfig | None = None,
    x0=None,
    stop_below: float | None = None,
) -> tuple[np.ndarray, float, dict]:
    """Best sup-norm fit of degree ``degree`` found by Lawson-weighted least squares.

    Each iteration solves a weighted least-squares correction for the
    residual of the actual rollout, so rounding in the input recursion is
    fitted along with the approximation error. Weights are multiplied by
    the pointwise error and renormalized. The best iterate is kept; the
    loop stops after ``cfg.lawson_patience`` iterations without a new best.

    Returns ``(coeffs, sup_error, info)``: ``coeffs`` has shape
    (m, degree+1) and ``sup_error`` is the rollout sup error on the grid.
    ``info["orth_error"]`` is the same residual evaluated from the stacked
    Krylov columns.
    """
    cfg = cfg or SynthesisConfig()
    N, n, m = len(ens), ens.n, ens.m
    y = np.asarray(target_values).reshape(N, n)
    M = krylov_stack(ens, degree).reshape(N * n, m * (degree + 1))
    w = np.full(N, 1.0 / N)
    c = np.zeros(m * (degree + 1))
    best_c, best_err, best_it, rank = c, math.inf, 0, 0
    for it in range(cfg.lawson_iters + 1):
        res = y - _final_states(ens, c.reshape(m, degree + 1), x0)
        e = np.linalg.norm(res, axis=1)
        err = float(e.max())
        if err < best_err:
            best_c, best_err, best_it = c, err, it
        if err == 0.0 or (stop_below is not None and err < stop_below):
            break
        if not np.isfinite(err) or it - best_it > cfg.lawson_patience:
            break
        if it > 0:
            w = w * e
            w = np.maximum(w, 1e-14 * w.max())
            w = w / w.sum()
        dc, rank = _weighted_ls(M, res.reshape(N * n), np.repeat(np.sqrt(w), n), cfg.ridge, cfg.qr_tol)
        c = np.real(c + dc)
    coeffs = best_c.reshape(m, degree + 1).astype(float)
    free = y if x0 is None else y - _final_states(ens, np.zeros((m, degree + 1)), x0)
    orth = np.linalg.norm((M @ best_c).reshape(N, n) - free, axis=1).max() if N else 0.0
    info = {"rank": rank, "columns": m * (degree + 1), "orth_error": float(orth)}
    return coeffs, best_err, info


def _rollout_error(ens: SampledEnsemble, coeffs: np.ndarray, y: np.ndarray, x0=None) -> float:
    final = _final_states(ens, coeffs, x0)
    return float(np.max(np.linalg.norm(final - y, axis=1)))


def synthesize(
    ens: SampledEnsemble,
    target: TargetProfile,
    cfg: SynthesisConfig | None = None,
    x0=None,
) -> PolynomialControl:
    """Polynomials p_1..p_m with sup_theta ||sum_j p_j(A) b_j - x*|| < eps, if found.

    Degrees follow ``cfg.degrees()``; the first degree that beats ``eps``
    wins. Otherwise the best control found is returned with
    ``converged=False``. ``history`` records the best error reached at each
    degree, so it never increases.
    """
    cfg = cfg or SynthesisConfig()
    if ens.time_mode != "discrete":
        raise ValueError("synthesize needs a discrete ensemble; apply discretize_zoh to continuous models")
    y = target.values(ens.grid)
    if y.shape != (len(ens), ens.n):
        raise ModelError(f"target has shape {y.shape}, expected {(len(ens), ens.n)}")
    best = None  # (coeffs, err, orth_err)
    history = []
    notes = []
    for D in cfg.degrees():
        coeffs, _, info = fit_polynomials(ens, y, D, cfg, x0=x0, stop_below=cfg.eps)
        if info["rank"] < info["columns"]:
            notes.append(f"degree {D}: basis rank {info['rank']} < {info['columns']} columns")
        err = _rollout_error(ens, coeffs, y, x0)
        if best is None or err <= best[1]:
            best = (coeffs, err, info["orth_error"])
        history.append((D, best[1]))
        if best[1] < cfg.eps:
            break
    if best is None:
        raise ValueError("empty degree schedule")
    coeffs, err, orth_err = best
    return PolynomialControl(
        coeffs=coeffs,
        achieved_error=err,
        zoh_step=ens.zoh_step,
        converged=err < cfg.eps,
        orth_error=orth_err,
        history=history,
        basis_used={
            "basis": "Krylov columns A^k b_j orthogonalized over the grid (pivoted QR)",
            "weighting": f"Lawson on rollout residuals, up to {cfg.lawson_iters} iterations",
            "output": "monomial coefficients",
        },
        notes=notes,
    )


# --------------------------------------------------------------------------
# Block upper-triangular cascade


@dataclass
class CascadeControl:
    """Per-block controls on a common horizon plus the composite input sequence."""

    blocks: list[PolynomialControl]
    inputs: np.ndarray  # (T, m)
    achieved_error: float
    block_errors: list[float]
    converged: bool
    unconverged_blocks: list[int] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def block_coeffs(self, partition: Sequence[tuple[int, int]]) -> list[np.ndarray]:
        """Coefficients of each block's channels on the unified horizon."""
        coeffs = inputs_to_coeffs(self.inputs)
        out = []
        start = 0
        for _, mi in partition:
            out.append(coeffs[start:start + mi])
            start += mi
        return out


def _offsets(sizes):
    out = [0]
    for s in sizes:
        out.append(out[-1] + s)
    return out


def _prepend_zeros(u: np.ndarray, T: int) -> np.ndarray:
    if u.shape[0] >= T:
        return u
    return np.vstack([np.zeros((T - u.shape[0], u.shape[1])), u])


def cascade_synthesize(
    ens: SampledEnsemble,
    partition: Sequence[tuple[int, int]],
    target: TargetProfile,
    cfg: SynthesisConfig | None = None,
    atol: float = 0.0,
) -> CascadeControl:
    """Synthesize a block upper-triangular ensemble from the last block upward.

    ``partition`` lists (n_i, m_i) per diagonal block. Each block is fitted
    against its target minus the drift that the already-chosen inputs of
    the blocks below push into it. Shorter input sequences are padded with
    leading zeros, which leaves final states unchanged from a zero start.
    Each block is asked for ``eps / sqrt(#blocks)`` so the composite error
    stays below ``eps``.
    """
    cfg = cfg or SynthesisConfig()
    ns = [p[0] for p in partition]
    ms = [p[1] for p in partition]
    if sum(ns) != ens.n or sum(ms) != ens.m:
        raise ValueError(f"partition {list(partition)} inconsistent with n={ens.n}, m={ens.m}")
    no, mo = _offsets(ns), _offsets(ms)
    nb = len(partition)
    for i in range(nb):
        for j in range(i):
            blkA = ens.A[:, no[i]:no[i + 1], no[j]:no[j + 1]]
            blkB = ens.B[:, no[i]:no[i + 1], mo[j]:mo[j + 1]]
            if np.any(np.abs(blkA) > atol) or np.any(np.abs(blkB) > atol):
                raise ValueError(f"ensemble is not block upper-triangular: block ({i + 1},{j + 1}) is nonzero")
    y = target.values(ens.grid)
    block_cfg = SynthesisConfig(**{**cfg.as_dict(), "eps": cfg.eps / math.sqrt(nb)})

    inputs = np.zeros((0, ens.m))
    controls: list[PolynomialControl] = [None] * nb  # type: ignore[list-item]
    unconverged = []
    for i in reversed(range(nb)):
        rows = slice(no[i], no[i + 1])
        if inputs.shape[0] > 0:
            drift = rollout(ens, inputs).final[:, rows]
        else:
            drift = np.zeros((len(ens), ns[i]))
        sub = SampledEnsemble(
            ens.grid,
            ens.A[:, rows, rows],
            ens.B[:, rows, mo[i]:mo[i + 1]],
            ens.time_mode,
            ens.zoh_step,
        )
        tgt = TargetProfile(table=y[:, rows] - drift, table_grid=ens.grid)
        ctrl = synthesize(sub, tgt, block_cfg)
        controls[i] = ctrl
        if not ctrl.converged:
            unconverged.append(i)
        ui = control_to_inputs(ctrl)
        T = max(inputs.shape[0], ui.shape[0])
        inputs = _prepend_zeros(inputs, T)
        inputs[:, mo[i]:mo[i + 1]] = _prepend_zeros(ui, T)

    final = rollout(ens, inputs).final
    per_block = [
        float(np.max(np.linalg.norm(final[:, no[i]:no[i + 1]] - y[:, no[i]:no[i + 1]], axis=1)))
        for i in range(nb)
    ]
    err = float(np.max(np.linalg.norm(final - y, axis=1)))
    return CascadeControl(
        blocks=controls,
        inputs=inputs,
        achieved_error=err,
        block_errors=per_block,
        converged=not unconverged and err < cfg.eps,
        unconverged_blocks=sorted(unconverged),
    )
