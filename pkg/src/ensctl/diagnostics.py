"""Controllability tests for sampled ensembles.

Every verdict is computed on the parameter grid. Refutations (a rank defect,
an eigenvalue shared by too many grid points) are sound up to tolerance;
passes only certify what the grid can see.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.linalg import eig
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .model import ParameterDomain, SampledEnsemble

__all__ = [
    "Tolerances",
    "Check",
    "SpectrumCloud",
    "HermiteProfile",
    "EigenCluster",
    "DiagnosticsReport",
    "kalman_matrix",
    "kalman_rank",
    "hermite_indices",
    "hermite_profile",
    "spectrum_cloud",
    "eigen_clusters",
    "check_necessary",
    "check_main",
    "check_const_char_poly",
    "check_scaling_family",
    "detect_scaling_family",
    "dimension_gate",
    "classify",
    "diagnose",
    "PASS",
    "FAIL",
    "NOT_APPLICABLE",
    "INCONCLUSIVE",
    "UEC_CERTIFIED",
    "NOT_UEC",
    "CERTIFIED",
    "NECESSARY_VIOLATED",
]

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "not-applicable"
INCONCLUSIVE = "inconclusive"
UEC_CERTIFIED = "UEC-certified"
NOT_UEC = "not-UEC"

CERTIFIED = "certified-sufficient"
NECESSARY_VIOLATED = "necessary-violated"


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds; ``tol_spec=None`` means 1e-8 * (1 + max|eigenvalue|)."""

    rank_tol: float = 1e-10
    spec_rel: float = 1e-8
    tol_spec: float | None = None
    coeff_tol: float = 1e-8
    cond_max: float = 1e6
    line_tol: float = 1e-6

    def spec(self, cloud: "SpectrumCloud") -> float:
        if self.tol_spec is not None:
            return self.tol_spec
        return self.spec_rel * (1.0 + cloud.max_abs)

    def as_dict(self) -> dict:
        return {
            "rank_tol": self.rank_tol,
            "spec_rel": self.spec_rel,
            "tol_spec": self.tol_spec,
            "coeff_tol": self.coeff_tol,
            "cond_max": self.cond_max,
            "line_tol": self.line_tol,
        }


@dataclass
class Check:
    """One verdict with its evidence and the tolerances that produced it."""

    name: str
    verdict: str
    witnesses: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "witnesses": self.witnesses,
            "tolerances": self.tolerances,
            "info": self.info,
        }


# --------------------------------------------------------------------------
# Pointwise linear algebra


def kalman_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[B, AB, ..., A^(n-1) B]."""
    A = np.asarray(A)
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[:, None]
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.concatenate(blocks, axis=1)


def kalman_rank(A, B, rank_tol: float = 1e-10) -> tuple[int, np.ndarray]:
    """Numerical rank of the Kalman matrix and all its singular values.

    Counts singular values above ``rank_tol * sigma_max``; rank 0 when the
    matrix vanishes.
    """
    K = kalman_matrix(A, B)
    if not np.all(np.isfinite(K)):
        raise ValueError("non-finite entries in Kalman matrix")
    sv = np.linalg.svd(K, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, sv
    return int(np.count_nonzero(sv > rank_tol * sv[0])), sv


def hermite_indices(A, B, rank_tol: float = 1e-10) -> tuple[int, ...]:
    """Hermite indices (K_1, ..., K_m) of the pair (A, B).

    Columns b_1, A b_1, ..., b_2, A b_2, ... are scanned left to right; a
    block stops at its first power that is dependent on what has already
    been selected. Dependence uses the same threshold as ``kalman_rank``.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    if B.ndim == 1:
        B = B[:, None]
    n, m = B.shape
    K = kalman_matrix(A, B)
    if not np.all(np.isfinite(K)):
        raise ValueError("non-finite entries in Kalman matrix")
    s1 = np.linalg.norm(K, 2) if K.size else 0.0
    if s1 == 0.0:
        return (0,) * m
    thresh = rank_tol * s1
    basis = np.zeros((n, 0), dtype=np.result_type(A, B, float))
    indices = []
    for i in range(m):
        col = B[:, i]
        k = 0
        while k < n and basis.shape[1] < n:
            cand = np.column_stack([basis, col])
            sv = np.linalg.svd(cand, compute_uv=False)
            if np.count_nonzero(sv > thresh) <= basis.shape[1]:
                break
            basis = cand
            k += 1
            col = A @ col
        indices.append(k)
    return tuple(indices)


# --------------------------------------------------------------------------
# Grid-level profiles


@dataclass(frozen=True)
class HermiteProfile:
    indices: np.ndarray  # (N, m) ints
    constant: bool

    def to_json(self) -> dict:
        return {"constant_on_grid": self.constant, "distinct": sorted({tuple(map(int, r)) for r in self.indices})}


def hermite_profile(ens: SampledEnsemble, rank_tol: float = 1e-10) -> HermiteProfile:
    idx = np.array([hermite_indices(a, b, rank_tol) for a, b in zip(ens.A, ens.B)], dtype=int)
    constant = bool(np.all(idx == idx[0]))
    return HermiteProfile(idx, constant)


@dataclass(frozen=True)
class SpectrumCloud:
    """Eigenvalues per grid point; for d=1 column k follows one branch."""

    points: np.ndarray  # (N, d) grid points
    eigenvalues: np.ndarray  # (N, n) complex
    cond: np.ndarray  # (N,) eigenvector-matrix condition numbers (inf if defective)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.eigenvalues))) if self.eigenvalues.size else 0.0

    def branch(self, k: int) -> np.ndarray:
        return self.eigenvalues[:, k]


def spectrum_cloud(ens: SampledEnsemble, rank_tol: float = 1e-10) -> SpectrumCloud:
    """Eigenvalues and eigenvector conditioning at every grid point.

    Consecutive grid points are matched by a minimal-total-distance
    assignment so that each column traces a continuous branch.
    """
    if len(ens) == 0:
        raise ValueError("empty ensemble")
    N, n = len(ens), ens.n
    eigs = np.empty((N, n), dtype=complex)
    cond = np.empty(N)
    for i, A in enumerate(ens.A):
        try:
            w, V = np.linalg.eig(A)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"eigensolver failed at theta={tuple(ens.grid.points[i])}: {exc}"
            ) from exc
        sv = np.linalg.svd(V, compute_uv=False)
        cond[i] = math.inf if sv[-1] <= rank_tol * sv[0] else sv[0] / sv[-1]
        if i > 0:
            cost = np.abs(eigs[i - 1][:, None] - w[None, :])
            _, col = linear_sum_assignment(cost)
            w = w[col]
        eigs[i] = w
    return SpectrumCloud(ens.grid.points, eigs, cond)


@dataclass(frozen=True)
class EigenCluster:
    center: complex
    grid_indices: tuple[int, ...]  # distinct grid points touched, ascending
    size: int  # number of eigenvalues in the cluster (with multiplicity)


def eigen_clusters(cloud: SpectrumCloud, radius: float) -> list[EigenCluster]:
    """Union-find clustering of all eigenvalues at ``radius``.

    Clusters are ordered by the first grid point they touch.
    """
    z = cloud.eigenvalues.reshape(-1)
    n = cloud.eigenvalues.shape[1]
    owner = np.repeat(np.arange(cloud.eigenvalues.shape[0]), n)
    pts = np.column_stack([z.real, z.imag])
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else ([], ([], [])),
        shape=(len(z), len(z)),
    )
    _, labels = connected_components(graph, directed=False)
    clusters = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        clusters.append(
            EigenCluster(complex(np.mean(z[members])), tuple(np.unique(owner[members]).tolist()), len(members))
        )
    clusters.sort(key=lambda c: (c.grid_indices[0], -len(c.grid_indices)))
    return clusters


def _theta(points: np.ndarray, i: int) -> list[float]:
    return [float(t) for t in points[i]]


def _cplx(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


# --------------------------------------------------------------------------
# Necessary conditions


def check_necessary(
    ens: SampledEnsemble,
    cloud: SpectrumCloud,
    tol_spec: float | None = None,
    rank_tol: float = 1e-10,
    max_witnesses: int = 10,
) -> tuple[Check, Check]:
    """Pointwise reachability (E1) and no eigenvalue shared by m+1 grid points (E2)."""
    if tol_spec is None:
        tol_spec = 1e-8 * (1.0 + cloud.max_abs)
    tols = {"rank_tol": rank_tol, "tol_spec": tol_spec}

    ranks = []
    e1_wit = []
    for i, (A, B) in enumerate(zip(ens.A, ens.B)):
        r, sv = kalman_rank(A, B, rank_tol)
        ranks.append(r)
        if r < ens.n and not e1_wit:
            e1_wit.append(
                {"theta": _theta(ens.grid.points, i), "rank": r, "n": ens.n, "singular_values": sv.tolist()}
            )
    e1 = Check("E1", FAIL if e1_wit else PASS, e1_wit, tols, {"min_rank": int(min(ranks))})

    shared = [c for c in eigen_clusters(cloud, tol_spec) if len(c.grid_indices) >= ens.m + 1]
    e2_wit = [
        {
            "eigenvalue": _cplx(c.center),
            "grid_points": len(c.grid_indices),
            "thetas": [_theta(ens.grid.points, i) for i in c.grid_indices[:50]],
        }
        for c in shared[:max_witnesses]
    ]
    info = {"required_distinct_points": ens.m + 1}
    if not shared:
        info["label"] = "grid-certified"
    e2 = Check("E2", FAIL if shared else PASS, e2_wit, tols, info)
    return e1, e2


# --------------------------------------------------------------------------
# Sufficient conditions (single real parameter)


def check_main(
    ens: SampledEnsemble,
    cloud: SpectrumCloud,
    hermite: HermiteProfile,
    tol_spec: float | None = None,
    cond_max: float = 1e6,
    rank_tol: float = 1e-10,
    e1: Check | None = None,
) -> dict[str, Check]:
    """Conditions (i)-(iv) for d=1, plus the bounded-condition-number alternate.

    Returns checks keyed MAIN-i .. MAIN-iv, condition-number and
    MAIN (the conjunction of i-iv).
    """
    names = ["MAIN-i", "MAIN-ii", "MAIN-iii", "MAIN-iv", "condition-number", "MAIN"]
    if ens.grid.d != 1:
        return {k: Check(k, NOT_APPLICABLE, info={"reason": "requires a single real parameter"}) for k in names}
    if tol_spec is None:
        tol_spec = 1e-8 * (1.0 + cloud.max_abs)
    pts = ens.grid.points
    out: dict[str, Check] = {}

    if e1 is None:
        e1, _ = check_necessary(ens, cloud, tol_spec, rank_tol)
    out["MAIN-i"] = Check("MAIN-i", e1.verdict, e1.witnesses, e1.tolerances)

    wit = []
    if not hermite.constant:
        ref = hermite.indices[0]
        j = int(np.flatnonzero(np.any(hermite.indices != ref, axis=1))[0])
        wit.append(
            {
                "theta_a": _theta(pts, 0),
                "indices_a": ref.tolist(),
                "theta_b": _theta(pts, j),
                "indices_b": hermite.indices[j].tolist(),
            }
        )
    out["MAIN-ii"] = Check(
        "MAIN-ii",
        PASS if hermite.constant else FAIL,
        wit,
        {"rank_tol": rank_tol},
        {"label": "constant on grid" if hermite.constant else "varies on grid", **hermite.to_json()},
    )

    crossing = [c for c in eigen_clusters(cloud, tol_spec) if len(c.grid_indices) >= 2]
    wit = [
        {
            "eigenvalue": _cplx(c.center),
            "thetas": [_theta(pts, i) for i in c.grid_indices[:20]],
        }
        for c in crossing[:10]
    ]
    out["MAIN-iii"] = Check("MAIN-iii", FAIL if crossing else PASS, wit, {"tol_spec": tol_spec})

    wit = []
    min_gap = math.inf
    for i, A in enumerate(ens.A):
        if ens.n < 2:
            continue
        w, radius = _eigen_uncertainty(A, tol_spec)
        gaps = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(len(w), np.inf))
        min_gap = min(min_gap, float(gaps.min()))
        hit = gaps <= np.maximum(radius[:, None], radius[None, :])
        if hit.any() and len(wit) < 10:
            a, b = np.unravel_index(np.argmin(np.where(hit, gaps, np.inf)), gaps.shape)
            wit.append(
                {
                    "theta": _theta(pts, i),
                    "eigenvalues": [_cplx(w[a]), _cplx(w[b])],
                    "gap": float(gaps[a, b]),
                    "radius": float(max(radius[a], radius[b])),
                }
            )
    out["MAIN-iv"] = Check(
        "MAIN-iv", FAIL if wit else PASS, wit, {"tol_spec": tol_spec}, {"min_gap": min_gap}
    )

    max_cond = float(np.max(cloud.cond))
    out["condition-number"] = Check(
        "condition-number",
        PASS if max_cond <= cond_max else FAIL,
        [] if max_cond <= cond_max else [{"theta": _theta(pts, int(np.argmax(cloud.cond))), "cond": max_cond}],
        {"cond_max": cond_max},
        {
            "max_condition_number": max_cond,
            "complement_connected": "not checked; see spectrum_cloud in report info",
        },
    )

    all_pass = all(out[k].verdict == PASS for k in names[:4])
    out["MAIN"] = Check("MAIN", PASS if all_pass else FAIL, [k for k in names[:4] if out[k].verdict != PASS])
    return out


def _eigen_uncertainty(A: np.ndarray, tol_spec: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and how far each may sit from its exact value.

    The radius is the larger of ``tol_spec`` and a first-order backward
    error bound, 100 * eps * ||A||_2 * kappa, where kappa is the eigenvalue
    condition number from left and right eigenvectors. Split copies of a
    defective eigenvalue have huge kappa, so they stay within each other's
    radius even though their computed gap exceeds ``tol_spec``. The bound is
    capped at the splitting of a double eigenvalue, sqrt(100 * eps) * ||A||_2.
    """
    w, vl, vr = eig(A, left=True, right=True)
    denom = np.abs(np.sum(np.conj(vl) * vr, axis=0))
    norms = np.linalg.norm(vl, axis=0) * np.linalg.norm(vr, axis=0)
    with np.errstate(divide="ignore"):
        kappa = np.where(denom > 0, norms / np.where(denom > 0, denom, 1.0), np.inf)
    eps = 100 * np.finfo(float).eps
    scale = np.linalg.norm(A, 2)
    radius = np.maximum(tol_spec, np.minimum(eps * scale * kappa, math.sqrt(eps) * scale))
    return w, radius


def check_const_char_poly(
    ens: SampledEnsemble,
    coeff_tol: float = 1e-8,
    main: dict[str, Check] | None = None,
    domain: ParameterDomain | None = None,
) -> Check:
    """Are all characteristic-polynomial coefficients except the constant one fixed?

    ``verdict`` reports the coefficient test; ``info['theorem_applies']`` is
    true only when the full single-input theorem hypotheses hold on the grid
    (single interval, m=1, conditions (i) and (iii)).
    """
    if ens.grid.d != 1:
        return Check("const-char-poly", NOT_APPLICABLE, info={"reason": "requires a single real parameter"})
    n = ens.n
    # chi(z) = z^n - a_{n-1} z^{n-1} - ... - a_0
    coeffs = np.array([-np.real(np.poly(A))[1:][::-1] for A in ens.A]).reshape(len(ens), n)
    spread = coeffs.max(axis=0) - coeffs.min(axis=0)
    varying = [k for k in range(1, n) if spread[k] >= coeff_tol]
    passed = not varying
    wit = [{"coefficient": f"a_{k}", "spread": float(spread[k])} for k in varying]
    info: dict[str, Any] = {
        "a0_range": [float(coeffs[:, 0].min()), float(coeffs[:, 0].max())],
        "higher_coefficients": coeffs[0, 1:].tolist() if passed else None,
    }
    applies = passed and ens.m == 1
    if domain is not None:
        applies = applies and len(domain.boxes) == 1
    if main is not None:
        info["MAIN-i"] = main["MAIN-i"].verdict
        info["MAIN-iii"] = main["MAIN-iii"].verdict
        applies = applies and main["MAIN-i"].verdict == PASS and main["MAIN-iii"].verdict == PASS
    else:
        applies = False
    info["theorem_applies"] = bool(applies)
    return Check("const-char-poly", PASS if passed else FAIL, wit, {"coeff_tol": coeff_tol}, info)


# --------------------------------------------------------------------------
# Scaling families (theta * A, B)


def detect_scaling_family(ens: SampledEnsemble, rtol: float = 1e-12) -> tuple[np.ndarray, np.ndarray] | None:
    """Return constant (A, B) if the ensemble is (theta*A, B) on the grid, else None."""
    if ens.grid.d != 1 or np.iscomplexobj(ens.A):
        return None
    th = ens.grid.points[:, 0]
    denom = float(th @ th)
    if denom == 0.0:
        return None
    A = np.einsum("i,ijk->jk", th, ens.A) / denom
    scale = max(1.0, float(np.max(np.abs(ens.A))))
    if np.max(np.abs(ens.A - th[:, None, None] * A)) > rtol * scale * max(1.0, float(np.max(np.abs(th)))):
        return None
    B = ens.B[0]
    if np.max(np.abs(ens.B - B)) > rtol * max(1.0, float(np.max(np.abs(B)))):
        return None
    if not np.any(A):
        return None
    return A, B.copy()


def _interval_hull_images(r: float, domain: ParameterDomain) -> list[tuple[float, float]]:
    out = []
    for (lo, hi), in domain.boxes:
        a, b = r * lo, r * hi
        out.append((min(a, b), max(a, b)))
    return out


def _intervals_meet(xs, ys, tol: float) -> bool:
    return any(a <= d + tol and c <= b + tol for a, b in xs for c, d in ys)


def check_scaling_family(
    A,
    B,
    domain: ParameterDomain,
    rank_tol: float = 1e-10,
    tol_spec: float | None = None,
    cond_max: float = 1e6,
) -> Check:
    """Criteria for (theta*A, B) with constant A, B on a union of intervals.

    With 0 in the domain the test is exact: UEC iff rank A = rank B = n.
    Otherwise (A, B) controllable and A invertible is necessary, and A
    diagonalizable with pairwise disjoint scaled images lambda_k*P is
    sufficient. Disjointness is decided by interval arithmetic on the ratio
    lambda_k / lambda_l, which must be real for two images to meet.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    if domain.d != 1:
        return Check("scaling-family", NOT_APPLICABLE, info={"reason": "requires a single real parameter"})
    lam, V = np.linalg.eig(A)
    if tol_spec is None:
        tol_spec = 1e-8 * (1.0 + float(np.max(np.abs(lam))))
    tols = {"rank_tol": rank_tol, "tol_spec": tol_spec, "cond_max": cond_max}
    rank_A = _rank(A, rank_tol)
    rank_B = _rank(B, rank_tol)
    info: dict[str, Any] = {"rank_A": rank_A, "rank_B": rank_B, "n": n, "eigenvalues": [_cplx(z) for z in lam]}

    if domain.contains_zero():
        info["case"] = "0 in P"
        wit = []
        if rank_B < n:
            wit.append({"theta": [0.0], "reason": "Kalman rank at theta=0 equals rank B", "rank": rank_B})
        if rank_A < n:
            wit.append({"eigenvalue": [0.0, 0.0], "reason": "0 is an eigenvalue of theta*A for every theta"})
        return Check("scaling-family", NOT_UEC if wit else UEC_CERTIFIED, wit, tols, info)

    info["case"] = "0 not in P"
    wit = []
    rank_K, _ = kalman_rank(A, B, rank_tol)
    if rank_K < n:
        wit.append({"reason": "(A, B) not controllable", "kalman_rank": rank_K})
    if rank_A < n:
        wit.append({"eigenvalue": [0.0, 0.0], "reason": "A singular; 0 shared by every theta"})
    if wit:
        return Check("scaling-family", NOT_UEC, wit, tols, info)

    sv = np.linalg.svd(V, compute_uv=False)
    cond = math.inf if sv[-1] <= rank_tol * sv[0] else float(sv[0] / sv[-1])
    info["eigenvector_condition"] = cond
    # distinct eigenvalues up to tol_spec
    distinct: list[complex] = []
    for z in lam:
        if all(abs(z - w) > tol_spec for w in distinct):
            distinct.append(complex(z))
    meets = []
    for k in range(len(distinct)):
        for l in range(k + 1, len(distinct)):
            r = distinct[k] / distinct[l]
            if abs(r.imag) > tol_spec * max(1.0, abs(r)):
                continue
            pk = _interval_hull_images(r.real, domain)
            pl = [iv[0] for iv in domain.boxes]
            if _intervals_meet(pk, pl, tol_spec):
                meets.append({"lambda_k": _cplx(distinct[k]), "lambda_l": _cplx(distinct[l])})
    info["scaled_images_disjoint"] = not meets
    info["diagonalizable"] = cond <= cond_max
    if cond <= cond_max and not meets:
        return Check("scaling-family", UEC_CERTIFIED, [], tols, info)
    return Check("scaling-family", INCONCLUSIVE, meets, tols, info)


def _rank(M: np.ndarray, rank_tol: float) -> int:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rank_tol * sv[0]))


# --------------------------------------------------------------------------
# Parameter-dimension gate


def dimension_gate(domain: ParameterDomain, cloud: SpectrumCloud | None, line_tol: float = 1e-6) -> Check:
    """No real-analytic ensemble with d >= 3 is UEC; for d=2 no branch may be collinear.

    For d=2 a branch within ``line_tol * (1 + max|eigenvalue|)`` of the real
    axis or of a line through the origin refutes controllability.
    """
    d = domain.d
    tols = {"line_tol": line_tol}
    info = {"assumption": "real-analytic dependence on theta (not checked)", "d": d}
    if d >= 3:
        return Check("dimension-gate", NOT_UEC, [{"reason": "dim P >= 3", "d": d}], tols, info)
    if d == 1:
        return Check("dimension-gate", PASS, [], tols, info)
    if cloud is None:
        return Check("dimension-gate", INCONCLUSIVE, [], tols, info)
    scale = line_tol * (1.0 + cloud.max_abs)
    wit = []
    for k in range(cloud.eigenvalues.shape[1]):
        z = cloud.branch(k)
        if np.max(np.abs(z.imag)) <= scale:
            wit.append({"branch": k, "reason": "branch is real", "max_abs_imag": float(np.max(np.abs(z.imag)))})
            continue
        P = np.column_stack([z.real, z.imag])
        _, s, vt = np.linalg.svd(P, full_matrices=False)
        u = vt[0]
        dist = np.abs(P[:, 0] * u[1] - P[:, 1] * u[0])
        if float(dist.max()) <= scale:
            wit.append(
                {"branch": k, "reason": "branch lies on a real line through 0", "direction": u.tolist(),
                 "max_distance": float(dist.max())}
            )
    return Check("dimension-gate", NOT_UEC if wit else INCONCLUSIVE, wit, tols, info)


# --------------------------------------------------------------------------
# Aggregation


@dataclass
class DiagnosticsReport:
    checks: dict[str, Check]
    classification: str
    reasons: list[str]
    info: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Check:
        return self.checks[name]

    def to_json(self) -> dict:
        return {
            "classification": self.classification,
            "reasons": self.reasons,
            "checks": {k: c.to_json() for k, c in self.checks.items()},
            "info": self.info,
        }


def classify(checks: dict[str, Check]) -> tuple[str, list[str]]:
    """Overall verdict; refutations need a witness, certificates need a theorem."""

    def verdict(name):
        c = checks.get(name)
        return c.verdict if c is not None else None

    refuted = []
    for name, bad in (("E1", FAIL), ("E2", FAIL), ("dimension-gate", NOT_UEC), ("scaling-family", NOT_UEC)):
        c = checks.get(name)
        if c is not None and c.verdict == bad and c.witnesses:
            refuted.append(name)
    if refuted:
        return NECESSARY_VIOLATED, refuted

    certified = []
    if verdict("MAIN") == PASS:
        certified.append("MAIN")
    if verdict("scaling-family") == UEC_CERTIFIED:
        certified.append("scaling-family")
    cc = checks.get("const-char-poly")
    if cc is not None and cc.info.get("theorem_applies"):
        certified.append("const-char-poly")
    if certified:
        return CERTIFIED, certified
    return INCONCLUSIVE, []


def diagnose(
    ens: SampledEnsemble,
    domain: ParameterDomain,
    tol: Tolerances | None = None,
    include_cloud: bool = True,
) -> DiagnosticsReport:
    """Run every applicable test on a sampled ensemble."""
    tol = tol or Tolerances()
    cloud = spectrum_cloud(ens, tol.rank_tol)
    ts = tol.spec(cloud)
    checks: dict[str, Check] = {}
    e1, e2 = check_necessary(ens, cloud, ts, tol.rank_tol)
    checks["E1"] = e1
    checks["E2"] = e2
    if domain.d == 1:
        herm = hermite_profile(ens, tol.rank_tol)
        main = check_main(ens, cloud, herm, ts, tol.cond_max, tol.rank_tol, e1=e1)
        checks.update(main)
        checks["const-char-poly"] = check_const_char_poly(ens, tol.coeff_tol, main, domain)
        scaling = detect_scaling_family(ens)
        if scaling is not None:
            checks["scaling-family"] = check_scaling_family(
                scaling[0], scaling[1], domain, tol.rank_tol, None, tol.cond_max
            )
        else:
            checks["scaling-family"] = Check(
                "scaling-family", NOT_APPLICABLE, info={"reason": "ensemble is not of the form (theta*A, B)"}
            )
    else:
        for name in ("MAIN-i", "MAIN-ii", "MAIN-iii", "MAIN-iv", "condition-number", "MAIN",
                     "const-char-poly", "scaling-family"):
            checks[name] = Check(name, NOT_APPLICABLE, info={"reason": "requires a single real parameter"})
    checks["dimension-gate"] = dimension_gate(domain, cloud, tol.line_tol)
    classification, reasons = classify(checks)
    info: dict[str, Any] = {
        "grid_size": len(ens),
        "tol_spec_used": ts,
        "tolerances": tol.as_dict(),
        "notes": [
            "E2/MAIN-iii verdicts are evaluated on the grid only",
            "Hermite constancy is observed on the grid, not proven generically",
        ],
    }
    if include_cloud:
        info["spectrum_cloud"] = [[float(z.real), float(z.imag)] for z in cloud.eigenvalues.reshape(-1)]
    return DiagnosticsReport(checks, classification, reasons, info)
