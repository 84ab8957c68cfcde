"""
Optimization Diagnostics
========================

Geometry of training: cosine and norm ratio between the residual and
boundary gradients, finite-difference Hessian spectra with low-curvature
subspaces, and two-dimensional loss-landscape slices.

Dense linear algebra runs in numpy float64.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import torch


ArrayLike = Union[np.ndarray, torch.Tensor, Sequence[float]]

# Relative thresholds on |λ| / max|λ|
INFINITE_CONDITION_TOL = 1e-12
NULL_CLUSTER_TOL = 1e-8
ORTHONORMAL_TOL = 1e-8


class DegeneratePlaneError(ValueError):
    """Raised when slice anchors do not span a plane."""
    pass


class ContractViolationError(ValueError):
    """Raised when a basis handed to a diagnostic is not orthonormal."""
    pass


def _vec(x: ArrayLike) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64).reshape(-1)
    return np.asarray(x, dtype=np.float64).reshape(-1)


# Gradient geometry

def grad_cosine(g_res: ArrayLike, g_bc: ArrayLike) -> Optional[float]:
    """Cosine between the two loss gradients; None if either is zero."""
    a, b = _vec(g_res), _vec(g_bc)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None
    cos = float(np.dot(a / na, b / nb))
    return min(1.0, max(-1.0, cos))


def grad_norm_ratio(g_res: ArrayLike, g_bc: ArrayLike) -> float:
    """‖g_res‖ / ‖g_bc‖, +inf when the boundary gradient vanishes."""
    nb = float(np.linalg.norm(_vec(g_bc)))
    if nb == 0.0:
        return math.inf
    return float(np.linalg.norm(_vec(g_res))) / nb


def positive_cos_fraction(log, upto: Optional[int] = None) -> Optional[float]:
    """
    Fraction of valid cosines that are positive.

    Args:
        log: A RunLog, or any iterable of cosines with None for missing
        upto: Only consider steps 1..upto

    Returns:
        Fraction in [0, 1], or None when no cosine is valid
    """
    series: Iterable[Optional[float]] = log.cos_series() if hasattr(log, "cos_series") else log
    values = list(series)
    if upto is not None:
        values = values[:upto]
    valid = [v for v in values if v is not None and not math.isnan(v)]
    if not valid:
        return None
    return sum(1 for v in valid if v > 0) / len(valid)


# Hessian spectra

@dataclass(frozen=True)
class HessianReport:
    """Symmetrized Hessian with its spectrum and low-curvature basis."""

    matrix: np.ndarray
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns match eigenvalues
    condition_number: float
    low_curvature: np.ndarray  # (P, k) orthonormal columns

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.low_curvature.shape[1]


def condition_number(eigenvalues: np.ndarray) -> float:
    """
    max|λ| / min|λ|, +inf when the smallest is negligible.

    Uses eigenvalue magnitudes, so indefinite Hessians are measured too.
    """
    mags = np.abs(eigenvalues)
    top, bottom = float(mags.max()), float(mags.min())
    if top == 0.0 or bottom < INFINITE_CONDITION_TOL * top:
        return math.inf
    return top / bottom


def _fix_sign(v: np.ndarray) -> np.ndarray:
    idx = int(np.argmax(np.abs(v)))
    return -v if v[idx] < 0 else v


def _canonical_cluster_basis(cluster: np.ndarray) -> np.ndarray:
    """
    Deterministic orthonormal basis of span(cluster).

    Coordinate vectors are projected onto the span in index order and
    orthonormalized, so any rotation of the input basis gives the same
    output.
    """
    dim, m = cluster.shape
    projector = cluster @ cluster.T
    basis: list[np.ndarray] = []
    for j in range(dim):
        v = projector[:, j].copy()
        for q in basis:
            v -= np.dot(q, v) * q
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            basis.append(v / norm)
        if len(basis) == m:
            break
    return np.stack(basis, axis=1)


def low_curvature_basis(eigenvalues: np.ndarray, eigenvectors: np.ndarray, k: int) -> np.ndarray:
    """
    Eigenvectors of the k smallest |λ|.

    The near-null cluster (|λ| < 1e-8 max|λ|) has no unique eigenbasis
    and is replaced by its canonical basis.
    """
    dim = eigenvalues.shape[0]
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")
    mags = np.abs(eigenvalues)
    order = np.argsort(mags, kind="stable")
    top = float(mags.max())
    cluster_idx = [i for i in order if top > 0 and mags[i] < NULL_CLUSTER_TOL * top]
    in_cluster = set(cluster_idx)
    rest_idx = [i for i in order if i not in in_cluster]

    columns: list[np.ndarray] = []
    if len(cluster_idx) > 1:
        canon = _canonical_cluster_basis(eigenvectors[:, cluster_idx])
        columns.extend(canon[:, j] for j in range(canon.shape[1]))
    else:
        columns.extend(_fix_sign(eigenvectors[:, i]) for i in cluster_idx)
    columns.extend(_fix_sign(eigenvectors[:, i]) for i in rest_idx)
    return np.stack(columns[:k], axis=1)


def hessian_report(matrix: ArrayLike, k: int = 1) -> HessianReport:
    """Symmetrize, eigendecompose and summarize a Hessian matrix."""
    h = np.asarray(matrix, dtype=np.float64)
    h = 0.5 * (h + h.T)
    eigenvalues, eigenvectors = np.linalg.eigh(h)
    return HessianReport(
        matrix=h,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        condition_number=condition_number(eigenvalues),
        low_curvature=low_curvature_basis(eigenvalues, eigenvectors, k),
    )


def fd_hessian(
    loss_eval: Callable[[np.ndarray], float],
    theta: ArrayLike,
    h: float = 1e-3,
    k: int = 1,
    grad_eval: Optional[Callable[[np.ndarray], ArrayLike]] = None,
) -> HessianReport:
    """
    Central-difference Hessian of a scalar loss.

    Without grad_eval each entry uses the four-point formula

        H_ij = [L(θ+he_i+he_j) - L(θ+he_i-he_j) - L(θ-he_i+he_j) + L(θ-he_i-he_j)] / 4h²

    With grad_eval each column is (∇L(θ+he_i) - ∇L(θ-he_i)) / 2h.
    Non-finite entries propagate into the report.
    """
    if h <= 0:
        raise ValueError("FD step h must be positive")
    base = _vec(theta)
    dim = base.shape[0]
    hess = np.zeros((dim, dim))

    if grad_eval is not None:
        for i in range(dim):
            plus, minus = base.copy(), base.copy()
            plus[i] += h
            minus[i] -= h
            hess[:, i] = (_vec(grad_eval(plus)) - _vec(grad_eval(minus))) / (2.0 * h)
        return hessian_report(hess, k)

    def shifted(i: int, si: float, j: int, sj: float) -> float:
        point = base.copy()
        point[i] += si * h
        point[j] += sj * h
        return float(loss_eval(point))

    for i in range(dim):
        for j in range(i, dim):
            value = (
                shifted(i, 1, j, 1) - shifted(i, 1, j, -1) - shifted(i, -1, j, 1) + shifted(i, -1, j, -1)
            ) / (4.0 * h * h)
            hess[i, j] = hess[j, i] = value
    return hessian_report(hess, k)


def _check_orthonormal(v: np.ndarray, name: str) -> None:
    gram = v.T @ v
    if np.max(np.abs(gram - np.eye(v.shape[1]))) > ORTHONORMAL_TOL:
        raise ContractViolationError(f"{name} does not have orthonormal columns")


def subspace_similarity(v_i: ArrayLike, v_j: ArrayLike, k: Optional[int] = None) -> float:
    """‖V_iᵀ V_j‖_F / √k for two orthonormal k-column bases."""
    a = np.asarray(v_i, dtype=np.float64)
    b = np.asarray(v_j, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ContractViolationError(f"Basis shapes differ: {a.shape} vs {b.shape}")
    k = a.shape[1] if k is None else k
    if k != a.shape[1]:
        raise ContractViolationError(f"Bases have {a.shape[1]} columns, k={k}")
    _check_orthonormal(a, "V_i")
    _check_orthonormal(b, "V_j")
    return float(np.linalg.norm(a.T @ b, "fro") / math.sqrt(k))


def pairwise_similarity(reports: Sequence[HessianReport]) -> list[tuple[int, int, float]]:
    """Similarity of low-curvature subspaces for every report pair."""
    pairs = []
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            sim = subspace_similarity(reports[i].low_curvature, reports[j].low_curvature)
            pairs.append((i, j, sim))
    return pairs


def write_hessian_csv(report: HessianReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "eigenvalue"])
        for i, value in enumerate(report.eigenvalues):
            writer.writerow([i, format(float(value), ".17g")])


# Loss-landscape slices

@dataclass(frozen=True)
class SlicePlane:
    """Affine plane center + α d1 + β d2 with orthonormal directions."""

    center: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def point(self, alpha: float, beta: float) -> np.ndarray:
        return self.center + alpha * self.d1 + beta * self.d2

    def coordinates(self, x: ArrayLike) -> tuple[float, float]:
        """Plane coordinates of the projection of x."""
        offset = _vec(x) - self.center
        return float(np.dot(offset, self.d1)), float(np.dot(offset, self.d2))


def build_slice_plane(anchor0: ArrayLike, anchor1: ArrayLike, anchor2: ArrayLike) -> SlicePlane:
    """
    Gram–Schmidt plane through three anchors, centered at anchor0.

    Raises:
        DegeneratePlaneError: If the anchors are collinear
    """
    a0, a1, a2 = _vec(anchor0), _vec(anchor1), _vec(anchor2)
    u = a1 - a0
    w = a2 - a0
    scale = max(np.linalg.norm(u), np.linalg.norm(w))
    if np.linalg.norm(u) == 0.0:
        raise DegeneratePlaneError("anchor1 coincides with anchor0")
    d1 = u / np.linalg.norm(u)
    resid = w - np.dot(w, d1) * d1
    # Second pass keeps ⟨d1, d2⟩ at rounding level
    resid = resid - np.dot(resid, d1) * d1
    if np.linalg.norm(resid) <= 1e-10 * scale:
        raise DegeneratePlaneError("Anchors are collinear; no plane through them")
    d2 = resid / np.linalg.norm(resid)
    return SlicePlane(center=a0, d1=d1, d2=d2)


@dataclass(frozen=True)
class SliceGrid:
    alphas: np.ndarray  # (n,)
    betas: np.ndarray  # (n,)
    loss: np.ndarray  # (n, n), loss[i, j] at (alphas[i], betas[j]); NaN marks non-finite


def evaluate_slice(
    plane: SlicePlane,
    loss_eval: Callable[[np.ndarray], float],
    n: int = 51,
    alpha_range: tuple[float, float] = (-1.0, 1.0),
    beta_range: tuple[float, float] = (-1.0, 1.0),
) -> SliceGrid:
    """Loss over an n×n grid of the plane, row-major in α then β."""
    if n < 2:
        raise ValueError("Slice grid needs n >= 2")
    alphas = np.linspace(alpha_range[0], alpha_range[1], n)
    betas = np.linspace(beta_range[0], beta_range[1], n)
    loss = np.empty((n, n))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            value = float(loss_eval(plane.point(a, b)))
            loss[i, j] = value if math.isfinite(value) else math.nan
    return SliceGrid(alphas, betas, loss)


def write_slice_csv(grid: SliceGrid, path: Path) -> None:
    """CSV rows alpha, beta, loss, log10_loss; non-finite values written as nan."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "beta", "loss", "log10_loss"])
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                value = grid.loss[i, j]
                if math.isnan(value):
                    loss_str = log_str = "nan"
                else:
                    loss_str = format(value, ".17g")
                    log_str = format(math.log10(max(value, 1e-300)), ".17g")
                writer.writerow([format(a, ".17g"), format(b, ".17g"), loss_str, log_str])


# Optimization trajectories

@dataclass(frozen=True)
class TrajectoryPoint:
    """A parameter checkpoint placed on a slice plane."""

    run: int
    step: int
    alpha: float
    beta: float
    off_plane: float  # distance from the checkpoint to its projection
    loss: float  # loss at the checkpoint itself; NaN when not evaluated


def project_trajectory(
    plane: SlicePlane,
    checkpoints: Iterable[tuple[int, ArrayLike]],
    loss_eval: Optional[Callable[[np.ndarray], float]] = None,
    run: int = 0,
) -> list[TrajectoryPoint]:
    """
    Plane coordinates of (step, θ_step) checkpoints.

    Args:
        plane: Slice plane the trajectory is drawn on
        checkpoints: (step, parameters) pairs in training order
        loss_eval: Optional loss evaluated at each checkpoint
        run: Label stored with every point

    Returns:
        One TrajectoryPoint per checkpoint
    """
    points = []
    for step, theta in checkpoints:
        x = _vec(theta)
        alpha, beta = plane.coordinates(x)
        off_plane = float(np.linalg.norm(x - plane.point(alpha, beta)))
        loss = math.nan if loss_eval is None else float(loss_eval(x))
        points.append(TrajectoryPoint(
            run=run,
            step=int(step),
            alpha=alpha,
            beta=beta,
            off_plane=off_plane,
            loss=loss if math.isfinite(loss) else math.nan,
        ))
    return points


def write_trajectory_csv(points: Sequence[TrajectoryPoint], path: Path) -> None:
    """CSV rows run, step, alpha, beta, off_plane, loss."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "step", "alpha", "beta", "off_plane", "loss"])
        for p in points:
            writer.writerow([
                p.run,
                p.step,
                format(p.alpha, ".17g"),
                format(p.beta, ".17g"),
                format(p.off_plane, ".17g"),
                "nan" if math.isnan(p.loss) else format(p.loss, ".17g"),
            ])
