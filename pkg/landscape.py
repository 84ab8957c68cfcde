"""
Residual Loss Valley
====================

One-dimensional Poisson problem u'' = -sin(x) on [0, π], sampled at 100
uniform points, used to expose the flat valley of the residual loss.

Function space: a candidate is its vector of grid values, u'' is a
second-order finite difference, and candidates come from the ansatz
A sin(ωx + φ) + B. Solutions differing only in B lie on a straight
zero-residual line.

Parameter space: small tanh networks are trained on L_res + L_data
towards each shifted solution; slices and Hessians are then taken in θ,
and the anchors' training paths can be projected onto the slice.

Benchmark runs: a residual-loss slice through the start, midpoint and
end of a recorded training trajectory, with the path drawn on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ad_core import DTYPE, NumericalBlowupError, grad_wrt_params
from caml_loss import standard_loss
from diagnostics import (
    HessianReport,
    SliceGrid,
    SlicePlane,
    TrajectoryPoint,
    build_slice_plane,
    evaluate_slice,
    fd_hessian,
    pairwise_similarity,
    project_trajectory,
)
from network import MlpSpec, ParamVector, forward, init_params
from problems import BenchmarkProblem, CollocationSet
from trainer import AdamState, adam_step, assemble_residuals


GRID_POINTS = 100
DOMAIN = (0.0, math.pi)

# (ω, φ, A, B): the same sine wave at three additive constants
VALLEY_ANCHORS = ((1.0, 0.0, 1.0, 0.0), (1.0, 0.0, 1.0, -1.0), (1.0, 0.0, 1.0, 1.0))
# Leaves the valley; spans the plane's second direction
OFF_VALLEY_ANCHOR = (1.0, 0.0, 2.0, 0.0)

LANDSCAPE_SPEC = MlpSpec(input_dim=1, output_dim=1, hidden_layers=3, hidden_width=20)
ANCHOR_STEPS = 3000
ANCHOR_ETA = 1e-3

FUNCTION_SPACE_K = 1
PARAMETER_SPACE_K = 100

# (step, flat parameters) in training order
Checkpoints = list[tuple[int, np.ndarray]]


def collocation_grid(n: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(DOMAIN[0], DOMAIN[1], n)


def ansatz(params: Sequence[float], x: np.ndarray) -> np.ndarray:
    omega, phi, a, b = params
    return a * np.sin(omega * x + phi) + b


def second_difference(u: np.ndarray, dx: float) -> np.ndarray:
    """u'' on a uniform grid: centered inside, one-sided second order at the ends."""
    d2 = np.empty_like(u)
    d2[1:-1] = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / dx ** 2
    d2[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / dx ** 2
    d2[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / dx ** 2
    return d2


def residual_loss(u: np.ndarray, x: Optional[np.ndarray] = None) -> float:
    """Mean of (u'' + sin x)² over the grid values u."""
    x = collocation_grid(u.shape[0]) if x is None else x
    r = second_difference(u, x[1] - x[0]) + np.sin(x)
    return float(np.mean(r * r))


def valley_flatness(shifts: Sequence[float] = tuple(np.linspace(-1.0, 1.0, 41))) -> float:
    """Spread (max - min) of the residual loss along constant shifts of the exact solution."""
    x = collocation_grid()
    base = ansatz(VALLEY_ANCHORS[0], x)
    losses = [residual_loss(base + s, x) for s in shifts]
    return max(losses) - min(losses)


def _padded_ranges(plane: SlicePlane, anchors: Sequence[np.ndarray], margin: float):
    coords = np.array([plane.coordinates(a) for a in anchors])
    ranges = []
    for axis in range(2):
        lo, hi = coords[:, axis].min(), coords[:, axis].max()
        pad = margin * max(hi - lo, 1e-12)
        ranges.append((float(lo - pad), float(hi + pad)))
    return ranges[0], ranges[1]


@dataclass(frozen=True)
class LandscapeResult:
    plane: SlicePlane
    grid: SliceGrid
    anchors: tuple[np.ndarray, ...]


def function_space_slice(n: int = 51, margin: float = 0.5) -> LandscapeResult:
    """
    Residual loss on the plane through two valley anchors and one off-valley anchor.

    The valley is the line β = 0 through the center.
    """
    x = collocation_grid()
    u1, u2 = ansatz(VALLEY_ANCHORS[0], x), ansatz(VALLEY_ANCHORS[1], x)
    u_off = ansatz(OFF_VALLEY_ANCHOR, x)
    plane = build_slice_plane(u1, u2, u_off)
    alpha_range, beta_range = _padded_ranges(plane, [u1, u2, u_off], margin)
    grid = evaluate_slice(plane, lambda u: residual_loss(u, x), n, alpha_range, beta_range)
    return LandscapeResult(plane, grid, (u1, u2, u_off))


def function_space_hessians(h: float = 1e-3, k: int = FUNCTION_SPACE_K) -> list[HessianReport]:
    """FD Hessians of the grid residual loss at the three valley anchors."""
    x = collocation_grid()
    return [
        fd_hessian(lambda u: residual_loss(u, x), ansatz(params, x), h=h, k=k)
        for params in VALLEY_ANCHORS
    ]


# Parameter space

def _grid_tensor(x: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)[:, None]


def network_residual_loss(theta: ParamVector, x: torch.Tensor) -> torch.Tensor:
    """Mean of (u_θ'' + sin x)² with u_θ'' from Taylor propagation."""
    out = forward(theta, x)
    r = out.hess[:, 0, 0] + torch.sin(x[:, 0])
    return (r * r).mean()


def network_data_loss(theta: ParamVector, x: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    out = forward(theta, x)
    diff = out.value[:, 0] - target
    return (diff * diff).mean()


def train_anchor_network(
    target_params: Sequence[float],
    seed: int = 0,
    steps: int = ANCHOR_STEPS,
    eta: float = ANCHOR_ETA,
    spec: MlpSpec = LANDSCAPE_SPEC,
    on_update: Optional[Callable[[int, ParamVector], None]] = None,
) -> ParamVector:
    """
    Fit a network to one ansatz solution with L_res + L_data under Adam.

    `on_update(k, θ_k)` sees the initialization (k = 0) and the
    parameters after every update.
    """
    x_np = collocation_grid()
    x = _grid_tensor(x_np)
    target = torch.as_tensor(ansatz(target_params, x_np), dtype=DTYPE)
    theta = init_params(spec, seed)
    state = AdamState.zeros(len(theta))
    if on_update is not None:
        on_update(0, theta)

    def loss_eval(leaf: torch.Tensor) -> torch.Tensor:
        point = theta.with_data(leaf)
        return network_residual_loss(point, x) + network_data_loss(point, x, target)

    for t in range(1, steps + 1):
        grad = grad_wrt_params(loss_eval, theta.data, step=t)
        theta = theta.with_data(adam_step(theta.data, grad, state, eta))
        if on_update is not None:
            on_update(t, theta)
    return theta


def parameter_space_anchors(seed: int = 0, steps: int = ANCHOR_STEPS) -> list[ParamVector]:
    """One trained network per valley anchor, all from the same initialization."""
    return [train_anchor_network(params, seed=seed, steps=steps) for params in VALLEY_ANCHORS]


def parameter_space_runs(
    seed: int = 0,
    steps: int = ANCHOR_STEPS,
    record_every: int = 100,
    spec: MlpSpec = LANDSCAPE_SPEC,
) -> tuple[list[ParamVector], list[Checkpoints]]:
    """
    Anchor networks plus their checkpoints every `record_every` updates.

    Each checkpoint list starts at the initialization and ends at the
    trained network.
    """
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    thetas, runs = [], []
    for params in VALLEY_ANCHORS:
        checkpoints: Checkpoints = []

        def record(k: int, theta: ParamVector) -> None:
            if k % record_every == 0 or k == steps:
                checkpoints.append((k, theta.data.detach().numpy().copy()))

        thetas.append(train_anchor_network(params, seed=seed, steps=steps, spec=spec, on_update=record))
        runs.append(checkpoints)
    return thetas, runs


def _residual_loss_of(spec: MlpSpec, x: torch.Tensor):
    def loss(theta_np: np.ndarray) -> float:
        with torch.no_grad():
            theta = ParamVector(torch.as_tensor(theta_np, dtype=DTYPE), spec)
            return float(network_residual_loss(theta, x))
    return loss


def _residual_grad_of(spec: MlpSpec, x: torch.Tensor):
    def grad(theta_np: np.ndarray) -> np.ndarray:
        data = torch.as_tensor(theta_np, dtype=DTYPE)
        g = grad_wrt_params(lambda leaf: network_residual_loss(ParamVector(leaf, spec), x), data)
        return g.numpy()
    return grad


def parameter_space_slice(
    thetas: Sequence[ParamVector],
    n: int = 41,
    margin: float = 0.5,
) -> LandscapeResult:
    """Residual loss on the plane through three trained parameter vectors."""
    spec = thetas[0].spec
    x = _grid_tensor(collocation_grid())
    anchors = tuple(t.data.detach().numpy().copy() for t in thetas)
    plane = build_slice_plane(*anchors)
    alpha_range, beta_range = _padded_ranges(plane, anchors, margin)
    grid = evaluate_slice(plane, _residual_loss_of(spec, x), n, alpha_range, beta_range)
    return LandscapeResult(plane, grid, anchors)


def parameter_space_trajectories(
    result: LandscapeResult,
    runs: Sequence[Checkpoints],
    spec: MlpSpec = LANDSCAPE_SPEC,
) -> list[TrajectoryPoint]:
    """Anchor training paths on the parameter-space slice, labelled by anchor index."""
    loss = _residual_loss_of(spec, _grid_tensor(collocation_grid()))
    points = []
    for i, checkpoints in enumerate(runs):
        points.extend(project_trajectory(result.plane, checkpoints, loss, run=i))
    return points


def parameter_space_hessians(
    thetas: Sequence[ParamVector],
    h: float = 1e-3,
    k: int = PARAMETER_SPACE_K,
) -> list[HessianReport]:
    """Hessians of L_res at trained parameters, from differences of exact gradients."""
    spec = thetas[0].spec
    if not 1 <= k <= spec.n_params:
        raise ValueError(f"k must be in [1, {spec.n_params}], got {k}")
    x = _grid_tensor(collocation_grid())
    loss, grad = _residual_loss_of(spec, x), _residual_grad_of(spec, x)
    return [
        fd_hessian(loss, t.data.detach().numpy(), h=h, k=k, grad_eval=grad)
        for t in thetas
    ]


@dataclass(frozen=True)
class HessianTable:
    """Condition numbers per anchor and pairwise low-curvature similarity."""

    condition_numbers: tuple[float, ...]
    similarities: tuple[tuple[int, int, float], ...]

    @property
    def mean_similarity(self) -> float:
        return float(np.mean([s for _, _, s in self.similarities]))


def hessian_table(reports: Sequence[HessianReport]) -> HessianTable:
    return HessianTable(
        condition_numbers=tuple(r.condition_number for r in reports),
        similarities=tuple(pairwise_similarity(reports)),
    )


# Benchmark training runs

def run_residual_loss(
    problem: BenchmarkProblem,
    colloc: CollocationSet,
    spec: MlpSpec,
) -> Callable[[np.ndarray], float]:
    """L_res of a benchmark network at flat parameters, without the offset; NaN on blow-up."""
    def loss(theta_np: np.ndarray) -> float:
        theta = ParamVector(torch.as_tensor(theta_np, dtype=DTYPE), spec)
        try:
            with torch.no_grad():
                l_res, _ = standard_loss(assemble_residuals(problem, theta, colloc))
        except NumericalBlowupError:
            return math.nan
        return float(l_res)
    return loss


def training_trajectory_slice(
    problem: BenchmarkProblem,
    colloc: CollocationSet,
    spec: MlpSpec,
    checkpoints: Checkpoints,
    n: int = 21,
    margin: float = 0.25,
) -> tuple[LandscapeResult, list[TrajectoryPoint]]:
    """
    Residual-loss slice through the end, start and midpoint of a run.

    The plane is centered at the final parameters and spans the path
    from the initialization; every checkpoint is projected onto it.

    Raises:
        ValueError: With fewer than three checkpoints
        DegeneratePlaneError: If the three anchors are collinear
    """
    if len(checkpoints) < 3:
        raise ValueError(f"A trajectory slice needs >= 3 checkpoints, got {len(checkpoints)}")
    final = np.asarray(checkpoints[-1][1], dtype=np.float64)
    start = np.asarray(checkpoints[0][1], dtype=np.float64)
    mid = np.asarray(checkpoints[len(checkpoints) // 2][1], dtype=np.float64)
    plane = build_slice_plane(final, start, mid)

    path = [np.asarray(theta, dtype=np.float64) for _, theta in checkpoints]
    alpha_range, beta_range = _padded_ranges(plane, path, margin)
    loss = run_residual_loss(problem, colloc, spec)
    grid = evaluate_slice(plane, loss, n, alpha_range, beta_range)
    points = project_trajectory(plane, checkpoints, loss)
    return LandscapeResult(plane, grid, (final, start, mid)), points
