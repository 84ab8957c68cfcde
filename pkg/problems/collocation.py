"""
Collocation Sets
================

Fixed full-batch sample of interior and boundary points for one run,
with per-point boundary coefficients and outward normals, plus the
uniform evaluation grid used for relative L2 errors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from ad_core import DTYPE
from .base import BenchmarkProblem


@dataclass(frozen=True)
class CollocationSet:
    """Interior points and boundary records for one benchmark."""

    interior: torch.Tensor  # (N, d)
    gamma: Optional[torch.Tensor]  # (N, K) zeroth-order coefficients, None when state dependent
    boundary: torch.Tensor  # (M, d)
    normals: torch.Tensor  # (M, d)
    alpha: torch.Tensor  # (M,)
    beta: torch.Tensor  # (M,)
    g: torch.Tensor  # (M, K_bc)
    kind: tuple[str, ...]  # per boundary point: dirichlet / neumann / robin
    segment: tuple[str, ...]  # per boundary point segment name

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary.shape[0]


def sample_collocation(
    problem: BenchmarkProblem,
    n_interior: int,
    n_per_edge: int,
    seed: int,
) -> CollocationSet:
    """
    Sample a collocation set, deterministic per seed.

    Interior points are uniform in Ω. Every boundary segment receives
    n_per_edge points uniform in its curve parameter.
    """
    if n_interior < 1 or n_per_edge < 1:
        raise ValueError("Collocation counts must be >= 1")

    gen = torch.Generator().manual_seed(int(seed))
    interior = problem.sample_interior(n_interior, gen)

    points, normals, alpha, beta, g = [], [], [], [], []
    kind, segment = [], []
    for seg in problem.segments:
        t = torch.rand(n_per_edge, generator=gen, dtype=DTYPE)
        pts = seg.sampler(t)
        points.append(pts)
        normals.append(seg.normal(pts))
        alpha.append(torch.full((n_per_edge,), seg.alpha, dtype=DTYPE))
        beta.append(torch.full((n_per_edge,), seg.beta, dtype=DTYPE))
        g.append(seg.g(pts))
        kind.extend([seg.kind] * n_per_edge)
        segment.extend([seg.name] * n_per_edge)

    gamma = problem.zeroth_coeff(interior) if problem.linear_offset else None
    return CollocationSet(
        interior=interior,
        gamma=gamma,
        boundary=torch.cat(points),
        normals=torch.cat(normals),
        alpha=torch.cat(alpha),
        beta=torch.cat(beta),
        g=torch.cat(g),
        kind=tuple(kind),
        segment=tuple(segment),
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_csv(colloc: CollocationSet, path: Path) -> None:
    """
    Write the set as CSV: x, y, kind, alpha, beta, g, nx, ny, gamma.

    Problems with several constrained components get extra g_1, g_2, ...
    columns. Boundary rows leave gamma empty; interior rows leave the
    boundary columns empty.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_g = colloc.g.shape[1]
    header = ["x", "y", "kind", "alpha", "beta", "g"]
    header += [f"g_{k}" for k in range(1, n_g)]
    header += ["nx", "ny", "gamma"]

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(colloc.n_interior):
            x, y = colloc.interior[i].tolist()
            gamma = "" if colloc.gamma is None else _fmt(colloc.gamma[i, 0])
            writer.writerow([_fmt(x), _fmt(y), "interior", "", "", ""] + [""] * (n_g - 1) + ["", "", gamma])
        for b in range(colloc.n_boundary):
            x, y = colloc.boundary[b].tolist()
            nx, ny = colloc.normals[b].tolist()
            row = [_fmt(x), _fmt(y), colloc.kind[b], _fmt(colloc.alpha[b]), _fmt(colloc.beta[b])]
            row += [_fmt(v) for v in colloc.g[b].tolist()]
            row += [_fmt(nx), _fmt(ny), ""]
            writer.writerow(row)


def evaluation_grid(problem: BenchmarkProblem, n: int = 101) -> torch.Tensor:
    """Uniform n×n grid over the bounding box, restricted to Ω ∪ Γ."""
    (x0, x1), (y0, y1) = problem.bounds
    xs = torch.linspace(x0, x1, n, dtype=DTYPE)
    ys = torch.linspace(y0, y1, n, dtype=DTYPE)
    gx, gy = torch.meshgrid(xs, ys, indexing="ij")
    pts = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)
    return pts[problem.in_closure(pts)]
