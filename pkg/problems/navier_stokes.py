"""
Steady Navier–Stokes
====================

Incompressible steady flow on the unit square at Re = 500 with a
manufactured solution carrying a uniform background velocity (1, 1):

    u* =  π sin(πx) cos(πy) + 1
    v* = -π cos(πx) sin(πy) + 1
    p* =  sin(2πx) sin(2πy)

Outputs are (u, v, p). The offset c shifts both velocity components,
so it enters the convective term nonlinearly; pressure is never shifted.
"""

from __future__ import annotations

from typing import Optional

import torch

from ad_core import DTYPE
from .base import (
    PI,
    BenchmarkProblem,
    BoundarySegmentSpec,
    Fields,
    Value,
    coords,
    cos,
    dirichlet_from,
    sin,
    square_segment,
    stack_components,
)


REYNOLDS = 500.0


def momentum(u, v, ux, uy, vx, vy, px, py, lap_u, lap_v, nu: float = 1.0 / REYNOLDS):
    """
    Momentum operator (u·∇)u + ∇p - ν Δu, one entry per direction.

    u and v may be DualTaylor values in the offset; every other argument
    is a plain tensor.
    """
    mx = u * ux + v * uy + px - lap_u * nu
    my = u * vx + v * vy + py - lap_v * nu
    return mx, my


def exact_derivatives(x: torch.Tensor, y: torch.Tensor) -> dict[str, torch.Tensor]:
    """Hand-derived partials of the manufactured velocity and pressure."""
    sx, cx = torch.sin(PI * x), torch.cos(PI * x)
    sy, cy = torch.sin(PI * y), torch.cos(PI * y)
    s2x, c2x = torch.sin(2 * PI * x), torch.cos(2 * PI * x)
    s2y, c2y = torch.sin(2 * PI * y), torch.cos(2 * PI * y)
    return {
        "u": PI * sx * cy + 1.0,
        "v": -PI * cx * sy + 1.0,
        "ux": PI ** 2 * cx * cy,
        "uy": -(PI ** 2) * sx * sy,
        "vx": PI ** 2 * sx * sy,
        "vy": -(PI ** 2) * cx * cy,
        "px": 2 * PI * c2x * s2y,
        "py": 2 * PI * s2x * c2y,
        "lap_u": -2 * PI ** 3 * sx * cy,
        "lap_v": 2 * PI ** 3 * cx * sy,
    }


class NavierStokesProblem(BenchmarkProblem):
    """Momentum and continuity residuals with Dirichlet velocity on Γ."""

    name = "ns"
    output_dim = 3
    offset_fields = (0, 1)
    boundary_fields = (0, 1)
    linear_offset = False

    def __init__(self, reynolds: float = REYNOLDS):
        self.nu = 1.0 / reynolds
        g = dirichlet_from(self.exact_solution, self.boundary_fields)
        self._segments = tuple(
            square_segment(edge, 1.0, 0.0, g) for edge in ("left", "right", "bottom", "top")
        )

    @property
    def segments(self) -> tuple[BoundarySegmentSpec, ...]:
        return self._segments

    def exact_solution(self, x: Value) -> Value:
        xs, ys = coords(x)
        u = sin(PI * xs) * cos(PI * ys) * PI + 1.0
        v = cos(PI * xs) * sin(PI * ys) * (-PI) + 1.0
        p = sin(2 * PI * xs) * sin(2 * PI * ys)
        return stack_components([u, v, p])

    def operator(self, fields: Fields, x: torch.Tensor) -> Value:
        mx, my = momentum(
            fields.u(0), fields.u(1),
            fields.dx(0, 0), fields.dx(0, 1),
            fields.dx(1, 0), fields.dx(1, 1),
            fields.dx(2, 0), fields.dx(2, 1),
            fields.lap(0), fields.lap(1),
            self.nu,
        )
        continuity = fields.dx(0, 0) + fields.dx(1, 1)
        return stack_components([mx, my, continuity])

    def source(self, x: torch.Tensor) -> torch.Tensor:
        d = exact_derivatives(*coords(x))
        fx, fy = momentum(
            d["u"], d["v"], d["ux"], d["uy"], d["vx"], d["vy"],
            d["px"], d["py"], d["lap_u"], d["lap_v"], self.nu,
        )
        return torch.stack([fx, fy, torch.zeros_like(fx)], dim=-1)

    def zeroth_coeff(self, x: torch.Tensor, fields: Optional[Fields] = None) -> torch.Tensor:
        """
        Linearized coupling ∂r/∂c of the momentum rows.

        The convective term makes this depend on the current velocity
        gradients; without fields it is undefined and zeros are returned.
        """
        if fields is None:
            return torch.zeros(x.shape[0], 3, dtype=DTYPE)
        return torch.stack(
            [
                fields.dx(0, 0) + fields.dx(0, 1),
                fields.dx(1, 0) + fields.dx(1, 1),
                torch.zeros_like(fields.dx(0, 0)),
            ],
            dim=-1,
        )


def ns_problem() -> NavierStokesProblem:
    return NavierStokesProblem()
