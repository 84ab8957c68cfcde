#!/usr/bin/env python3
"""
Benchmark Problem Tests
=======================

Manufactured-solution consistency of every benchmark, boundary data,
geometry and collocation sampling.
Run with: python test_problems.py
"""

import csv
import sys
import tempfile
from pathlib import Path

import torch

from ad_core import DTYPE, dt_stack, seed_inputs
from problems import (
    Fields,
    evaluation_grid,
    export_csv,
    get_available_problems,
    get_problem,
    sample_collocation,
)
from problems.heat import T0, flux_tail_bound
from problems.helmholtz import HOLE_CENTER, HOLE_RADIUS, reaction
from testing_utils import random_points, run_tests


def _max_abs(x: torch.Tensor) -> float:
    return float(x.abs().max())


def test_registry():
    names = get_available_problems()
    assert names == ["heat", "poisson", "ns", "helmholtz", "toy_poisson", "two_phase_poisson"]
    for name in names:
        assert get_problem(name).name == name
    try:
        get_problem("burgers")
    except ValueError as e:
        assert "Unknown benchmark" in str(e)
        return
    raise AssertionError("expected ValueError for unknown benchmark")


def test_exact_solutions_satisfy_pde():
    for name in get_available_problems():
        problem = get_problem(name)
        colloc = sample_collocation(problem, 100, 4, seed=0)
        fields = problem.exact_fields(colloc.interior)
        r = problem.residual(fields, colloc.interior)
        assert _max_abs(r) < 1e-8, f"{name}: residual {_max_abs(r):.3e}"


def test_manufactured_boundary_data_is_exact():
    for name in ("poisson", "ns", "helmholtz", "toy_poisson", "two_phase_poisson"):
        problem = get_problem(name)
        colloc = sample_collocation(problem, 10, 50, seed=1)
        fields = problem.exact_fields(colloc.boundary)
        s = problem.boundary_residual(fields, colloc.normals, colloc.alpha, colloc.beta, colloc.g)
        assert _max_abs(s) < 1e-10, f"{name}: boundary residual {_max_abs(s):.3e}"


def test_heat_boundary_data():
    problem = get_problem("heat")
    colloc = sample_collocation(problem, 10, 200, seed=2)
    fields = problem.exact_fields(colloc.boundary)
    s = problem.boundary_residual(fields, colloc.normals, colloc.alpha, colloc.beta, colloc.g)[:, 0]

    for b, seg in enumerate(colloc.segment):
        if seg in ("left", "bottom"):
            assert abs(float(s[b])) < 1e-10
            assert float(colloc.g[b, 0]) == T0
            continue
        # Edge coordinate along the flux edge
        t = colloc.boundary[b, 1] if seg == "right" else colloc.boundary[b, 0]
        if not 0.05 < float(t) < 0.95:
            continue
        bound = float(flux_tail_bound(t.reshape(1))[0])
        assert abs(float(s[b])) <= bound + 1e-9, f"{seg} at {float(t):.3f}: {float(s[b]):.3e} > {bound:.3e}"


def test_segment_kinds():
    heat = get_problem("heat")
    kinds = {seg.name: seg.kind for seg in heat.segments}
    assert kinds == {"left": "dirichlet", "bottom": "dirichlet", "right": "neumann", "top": "neumann"}
    helmholtz = get_problem("helmholtz")
    assert [seg.name for seg in helmholtz.segments][-1] == "hole"


def test_collocation_is_deterministic():
    problem = get_problem("poisson")
    a = sample_collocation(problem, 64, 8, seed=5)
    b = sample_collocation(problem, 64, 8, seed=5)
    c = sample_collocation(problem, 64, 8, seed=6)
    assert torch.equal(a.interior, b.interior) and torch.equal(a.boundary, b.boundary)
    assert not torch.equal(a.interior, c.interior)
    assert a.n_interior == 64
    assert a.n_boundary == 8 * len(problem.segments)
    assert bool(problem.contains(a.interior).all())


def test_zeroth_order_coefficients():
    heat = sample_collocation(get_problem("heat"), 20, 2, seed=0)
    assert torch.equal(heat.gamma, torch.zeros(20, 1, dtype=DTYPE))

    problem = get_problem("helmholtz")
    colloc = sample_collocation(problem, 20, 2, seed=0)
    expected = reaction(colloc.interior[:, 0], colloc.interior[:, 1])[:, None]
    assert torch.equal(colloc.gamma, expected)

    assert sample_collocation(get_problem("ns"), 20, 2, seed=0).gamma is None


def test_fields_derivative_accessors():
    pts = random_points(6, seed=2)
    d = seed_inputs(pts)
    x, y = d[:, 0], d[:, 1]
    fields = Fields.from_dual(dt_stack([x * x * y, y * y + 3.0 * x]), offset_fields=(0,)).shifted(2.0)

    xv, yv = pts[:, 0], pts[:, 1]
    assert torch.allclose(fields.u(0), xv * xv * yv + 2.0, atol=1e-14)
    assert torch.allclose(fields.u(1), yv * yv + 3.0 * xv, atol=1e-14)
    assert torch.allclose(fields.dx(0, 0), 2.0 * xv * yv, atol=1e-14)
    assert torch.allclose(fields.dx(0, 1), xv * xv, atol=1e-14)
    assert torch.allclose(fields.dxx(0, 1, 0), 2.0 * xv, atol=1e-14)
    assert torch.allclose(fields.lap(0), 2.0 * yv, atol=1e-14)
    assert torch.allclose(fields.lap(1), torch.full_like(yv, 2.0), atol=1e-14)


def test_affine_offset_shift():
    problem = get_problem("helmholtz")
    colloc = sample_collocation(problem, 30, 10, seed=3)
    fields = problem.exact_fields(colloc.interior)
    c = 0.37
    r0 = problem.residual(fields, colloc.interior)
    r_c = problem.residual(fields.shifted(c), colloc.interior)
    assert torch.allclose(r_c - r0, colloc.gamma * c, atol=1e-10)

    b_fields = problem.exact_fields(colloc.boundary)
    args = (colloc.normals, colloc.alpha, colloc.beta, colloc.g)
    s_c = problem.boundary_residual(b_fields.shifted(c), *args)
    s0 = problem.boundary_residual(b_fields, *args)
    assert torch.allclose(s_c - s0, colloc.alpha[:, None] * c, atol=1e-10)


def test_ns_offset_coupling_matches_linearization():
    problem = get_problem("ns")
    colloc = sample_collocation(problem, 30, 4, seed=4)
    fields = problem.exact_fields(colloc.interior)
    gamma = problem.zeroth_coeff(colloc.interior, fields)
    c = -0.8
    r0 = problem.residual(fields, colloc.interior)
    r_c = problem.residual(fields.shifted(c), colloc.interior)
    assert torch.allclose(r_c - r0, gamma * c, atol=1e-9)
    # Pressure is never shifted
    assert torch.equal(fields.shifted(c).u(2), fields.u(2))


def test_helmholtz_hole_geometry():
    problem = get_problem("helmholtz")
    colloc = sample_collocation(problem, 500, 40, seed=7)
    center = torch.tensor(HOLE_CENTER, dtype=DTYPE)
    assert float((colloc.interior - center).norm(dim=-1).min()) > HOLE_RADIUS

    hole = [b for b, seg in enumerate(colloc.segment) if seg == "hole"]
    rim = colloc.boundary[hole]
    assert torch.allclose((rim - center).norm(dim=-1), torch.full((len(hole),), HOLE_RADIUS, dtype=DTYPE))
    # Outward normals of Ω point towards the hole center
    inward = (center - rim) / HOLE_RADIUS
    assert torch.allclose(colloc.normals[hole], inward, atol=1e-12)

    grid = evaluation_grid(problem, 21)
    assert grid.shape[0] < 21 * 21
    assert float((grid - center).norm(dim=-1).min()) >= HOLE_RADIUS


def test_evaluation_grid_square():
    grid = evaluation_grid(get_problem("heat"), 11)
    assert grid.shape == (121, 2)
    assert float(grid.min()) == 0.0 and float(grid.max()) == 1.0


def test_export_collocation_csv():
    problem = get_problem("ns")
    colloc = sample_collocation(problem, 5, 3, seed=0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "colloc.csv"
        export_csv(colloc, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    assert rows[0] == ["x", "y", "kind", "alpha", "beta", "g", "g_1", "nx", "ny", "gamma"]
    assert len(rows) == 1 + 5 + 3 * 4
    assert rows[1][2] == "interior"
    assert rows[-1][2] == "dirichlet"


def main():
    return run_tests(
        "benchmark problems",
        [
            test_registry,
            test_exact_solutions_satisfy_pde,
            test_manufactured_boundary_data_is_exact,
            test_heat_boundary_data,
            test_segment_kinds,
            test_fields_derivative_accessors,
            test_collocation_is_deterministic,
            test_zeroth_order_coefficients,
            test_affine_offset_shift,
            test_ns_offset_coupling_matches_linearization,
            test_helmholtz_hole_geometry,
            test_evaluation_grid_square,
            test_export_collocation_csv,
        ],
    )


if __name__ == "__main__":
    sys.exit(main())
