#!/usr/bin/env python3
"""
Training Loop Tests
===================

Residual assembly, Adam, evaluation and short end-to-end runs on tiny
networks, plus the per-step run log.
Run with: python test_trainer.py
"""

import sys
import tempfile
import warnings
from pathlib import Path

import torch

import landscape
from ad_core import DTYPE
from caml_loss import closed_form_offset, objective_J, standard_loss
from config import TrainConfig, resolve_config
from network import MlpSpec, init_params
from problems import evaluation_grid, get_problem, sample_collocation
from progress import RunLog, StepRecord
from testing_utils import run_tests
from trainer import (
    AdamState,
    MetricUndefinedError,
    adam_step,
    assemble_residuals,
    relative_l2,
    train,
)


TINY = {
    "hidden_layers": 1,
    "hidden_width": 8,
    "n_interior": 16,
    "n_per_edge": 4,
    "eval_grid": 11,
    "eval_interval": 1,
    "print_every": 0,
}


def _tiny_config(benchmark: str, mode: str, steps: int, **extra) -> TrainConfig:
    values = dict(TINY, t_min=steps, t_max=steps, mode=mode, seed=3)
    values.update(extra)
    return resolve_config(benchmark, overrides=values)


def _record(step: int, rel_l2=None, cos_phi=0.5) -> StepRecord:
    return StepRecord(step, 1.0, 2.0, 3.0, 1.0, 0.0, cos_phi, 1.0, rel_l2, 0.1 * step)


def test_adam_first_step_moves_by_eta():
    theta = torch.zeros(3, dtype=DTYPE)
    grad = torch.tensor([2.0, -0.5, 0.0], dtype=DTYPE)
    state = AdamState.zeros(3)
    new = adam_step(theta, grad, state, eta=1e-3)
    assert state.t == 1
    assert torch.allclose(new, torch.tensor([-1e-3, 1e-3, 0.0], dtype=DTYPE), atol=1e-10)


def test_assemble_residuals_heat():
    problem = get_problem("heat")
    colloc = sample_collocation(problem, 12, 3, seed=0)
    theta = init_params(MlpSpec(hidden_layers=1, hidden_width=8), 0)
    bundle = assemble_residuals(problem, theta, colloc, w_res=1.0, w_bc=5.0)
    assert bundle.r.shape == (12, 1)
    assert bundle.s.shape == (12, 1)
    assert not bundle.nonlinear
    assert float(bundle.gamma.abs().max()) == 0.0
    dirichlet = torch.tensor([k == "dirichlet" for k in colloc.kind])
    assert torch.equal(bundle.alpha[:, 0], dirichlet.to(DTYPE))

    c = closed_form_offset(bundle)
    assert float(objective_J(bundle, c)) <= float(objective_J(bundle, 0.0))


def test_assemble_residuals_ns_is_nonlinear():
    problem = get_problem("ns")
    colloc = sample_collocation(problem, 10, 2, seed=1)
    theta = init_params(MlpSpec(output_dim=3, hidden_layers=1, hidden_width=8), 0)
    bundle = assemble_residuals(problem, theta, colloc)
    assert bundle.nonlinear
    assert bundle.r.shape == (10, 3)
    assert bundle.s.shape == (8, 2)
    r_c, s_c = bundle.residual_as_function_of_c(0.5)
    assert torch.allclose(s_c - bundle.s, torch.full_like(bundle.s, 0.5), atol=1e-12)
    assert torch.allclose(r_c - bundle.r, 0.5 * bundle.gamma, atol=1e-12)


def test_relative_l2_undefined_for_zero_reference():
    problem = get_problem("toy_poisson")
    grid = evaluation_grid(problem, 5)
    theta = init_params(MlpSpec(hidden_layers=1, hidden_width=4), 0)
    try:
        relative_l2(theta, 0.0, problem, grid, reference=torch.zeros(grid.shape[0], 1, dtype=DTYPE))
    except MetricUndefinedError:
        return
    raise AssertionError("expected MetricUndefinedError")


def test_relative_l2_includes_offset():
    problem = get_problem("heat")
    grid = evaluation_grid(problem, 5)
    theta = init_params(MlpSpec(hidden_layers=1, hidden_width=4), 0)
    reference = problem.exact_solution(grid)
    far = relative_l2(theta, 0.0, problem, grid, reference)
    near = relative_l2(theta, 100.0, problem, grid, reference)
    assert near < far


def test_train_is_deterministic():
    config = _tiny_config("heat", "caml", 4)
    first = train(get_problem("heat"), config, quiet=True)
    second = train(get_problem("heat"), config, quiet=True)
    assert len(first) == 4
    assert [r.row() for r in first.records] == [r.row() for r in second.records]
    assert torch.equal(first.final_theta.data, second.final_theta.data)


def test_vanilla_keeps_offset_zero_and_gate_open():
    log = train(get_problem("heat"), _tiny_config("heat", "vanilla", 3), quiet=True)
    assert all(r.c == 0.0 and r.lam == 1.0 for r in log.records)
    assert all(r.rel_l2 is not None for r in log.records)


def test_caml_gate_and_offset():
    log = train(get_problem("heat"), _tiny_config("heat", "caml", 3), quiet=True)
    # Heat delays the residual for 25 steps
    assert all(r.lam == 0.0 for r in log.records)
    assert all(r.c != 0.0 for r in log.records)
    assert log.records[0].loss_total == 5.0 * log.records[0].loss_bc


def test_ramp_total_loss_and_quiet_logging():
    config = _tiny_config("heat", "caml", 4, t_d=2, t_r=4)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        log = train(get_problem("heat"), config, quiet=True)
    assert not [w for w in caught if issubclass(w.category, UserWarning)]

    assert [r.lam for r in log.records] == [0.0, 0.0, 0.25, 0.5]
    for r in log.records:
        expected = config.w_res * r.lam * r.loss_res + config.w_bc * r.loss_bc
        assert abs(r.loss_total - expected) <= 1e-12 * max(1.0, expected)


def test_dr_only_gates_without_offset():
    log = train(get_problem("heat"), _tiny_config("heat", "dr_only", 2), quiet=True)
    assert all(r.lam == 0.0 and r.c == 0.0 for r in log.records)


def test_ns_and_helmholtz_steps_run():
    for name in ("ns", "helmholtz"):
        log = train(get_problem(name), _tiny_config(name, "caml", 2, t_d=0, t_r=0), quiet=True)
        assert len(log) == 2
        assert all(r.lam == 1.0 for r in log.records)
        assert all(abs(r.c) < 1e6 for r in log.records)


def test_early_stop_after_t_min():
    config = _tiny_config("heat", "vanilla", 1, t_max=5, l2_stop=1e6)
    log = train(get_problem("heat"), config, quiet=True)
    assert log.stp == 1
    assert len(log) == 1


def test_run_log_appends_in_order():
    log = RunLog(t_min=3, l2_stop=0.1)
    log.append(_record(1, rel_l2=0.5))
    try:
        log.append(_record(3))
    except ValueError:
        pass
    else:
        raise AssertionError("a skipped step should fail")
    log.append(_record(2, cos_phi=None))
    log.append(_record(3, rel_l2=0.05, cos_phi=-0.2))
    assert log.stp == 3
    assert log.l2_at(1) == 0.5 and log.l2_at(2) is None
    summary = log.summary()
    assert summary.success and summary.steps_run == 3
    assert summary.pos_cos_fraction == 0.5
    assert summary.final_l2 == 0.05


def test_run_log_csv_round_trip():
    log = RunLog(t_min=2, l2_stop=0.1)
    log.append(_record(1, rel_l2=1.0 / 3.0))
    log.append(_record(2, cos_phi=None))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "seed_1.csv"
        log.write_csv(path)
        restored = RunLog.read_csv(path, t_min=2, l2_stop=0.1)
    assert restored.records == log.records


def test_trajectory_checkpoints():
    problem = get_problem("heat")
    config = _tiny_config("heat", "caml", 5, t_d=0, t_r=0)
    log = train(problem, config, quiet=True, trajectory_every=2)
    assert [k for k, _ in log.trajectory] == [0, 2, 4, 5]
    spec = config.network_spec(problem.input_dim, problem.output_dim)
    assert torch.equal(log.trajectory[0][1], init_params(spec, config.seed).data)
    assert torch.equal(log.trajectory[-1][1], log.final_theta.data)
    assert not any(theta.requires_grad for _, theta in log.trajectory)

    plain = train(problem, config, quiet=True)
    assert plain.trajectory == []
    assert torch.equal(plain.final_theta.data, log.final_theta.data)


def test_training_trajectory_slice():
    problem = get_problem("heat")
    config = _tiny_config("heat", "caml", 4, t_d=0, t_r=0)
    colloc = sample_collocation(problem, config.n_interior, config.n_per_edge, seed=config.seed)
    log = train(problem, config, colloc=colloc, quiet=True, trajectory_every=1)
    spec = config.network_spec(problem.input_dim, problem.output_dim)

    result, points = landscape.training_trajectory_slice(problem, colloc, spec, log.trajectory, n=3)
    assert result.grid.loss.shape == (3, 3)
    assert [p.step for p in points] == [0, 1, 2, 3, 4]
    # The plane is centered on the final parameters and passes through the start
    assert abs(points[-1].alpha) < 1e-12 and abs(points[-1].beta) < 1e-12
    assert points[0].off_plane < 1e-10 and points[2].off_plane < 1e-10
    with torch.no_grad():
        l_res, _ = standard_loss(assemble_residuals(problem, log.final_theta, colloc))
    assert abs(points[-1].loss - float(l_res)) <= 1e-12 * float(l_res)

    try:
        landscape.training_trajectory_slice(problem, colloc, spec, log.trajectory[:2])
    except ValueError:
        return
    raise AssertionError("two checkpoints cannot span a plane")


def main():
    return run_tests(
        "training loop",
        [
            test_adam_first_step_moves_by_eta,
            test_assemble_residuals_heat,
            test_assemble_residuals_ns_is_nonlinear,
            test_relative_l2_undefined_for_zero_reference,
            test_relative_l2_includes_offset,
            test_train_is_deterministic,
            test_vanilla_keeps_offset_zero_and_gate_open,
            test_caml_gate_and_offset,
            test_ramp_total_loss_and_quiet_logging,
            test_dr_only_gates_without_offset,
            test_ns_and_helmholtz_steps_run,
            test_early_stop_after_t_min,
            test_run_log_appends_in_order,
            test_run_log_csv_round_trip,
            test_trajectory_checkpoints,
            test_training_trajectory_slice,
        ],
    )


if __name__ == "__main__":
    sys.exit(main())
