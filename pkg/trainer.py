"""
Training Loop
=============

End-to-end constraint-aligned training of one benchmark:

    collocation -> residuals -> offset solve -> gated loss
                -> parameter gradients (c frozen) -> Adam -> diagnostics

The four modes toggle the two mechanisms independently:

    vanilla   c = 0,        λ ≡ 1
    ac_only   c solved,     λ ≡ 1
    dr_only   c = 0,        λ(t) from the delay schedule
    caml      c solved,     λ(t) from the delay schedule
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import torch

from ad_core import DTYPE, NumericalBlowupError, ParamTape
from caml_loss import (
    ResidualBundle,
    aligned_losses,
    caml_total_loss,
    delay_factor,
    gated_sum,
    reconstruct_solution,
)
from config import TrainConfig
from diagnostics import grad_cosine, grad_norm_ratio
from network import ParamVector, forward, forward_plain, init_params
from problems import BenchmarkProblem, CollocationSet, Fields, evaluation_grid, sample_collocation
from progress import RunLog, StepRecord, VerboseLog, print_run_header, print_run_summary, print_step_line


class MetricUndefinedError(ArithmeticError):
    """Raised when the reference solution has zero norm on the grid."""
    pass


@dataclass(frozen=True)
class ResidualCache:
    """Derivative fields of one evaluation, reused after the offset solve."""

    problem: BenchmarkProblem
    interior: Fields
    boundary: Fields
    x: torch.Tensor
    normals: torch.Tensor
    alpha: torch.Tensor
    beta: torch.Tensor
    g: torch.Tensor

    def detach(self) -> "ResidualCache":
        return ResidualCache(
            self.problem, self.interior.detach(), self.boundary.detach(),
            self.x, self.normals, self.alpha, self.beta, self.g,
        )


def _shifted_residuals(cache: ResidualCache, c):
    """(r(c), s(c)) from cached fields; c may be a number or a DualTaylor."""
    problem = cache.problem
    r = problem.residual(cache.interior.shifted(c), cache.x)
    s = problem.boundary_residual(
        cache.boundary.shifted(c), cache.normals, cache.alpha, cache.beta, cache.g
    )
    return r, s


def _check_finite(values: torch.Tensor, what: str, step: Optional[int]) -> None:
    bad = ~torch.isfinite(values.detach())
    if bool(bad.any()):
        point = int(bad.nonzero()[0, 0])
        raise NumericalBlowupError(step, f"{what} residual at point {point}")


def assemble_residuals(
    problem: BenchmarkProblem,
    theta: ParamVector,
    colloc: CollocationSet,
    w_res: float = 1.0,
    w_bc: float = 1.0,
    step: Optional[int] = None,
) -> ResidualBundle:
    """
    Raw residuals r_i = N[u_θ](x_i) - f(x_i) and s_b = α u + β ∇u·n - g.

    The network is evaluated once per point set; the derivative fields
    stay in the bundle's cache so the offset solve never repeats them.

    Raises:
        NumericalBlowupError: If a residual is non-finite
    """
    interior = Fields.from_dual(forward(theta, colloc.interior), problem.offset_fields)
    boundary = Fields.from_dual(forward(theta, colloc.boundary), problem.offset_fields)
    cache = ResidualCache(
        problem, interior, boundary, colloc.interior,
        colloc.normals, colloc.alpha, colloc.beta, colloc.g,
    )
    r, s = _shifted_residuals(cache, 0.0)
    _check_finite(r, "interior", step)
    _check_finite(s, "boundary", step)

    if colloc.gamma is not None:
        gamma = colloc.gamma
    else:
        gamma = problem.zeroth_coeff(colloc.interior, interior.detach())
    gamma = gamma.expand(r.shape)

    coupled = torch.tensor(
        [1.0 if k in problem.offset_fields else 0.0 for k in problem.boundary_fields], dtype=DTYPE
    )
    alpha = colloc.alpha[:, None] * coupled[None, :]

    return ResidualBundle(
        r=r,
        s=s,
        gamma=gamma,
        alpha=alpha,
        w_res=w_res,
        w_bc=w_bc,
        shift_eval=None if problem.linear_offset else _shifted_residuals,
        cache=cache,
    )


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: torch.Tensor
    v: torch.Tensor
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(torch.zeros(n, dtype=DTYPE), torch.zeros(n, dtype=DTYPE), 0)


def adam_step(
    theta: torch.Tensor,
    grad: torch.Tensor,
    state: AdamState,
    eta: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> torch.Tensor:
    """Bias-corrected Adam update; advances `state` in place."""
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * (grad * grad)
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    return theta - eta * m_hat / (torch.sqrt(v_hat) + eps)


def reconstructed_values(
    theta: ParamVector,
    c: float,
    problem: BenchmarkProblem,
    grid: torch.Tensor,
) -> torch.Tensor:
    """u_θ + c on the offset-carrying components at the grid points."""
    with torch.no_grad():
        raw = forward_plain(theta, grid)
    return reconstruct_solution(raw, c, problem.offset_fields)[:, list(problem.offset_fields)]


def relative_l2(
    theta: ParamVector,
    c: float,
    problem: BenchmarkProblem,
    grid: torch.Tensor,
    reference: Optional[torch.Tensor] = None,
) -> float:
    """
    ‖u_recon - u*‖₂ / ‖u*‖₂ over the grid, all offset fields jointly.

    Raises:
        MetricUndefinedError: If u* vanishes on the grid
    """
    if reference is None:
        reference = problem.exact_solution(grid)[:, list(problem.offset_fields)]
    denom = float(torch.linalg.norm(reference))
    if denom == 0.0:
        raise MetricUndefinedError(f"Exact solution of {problem.name} has zero norm on the grid")
    pred = reconstructed_values(theta, c, problem, grid)
    return float(torch.linalg.norm(pred - reference)) / denom


def _is_eval_step(t: int, config: TrainConfig) -> bool:
    return t % config.eval_interval == 0 or t == 1 or t == config.t_min or t == config.t_max


def train(
    problem: BenchmarkProblem,
    config: TrainConfig,
    colloc: Optional[CollocationSet] = None,
    verbose_log: Optional[VerboseLog] = None,
    quiet: bool = False,
    trajectory_every: int = 0,
) -> RunLog:
    """
    Run one training run.

    Args:
        problem: Benchmark to solve
        config: Resolved hyperparameters (mode, schedule, budgets, seed)
        colloc: Collocation set; sampled from config.seed when omitted
        verbose_log: Optional markdown log receiving evaluated steps
        quiet: Suppress console output
        trajectory_every: Keep θ_k every this many updates in
            `log.trajectory`, plus the initial and final parameters (0: off)

    Returns:
        RunLog with one record per step; `final_theta` holds the last
        parameters. rel_L2 is evaluated on the parameters entering a step
        together with that step's offset.

    Raises:
        NumericalBlowupError: If a loss or gradient becomes non-finite
    """
    torch.use_deterministic_algorithms(True)
    spec = config.network_spec(problem.input_dim, problem.output_dim)
    theta = init_params(spec, config.seed)
    if colloc is None:
        colloc = sample_collocation(problem, config.n_interior, config.n_per_edge, config.seed)
    grid = evaluation_grid(problem, config.eval_grid)
    reference = problem.exact_solution(grid)[:, list(problem.offset_fields)]

    adam = AdamState.zeros(len(theta))
    offset = config.offset_state()
    schedule = config.active_schedule
    log = RunLog(config.t_min, config.l2_stop)
    cum_dist = 0.0
    c = 0.0

    if trajectory_every > 0:
        log.trajectory.append((0, theta.data.detach().clone()))

    if not quiet:
        print_run_header(problem.name, config.mode, config.seed, len(theta))
    if verbose_log is not None:
        verbose_log.log_config(config.to_dict())
    start = time.perf_counter()

    for t in range(1, config.t_max + 1):
        lam = delay_factor(t, schedule)
        tape = ParamTape(theta.data)
        bundle = tape.record(
            lambda leaf: assemble_residuals(
                problem, theta.with_data(leaf), colloc, config.w_res, config.w_bc, step=t
            )
        )
        if config.solves_offset:
            c = offset.update(bundle, t, problem.linear_offset, res_scale=lam)

        l_res, l_bc = aligned_losses(bundle, c)
        g_res, g_bc = tape.backward(l_res, l_bc, step=t)
        grad = gated_sum(g_res, g_bc, config.w_res, config.w_bc, lam)
        loss_total = caml_total_loss(bundle.detach(), c, t, schedule)

        rel = relative_l2(theta, c, problem, grid, reference) if _is_eval_step(t, config) else None

        new_data = adam_step(
            theta.data, grad, adam, config.eta, config.beta1, config.beta2, config.eps_adam
        )
        cum_dist += float(torch.linalg.norm(new_data - theta.data))
        theta = theta.with_data(new_data)
        if trajectory_every > 0 and t % trajectory_every == 0:
            log.trajectory.append((t, new_data.detach().clone()))

        l_res_v, l_bc_v = l_res.detach().item(), l_bc.detach().item()
        record = StepRecord(
            step=t,
            loss_res=l_res_v,
            loss_bc=l_bc_v,
            loss_total=float(loss_total),
            lam=lam,
            c=float(c),
            cos_phi=grad_cosine(g_res, g_bc),
            grad_norm_ratio=grad_norm_ratio(g_res, g_bc),
            rel_l2=rel,
            cum_param_dist=cum_dist,
        )
        log.append(record)

        elapsed = time.perf_counter() - start
        if not quiet and config.print_every and (t == 1 or t % config.print_every == 0):
            print_step_line(record, elapsed)
        if verbose_log is not None and rel is not None:
            verbose_log.log_step(record, elapsed)

        if t >= config.t_min and log.stp is not None:
            break

    log.final_theta = theta
    if trajectory_every > 0 and log.trajectory[-1][0] != len(log):
        log.trajectory.append((len(log), theta.data.detach().clone()))
    if not quiet:
        print_run_summary(log.summary(), time.perf_counter() - start)
    return log
