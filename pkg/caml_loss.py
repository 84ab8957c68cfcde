"""
Constraint-Aligned Loss
=======================

Standard PINN loss, the aligned loss with an explicitly solved additive
offset c, and the delayed-residual gate λ(t).

Aligned residuals replace every zeroth-order occurrence of u by u + c:

    r̄_i = r_i + γ_i c        s̄_b = s_b + α_b c

for problems where c enters affinely, or are re-evaluated through the
bundle's residual-of-c closure when it does not (convective terms). The
offset minimizes

    J(c) = w_res mean(r̄²) + w_bc mean(s̄²)

in closed form for the affine case and by a few safeguarded Newton
iterations otherwise. c is always a plain number by the time the
training loss is assembled, so it contributes no parameter gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence, Union

import torch

from ad_core import DTYPE, DualTaylor, seed_inputs


Offset = Union[float, DualTaylor]
ShiftEval = Callable[[Any, Offset], tuple]

NEWTON_CURVATURE_FLOOR = 1e-12
BRACKET_DOUBLINGS = 60


class DegenerateOffsetError(ValueError):
    """Raised when no zeroth-order term couples the residuals to c."""
    pass


class OffsetDivergenceError(ArithmeticError):
    """Raised when the offset iteration produces a non-finite iterate."""

    def __init__(self, history: list[float]):
        self.history = list(history)
        super().__init__(f"Offset solver diverged; iterates: {self.history}")


def _as_residual(values) -> torch.Tensor:
    return torch.as_tensor(values, dtype=DTYPE)


@dataclass(frozen=True)
class ResidualBundle:
    """
    Interior and boundary residuals of one evaluation.

    r and gamma share a shape, (N,) or (N, K); s and alpha share (M,) or
    (M, K_bc). For problems where the offset enters nonlinearly,
    `shift_eval(cache, c)` recomputes (r(c), s(c)) from cached
    derivative fields.
    """

    r: torch.Tensor
    s: torch.Tensor
    gamma: torch.Tensor
    alpha: torch.Tensor
    w_res: float = 1.0
    w_bc: float = 1.0
    shift_eval: Optional[ShiftEval] = field(default=None, compare=False)
    cache: Any = field(default=None, compare=False)

    def __post_init__(self):
        if self.gamma.shape != self.r.shape:
            raise ValueError(f"gamma shape {tuple(self.gamma.shape)} != r shape {tuple(self.r.shape)}")
        if self.alpha.shape != self.s.shape:
            raise ValueError(f"alpha shape {tuple(self.alpha.shape)} != s shape {tuple(self.s.shape)}")
        if not (self.w_res > 0 and self.w_bc > 0):
            raise ValueError("Loss weights must be positive")

    @classmethod
    def build(
        cls,
        r: Sequence[float],
        s: Sequence[float],
        gamma: Optional[Sequence[float]] = None,
        alpha: Optional[Sequence[float]] = None,
        w_res: float = 1.0,
        w_bc: float = 1.0,
    ) -> "ResidualBundle":
        """Bundle from plain sequences; missing coefficients default to zero."""
        r_t, s_t = _as_residual(r), _as_residual(s)
        gamma_t = torch.zeros_like(r_t) if gamma is None else _as_residual(gamma)
        alpha_t = torch.zeros_like(s_t) if alpha is None else _as_residual(alpha)
        return cls(r_t, s_t, gamma_t, alpha_t, w_res, w_bc)

    @property
    def n_res(self) -> int:
        return self.r.shape[0]

    @property
    def n_bc(self) -> int:
        return self.s.shape[0]

    @property
    def nonlinear(self) -> bool:
        return self.shift_eval is not None

    def residual_as_function_of_c(self, c: Offset) -> tuple:
        """(r(c), s(c)) for any offset, exact for both offset paths."""
        if self.shift_eval is not None:
            return self.shift_eval(self.cache, c)
        return _affine(self.r, self.gamma, c), _affine(self.s, self.alpha, c)

    def detach(self) -> "ResidualBundle":
        cache = self.cache.detach() if self.cache is not None else None
        return replace(
            self,
            r=self.r.detach(),
            s=self.s.detach(),
            gamma=self.gamma.detach(),
            alpha=self.alpha.detach(),
            cache=cache,
        )


def _affine(base: torch.Tensor, coeff: torch.Tensor, c: Offset):
    if isinstance(c, DualTaylor):
        return c * coeff + base
    return base + coeff * float(c)


def _mean_sq(x, n: int):
    """Σ x² / n over all entries; zero for an empty term."""
    if n == 0:
        return 0.0
    if isinstance(x, DualTaylor):
        return (x * x).sum() * (1.0 / n)
    return (x * x).sum() / n


def standard_loss(bundle: ResidualBundle) -> tuple:
    """(L_res, L_bc) as means of squared residuals."""
    return _mean_sq(bundle.r, bundle.n_res), _mean_sq(bundle.s, bundle.n_bc)


def closed_form_offset(bundle: ResidualBundle, res_scale: float = 1.0) -> float:
    """
    Unique minimizer of the quadratic J(c) for affine offsets.

    Args:
        bundle: Residuals and zeroth-order coefficients
        res_scale: Extra factor on w_res (the delay gate during training)

    Raises:
        DegenerateOffsetError: If J does not depend on c
    """
    r, s = bundle.r.detach(), bundle.s.detach()
    gamma, alpha = bundle.gamma.detach(), bundle.alpha.detach()
    wr = bundle.w_res * res_scale / bundle.n_res if bundle.n_res else 0.0
    wb = bundle.w_bc / bundle.n_bc if bundle.n_bc else 0.0

    numerator = wr * float((gamma * r).sum()) + wb * float((alpha * s).sum())
    denominator = wr * float((gamma * gamma).sum()) + wb * float((alpha * alpha).sum())
    if denominator <= 0.0:
        raise DegenerateOffsetError(
            "No zeroth-order coupling: all active γ and α are zero, the offset is undetermined"
        )
    return -numerator / denominator


def aligned_residuals(bundle: ResidualBundle, c: float) -> ResidualBundle:
    """Bundle of r̄ = r(c), s̄ = s(c) at a fixed offset."""
    r_bar, s_bar = bundle.residual_as_function_of_c(float(c))
    return ResidualBundle(r_bar, s_bar, bundle.gamma, bundle.alpha, bundle.w_res, bundle.w_bc)


def aligned_losses(bundle: ResidualBundle, c: float) -> tuple:
    """(L_res^alg, L_bc^alg) at a fixed offset."""
    return standard_loss(aligned_residuals(bundle, c))


def objective_J(bundle: ResidualBundle, c: Offset, res_scale: float = 1.0):
    """
    Offset objective J(c) = w_res mean(r̄²) + w_bc mean(s̄²).

    With a one-dimensional DualTaylor c the result carries J' and J''.
    """
    r_bar, s_bar = bundle.residual_as_function_of_c(c)
    j_res = _mean_sq(r_bar, bundle.n_res)
    j_bc = _mean_sq(s_bar, bundle.n_bc)
    return j_res * (bundle.w_res * res_scale) + j_bc * bundle.w_bc


def objective_derivs(
    bundle: ResidualBundle,
    res_scale: float = 1.0,
) -> Callable[[float], tuple[float, float]]:
    """Map c to (J'(c), J''(c)) by Taylor propagation in c."""
    detached = bundle.detach()

    def derivs(c: float) -> tuple[float, float]:
        c_dual = seed_inputs(torch.tensor([c], dtype=DTYPE))[0]
        j = objective_J(detached, c_dual, res_scale)
        if not isinstance(j, DualTaylor):
            return 0.0, 0.0
        return float(j.grad[0]), float(j.hess[0])

    return derivs


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def _fallback_step(
    j_derivs: Callable[[float], tuple[float, float]],
    c: float,
    slope: float,
    previous: Optional[tuple[float, float]],
    history: list[float],
) -> float:
    """Secant step on J' when it has positive slope, else one bisection step."""
    if slope == 0.0:
        return c
    if previous is not None:
        c_prev, slope_prev = previous
        if c_prev != c:
            secant = (slope - slope_prev) / (c - c_prev)
            if secant > NEWTON_CURVATURE_FLOOR:
                return c - slope / secant

    # Walk downhill with doubling steps until J' changes sign, then bisect
    direction = -1.0 if slope > 0 else 1.0
    step = max(1.0, abs(c))
    for _ in range(BRACKET_DOUBLINGS):
        b = c + direction * step
        slope_b, _ = j_derivs(b)
        if not _finite(slope_b):
            raise OffsetDivergenceError(history + [b])
        if (slope_b > 0) != (slope > 0) or slope_b == 0.0:
            return 0.5 * (c + b)
        step *= 2.0
    raise OffsetDivergenceError(history + [c + direction * step])


def newton_offset(
    j_derivs: Callable[[float], tuple[float, float]],
    c0: float,
    k: int,
) -> float:
    """
    K safeguarded Newton iterations c ← c - J'(c)/J''(c).

    Args:
        j_derivs: Map c to (J', J'')
        c0: Starting offset
        k: Number of iterations, >= 1

    Raises:
        OffsetDivergenceError: If an iterate or derivative is non-finite
    """
    if k < 1:
        raise ValueError("Newton offset solve needs K >= 1")
    c = float(c0)
    history = [c]
    previous = None
    for _ in range(k):
        slope, curvature = j_derivs(c)
        if not _finite(slope, curvature):
            raise OffsetDivergenceError(history)
        if curvature > NEWTON_CURVATURE_FLOOR:
            c_next = c - slope / curvature
        else:
            c_next = _fallback_step(j_derivs, c, slope, previous, history)
        previous = (c, slope)
        c = c_next
        history.append(c)
        if not _finite(c):
            raise OffsetDivergenceError(history)
    return c


@dataclass(frozen=True)
class DelaySchedule:
    """Residual gate: off until t_d, linear ramp over t_r steps, then on."""

    t_d: int = 0
    t_r: int = 0

    def __post_init__(self):
        if self.t_d < 0 or self.t_r < 0:
            raise ValueError("Delay schedule needs t_d >= 0 and t_r >= 0")


ALWAYS_ON = DelaySchedule(0, 0)


def delay_factor(t: float, schedule: DelaySchedule) -> float:
    """λ(t) in [0, 1]."""
    if t < 0:
        raise ValueError("Step index must be >= 0")
    if t < schedule.t_d:
        return 0.0
    if t < schedule.t_d + schedule.t_r:
        return (t - schedule.t_d) / schedule.t_r
    return 1.0


@dataclass
class OffsetState:
    """
    Offset carried across training steps.

    Affine problems re-solve c in closed form every step. Otherwise c is
    refined by K_init Newton iterations at the first step, K_few per
    step afterwards, and frozen from step t_c on.
    """

    c: float = 0.0
    frozen: bool = False
    k_init: int = 10
    k_few: int = 2
    t_c: int = 1000

    def update(self, bundle: ResidualBundle, t: int, linear: bool, res_scale: float = 1.0) -> float:
        if self.frozen:
            return self.c
        if linear:
            try:
                self.c = closed_form_offset(bundle, res_scale)
            except DegenerateOffsetError:
                pass
            return self.c
        if t >= self.t_c:
            self.frozen = True
            return self.c
        iterations = self.k_init if t <= 1 else self.k_few
        self.c = newton_offset(objective_derivs(bundle, res_scale), self.c, iterations)
        return self.c


def gated_sum(res, bc, w_res: float, w_bc: float, lam: float):
    """
    w_res λ res + w_bc bc.

    Linear in its terms, so it combines either the two losses or their
    parameter gradients.
    """
    return res * (w_res * lam) + bc * w_bc


def caml_total_loss(
    bundle: ResidualBundle,
    c: float,
    t: int,
    schedule: DelaySchedule,
):
    """w_res λ(t) L_res^alg + w_bc L_bc^alg with c held constant."""
    l_res, l_bc = aligned_losses(bundle, float(c))
    return gated_sum(l_res, l_bc, bundle.w_res, bundle.w_bc, delay_factor(t, schedule))


def reconstruct_solution(
    u_net_values: torch.Tensor,
    c: float,
    offset_fields: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """
    Eliminate the offset: u = u_θ + c on the offset-carrying components.

    With offset_fields None every component is shifted.
    """
    values = torch.as_tensor(u_net_values, dtype=DTYPE)
    if offset_fields is None or values.dim() < 2:
        return values + float(c)
    shifted = values.clone()
    cols = list(offset_fields)
    shifted[:, cols] = shifted[:, cols] + float(c)
    return shifted
