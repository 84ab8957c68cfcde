"""
Differentiation Core
====================

Second-order forward-mode (Taylor) propagation with respect to spatial
coordinates, and a reverse-mode parameter tape built on torch autograd.

A DualTaylor carries a value together with its first partials and the
upper triangle of its second partials. Leading axes are batch axes; the
derivative axis is always last, so a batch of N points with d spatial
coordinates has value (N,), grad (N, d) and hess (N, d(d+1)/2).

Any PDE residual built from DualTaylor arithmetic can then be
differentiated with respect to the network parameters by recording the
forward pass on a ParamTape.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import torch


DTYPE = torch.float64

# Guards for IEEE doubles
DIV_FLOOR = 1e-300
EXP_BOUND = 700.0


class DifferentiationError(ArithmeticError):
    """Base class for failures inside the differentiation core."""
    pass


class DivisionSingularityError(DifferentiationError):
    """Raised when a denominator falls below the division floor."""
    pass


class ExpOverflowError(DifferentiationError):
    """Raised when an exponential argument exceeds the overflow bound."""
    pass


class NumericalBlowupError(DifferentiationError):
    """Raised when a loss or gradient becomes non-finite."""

    def __init__(self, step: Optional[int], detail: str):
        self.step = step
        self.detail = detail
        where = f"step {step}" if step is not None else "evaluation"
        super().__init__(f"Non-finite value at {where}: {detail}")


Scalar = Union[float, int, torch.Tensor]
Operand = Union["DualTaylor", Scalar]


def hess_size(dim: int) -> int:
    """Number of stored second partials for `dim` coordinates."""
    return dim * (dim + 1) // 2


@lru_cache(maxsize=None)
def hess_pairs(dim: int) -> tuple[tuple[int, int], ...]:
    """Coordinate pairs (i, j), i <= j, in row-major storage order."""
    return tuple((i, j) for i in range(dim) for j in range(i, dim))


def hess_index(i: int, j: int, dim: int) -> int:
    """Storage slot of the second partial with respect to x_i and x_j."""
    if i > j:
        i, j = j, i
    return hess_pairs(dim).index((i, j))


@lru_cache(maxsize=None)
def _pair_indices(dim: int) -> tuple[torch.Tensor, torch.Tensor]:
    pairs = hess_pairs(dim)
    first = torch.tensor([p[0] for p in pairs], dtype=torch.long)
    second = torch.tensor([p[1] for p in pairs], dtype=torch.long)
    return first, second


def _as_tensor(x: Scalar) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.tensor(float(x), dtype=DTYPE)


def _outer(g1: torch.Tensor, g2: torch.Tensor) -> torch.Tensor:
    """Packed g1_i g2_j over the stored pairs."""
    first, second = _pair_indices(g1.shape[-1])
    return g1[..., first] * g2[..., second]


def _sym_outer(g1: torch.Tensor, g2: torch.Tensor) -> torch.Tensor:
    """Packed g1_i g2_j + g1_j g2_i over the stored pairs."""
    first, second = _pair_indices(g1.shape[-1])
    return g1[..., first] * g2[..., second] + g1[..., second] * g2[..., first]


class DualTaylor:
    """
    Value with first and second spatial partials.

    Instances are immutable: every operation returns a new DualTaylor.
    Arithmetic accepts plain numbers and tensors as constants.
    """

    __slots__ = ("value", "grad", "hess")
    __array_priority__ = 1000

    def __init__(self, value: torch.Tensor, grad: torch.Tensor, hess: torch.Tensor):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def constant(cls, value: Scalar, dim: int) -> "DualTaylor":
        """Lift a constant into a DualTaylor with zero derivatives."""
        v = _as_tensor(value)
        return cls(
            v,
            torch.zeros(v.shape + (dim,), dtype=DTYPE),
            torch.zeros(v.shape + (hess_size(dim),), dtype=DTYPE),
        )

    @property
    def dim(self) -> int:
        return self.grad.shape[-1]

    @property
    def shape(self) -> torch.Size:
        return self.value.shape

    def __repr__(self) -> str:
        return f"DualTaylor(shape={tuple(self.shape)}, dim={self.dim})"

    def __getitem__(self, index) -> "DualTaylor":
        if not isinstance(index, tuple):
            index = (index,)
        tail = index + (slice(None),)
        return DualTaylor(self.value[index], self.grad[tail], self.hess[tail])

    def partial(self, i: int) -> torch.Tensor:
        """First partial with respect to coordinate i."""
        return self.grad[..., i]

    def second(self, i: int, j: int) -> torch.Tensor:
        """Second partial with respect to coordinates i and j."""
        return self.hess[..., hess_index(i, j, self.dim)]

    def laplacian(self) -> torch.Tensor:
        dim = self.dim
        return sum(self.hess[..., hess_index(i, i, dim)] for i in range(dim))

    def detach(self) -> "DualTaylor":
        return DualTaylor(self.value.detach(), self.grad.detach(), self.hess.detach())

    def sum(self) -> "DualTaylor":
        """Reduce over all batch axes."""
        lead = tuple(range(self.value.dim()))
        if not lead:
            return self
        return DualTaylor(
            self.value.sum(),
            self.grad.sum(dim=lead),
            self.hess.sum(dim=lead),
        )

    def expand(self, shape: torch.Size) -> "DualTaylor":
        """Broadcast the batch axes to `shape`."""
        shape = torch.Size(shape)
        if self.value.shape == shape:
            return self
        return DualTaylor(
            self.value.expand(shape),
            self.grad.expand(shape + (self.dim,)),
            self.hess.expand(shape + (self.hess.shape[-1],)),
        )

    # Arithmetic

    def __add__(self, other: Operand) -> "DualTaylor":
        return dt_add(self, other)

    def __radd__(self, other: Operand) -> "DualTaylor":
        return dt_add(self, other)

    def __sub__(self, other: Operand) -> "DualTaylor":
        return dt_add(self, dt_neg(other))

    def __rsub__(self, other: Operand) -> "DualTaylor":
        return dt_add(dt_neg(self), other)

    def __mul__(self, other: Operand) -> "DualTaylor":
        return dt_mul(self, other)

    def __rmul__(self, other: Operand) -> "DualTaylor":
        return dt_mul(self, other)

    def __truediv__(self, other: Operand) -> "DualTaylor":
        return dt_div(self, other)

    def __rtruediv__(self, other: Operand) -> "DualTaylor":
        return dt_div(other, self)

    def __neg__(self) -> "DualTaylor":
        return dt_neg(self)

    def __pow__(self, exponent: int) -> "DualTaylor":
        if not isinstance(exponent, int) or exponent < 0:
            raise TypeError("DualTaylor supports non-negative integer powers only")
        result = DualTaylor.constant(torch.ones_like(self.value), self.dim)
        for _ in range(exponent):
            result = dt_mul(result, self)
        return result


def _batch_shape(*values: torch.Tensor) -> torch.Size:
    return torch.broadcast_shapes(*(v.shape for v in values))


def seed_inputs(x: Union[torch.Tensor, Sequence[float]]) -> DualTaylor:
    """
    Seed spatial inputs for Taylor propagation.

    Args:
        x: Coordinates with the spatial axis last, shape (..., d)

    Returns:
        DualTaylor whose element k has value x[..., k], gradient e_k and
        zero Hessian.
    """
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.dim() == 0 or x.shape[-1] == 0:
        raise ValueError("seed_inputs needs at least one spatial coordinate")
    dim = x.shape[-1]
    grad = torch.eye(dim, dtype=DTYPE).expand(x.shape + (dim,))
    hess = torch.zeros(x.shape + (hess_size(dim),), dtype=DTYPE)
    return DualTaylor(x, grad, hess)


def dt_add(a: Operand, b: Operand) -> DualTaylor:
    if not isinstance(a, DualTaylor):
        a, b = b, a
    if not isinstance(b, DualTaylor):
        c = _as_tensor(b)
        shape = _batch_shape(a.value, c)
        a = a.expand(shape)
        return DualTaylor(a.value + c, a.grad, a.hess)
    return DualTaylor(a.value + b.value, a.grad + b.grad, a.hess + b.hess)


def dt_neg(a: Operand) -> Operand:
    if not isinstance(a, DualTaylor):
        return -_as_tensor(a)
    return DualTaylor(-a.value, -a.grad, -a.hess)


def dt_mul(a: Operand, b: Operand) -> DualTaylor:
    if not isinstance(a, DualTaylor):
        a, b = b, a
    if not isinstance(b, DualTaylor):
        c = _as_tensor(b)
        return DualTaylor(a.value * c, a.grad * c[..., None], a.hess * c[..., None])
    av, bv = a.value[..., None], b.value[..., None]
    return DualTaylor(
        a.value * b.value,
        a.grad * bv + av * b.grad,
        a.hess * bv + av * b.hess + _sym_outer(a.grad, b.grad),
    )


def _check_denominator(value: torch.Tensor) -> None:
    if bool((value.abs() < DIV_FLOOR).any()):
        raise DivisionSingularityError(
            f"Denominator magnitude below floor {DIV_FLOOR:g}"
        )


def dt_reciprocal(a: DualTaylor) -> DualTaylor:
    _check_denominator(a.value)
    inv = 1.0 / a.value
    return _chain(a, inv, -inv * inv, 2.0 * inv * inv * inv)


def dt_div(a: Operand, b: Operand) -> DualTaylor:
    if not isinstance(b, DualTaylor):
        c = _as_tensor(b)
        _check_denominator(c)
        return dt_mul(a, 1.0 / c)
    return dt_mul(dt_reciprocal(b), a)


def _chain(
    a: DualTaylor,
    f0: torch.Tensor,
    f1: torch.Tensor,
    f2: torch.Tensor,
) -> DualTaylor:
    """Compose a univariate primitive with value f0, slope f1, curvature f2."""
    return DualTaylor(
        f0,
        f1[..., None] * a.grad,
        f2[..., None] * _outer(a.grad, a.grad) + f1[..., None] * a.hess,
    )


def _check_exp_bound(value: torch.Tensor) -> None:
    if bool((value.abs() > EXP_BOUND).any()):
        raise ExpOverflowError(f"Exponential argument exceeds {EXP_BOUND:g}")


def dt_tanh(a: DualTaylor) -> DualTaylor:
    t = torch.tanh(a.value)
    d1 = 1.0 - t * t
    return _chain(a, t, d1, -2.0 * t * d1)


def dt_sin(a: DualTaylor) -> DualTaylor:
    s, c = torch.sin(a.value), torch.cos(a.value)
    return _chain(a, s, c, -s)


def dt_cos(a: DualTaylor) -> DualTaylor:
    s, c = torch.sin(a.value), torch.cos(a.value)
    return _chain(a, c, -s, -c)


def dt_exp(a: DualTaylor) -> DualTaylor:
    if bool((a.value > EXP_BOUND).any()):
        raise ExpOverflowError(f"Exponential argument exceeds {EXP_BOUND:g}")
    e = torch.exp(a.value)
    return _chain(a, e, e, e)


def dt_sinh(a: DualTaylor) -> DualTaylor:
    _check_exp_bound(a.value)
    s, c = torch.sinh(a.value), torch.cosh(a.value)
    return _chain(a, s, c, s)


def dt_cosh(a: DualTaylor) -> DualTaylor:
    _check_exp_bound(a.value)
    s, c = torch.sinh(a.value), torch.cosh(a.value)
    return _chain(a, c, s, c)


def dt_affine(a: DualTaylor, weight: torch.Tensor, bias: torch.Tensor) -> DualTaylor:
    """
    Apply x @ weight + bias along the last batch axis.

    `a` has value (..., fan_in); weight is (fan_in, fan_out).
    """
    return DualTaylor(
        a.value @ weight + bias,
        torch.einsum("...id,io->...od", a.grad, weight),
        torch.einsum("...ih,io->...oh", a.hess, weight),
    )


def dt_stack(parts: Sequence[Operand], dim: int = -1) -> DualTaylor:
    """Stack DualTaylor values (and constants) along a new batch axis."""
    dual = next((p for p in parts if isinstance(p, DualTaylor)), None)
    if dual is None:
        raise TypeError("dt_stack needs at least one DualTaylor")
    lifted = [p if isinstance(p, DualTaylor) else DualTaylor.constant(p, dual.dim) for p in parts]
    shape = _batch_shape(*(p.value for p in lifted))
    lifted = [p.expand(shape) for p in lifted]
    axis = dim if dim >= 0 else len(shape) + 1 + dim
    return DualTaylor(
        torch.stack([p.value for p in lifted], dim=axis),
        torch.stack([p.grad for p in lifted], dim=axis),
        torch.stack([p.hess for p in lifted], dim=axis),
    )


class ParamTape:
    """
    Single-use reverse-mode tape over a flat parameter vector.

    The tape owns a fresh leaf copy of θ. One forward evaluation is
    recorded, then one backward sweep returns ∂output/∂θ for each
    requested scalar output.
    """

    def __init__(self, theta: torch.Tensor):
        self.leaf = theta.detach().clone().requires_grad_(True)
        self.adjoints: list[torch.Tensor] = []
        self._recorded = False
        self._swept = False

    def record(self, evaluate: Callable[[torch.Tensor], object]) -> object:
        """Run the forward evaluation against the tape's parameter leaf."""
        if self._recorded:
            raise RuntimeError("ParamTape records a single evaluation")
        self._recorded = True
        return evaluate(self.leaf)

    def backward(self, *outputs: torch.Tensor, step: Optional[int] = None) -> list[torch.Tensor]:
        """
        Sweep the recorded graph once per scalar output.

        Raises:
            NumericalBlowupError: If an output or gradient is non-finite
        """
        if self._swept:
            raise RuntimeError("ParamTape has already been swept")
        if not outputs:
            raise ValueError("backward needs at least one output")
        self._swept = True

        for k, out in enumerate(outputs):
            if not bool(torch.isfinite(out).all()):
                raise NumericalBlowupError(step, f"output {k} is {out.item()}")

        grads: list[torch.Tensor] = []
        for k, out in enumerate(outputs):
            if not out.requires_grad:
                grads.append(torch.zeros_like(self.leaf))
                continue
            (g,) = torch.autograd.grad(
                out,
                self.leaf,
                retain_graph=k < len(outputs) - 1,
                allow_unused=True,
            )
            g = torch.zeros_like(self.leaf) if g is None else g.detach()
            if not bool(torch.isfinite(g).all()):
                bad = int((~torch.isfinite(g)).nonzero()[0, 0])
                raise NumericalBlowupError(step, f"gradient of output {k} at parameter {bad}")
            grads.append(g)

        self.adjoints = grads
        return grads


def grad_wrt_params(
    loss_eval: Callable[[torch.Tensor], torch.Tensor],
    theta: torch.Tensor,
    step: Optional[int] = None,
) -> torch.Tensor:
    """
    Gradient of a scalar loss with respect to a flat parameter vector.

    Args:
        loss_eval: Maps the parameter vector to a scalar tensor. Any offset
            it closes over must be a plain constant.
        theta: Flat parameter vector
        step: Training step, carried by blow-up errors

    Returns:
        ∂loss/∂θ as a detached tensor
    """
    tape = ParamTape(theta)
    loss = tape.record(loss_eval)
    (grad,) = tape.backward(loss, step=step)
    return grad

