"""
Test Helpers
============

Runner and finite-difference oracles shared by the test_*.py scripts.
Test functions take no arguments and use plain asserts; `run_tests`
prints PASS/FAIL per function and a results banner.
"""

import traceback
from typing import Callable, Sequence

import torch

from ad_core import DTYPE


def run_tests(title: str, tests: Sequence[Callable[[], None]]) -> int:
    """Run test functions, print per-test status, return an exit code."""
    print(f"\nTesting {title}:\n")
    passed = 0
    failed = 0

    for test in tests:
        try:
            test()
        except Exception as e:
            print(f"  FAIL: {test.__name__}")
            print(f"         {type(e).__name__}: {e}")
            if not isinstance(e, AssertionError):
                traceback.print_exc()
            failed += 1
        else:
            print(f"  PASS: {test.__name__}")
            passed += 1

    print("\n" + "-" * 70)
    print(f"  Results: {passed} passed, {failed} failed")
    print("-" * 70)

    if failed == 0:
        print("\n  ALL TESTS PASSED")
        return 0
    print(f"\n  {failed} TEST(S) FAILED")
    return 1


def rel_error(actual: torch.Tensor, expected: torch.Tensor) -> float:
    """‖actual - expected‖ / max(‖expected‖, 1)."""
    actual = torch.as_tensor(actual, dtype=DTYPE)
    expected = torch.as_tensor(expected, dtype=DTYPE)
    scale = max(float(torch.linalg.norm(expected)), 1.0)
    return float(torch.linalg.norm(actual - expected)) / scale


def central_diff(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, i: int, h: float = 1e-5) -> torch.Tensor:
    """∂f/∂x_i by central differences; x has the coordinate axis last."""
    plus, minus = x.clone(), x.clone()
    plus[..., i] += h
    minus[..., i] -= h
    return (f(plus) - f(minus)) / (2.0 * h)


def fd_param_grad(loss: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of a scalar loss over a flat vector."""
    grad = torch.zeros_like(theta)
    for i in range(theta.shape[0]):
        plus, minus = theta.clone(), theta.clone()
        plus[i] += h
        minus[i] -= h
        grad[i] = (float(loss(plus)) - float(loss(minus))) / (2.0 * h)
    return grad


def random_points(n: int, dim: int = 2, seed: int = 0, low: float = 0.0, high: float = 1.0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return low + (high - low) * torch.rand(n, dim, generator=gen, dtype=DTYPE)
