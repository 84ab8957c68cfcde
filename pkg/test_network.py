#!/usr/bin/env python3
"""
MLP Backbone Tests
==================

Parameter layout, deterministic initialization, agreement of the two
forward paths and checkpoint files.
Run with: python test_network.py
"""

import sys
import tempfile
from pathlib import Path

import torch

from ad_core import DTYPE
from network import (
    MlpSpec,
    ParamVector,
    build_layout,
    forward,
    forward_plain,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from testing_utils import random_points, run_tests


def test_default_spec_size():
    spec = MlpSpec()
    assert spec.widths == [2, 64, 64, 64, 64, 1]
    assert spec.n_params == 2 * 64 + 64 + 3 * (64 * 64 + 64) + 64 + 1


def test_layout_is_contiguous():
    spec = MlpSpec(input_dim=2, output_dim=3, hidden_layers=2, hidden_width=5)
    layout = build_layout(spec)
    assert len(layout) == 3
    cursor = 0
    for block in layout:
        assert block.weight.start == cursor
        fan_in, fan_out = block.weight_shape
        assert block.weight.stop - block.weight.start == fan_in * fan_out
        assert block.bias.start == block.weight.stop
        cursor = block.bias.stop
    assert cursor == spec.n_params


def test_invalid_spec_rejected():
    for kwargs in ({"hidden_layers": 0}, {"hidden_width": 0}, {"activation": "relu"}):
        try:
            MlpSpec(**kwargs)
        except ValueError:
            continue
        raise AssertionError(f"MlpSpec({kwargs}) should fail")


def test_param_vector_length_checked():
    spec = MlpSpec(hidden_layers=1, hidden_width=4)
    try:
        ParamVector(torch.zeros(spec.n_params + 1, dtype=DTYPE), spec)
    except ValueError:
        return
    raise AssertionError("expected ValueError for wrong length")


def test_init_is_deterministic():
    spec = MlpSpec(hidden_layers=2, hidden_width=16)
    a, b, c = init_params(spec, 3), init_params(spec, 3), init_params(spec, 4)
    assert torch.equal(a.data, b.data)
    assert not torch.equal(a.data, c.data)
    for k in range(len(a.layout)):
        assert float(a.bias(k).abs().max()) == 0.0
        fan_in, fan_out = a.layout[k].weight_shape
        bound = (6.0 / (fan_in + fan_out)) ** 0.5
        # Uniform on [-bound, bound]
        assert 0.5 * bound < float(a.weight(k).abs().max()) <= bound


def test_forward_paths_agree_exactly():
    spec = MlpSpec(output_dim=3, hidden_layers=3, hidden_width=12)
    theta = init_params(spec, 1)
    pts = random_points(25, seed=2)
    dual = forward(theta, pts)
    assert dual.value.shape == (25, 3)
    assert dual.grad.shape == (25, 3, 2)
    assert dual.hess.shape == (25, 3, 3)
    assert torch.equal(dual.value, forward_plain(theta, pts))


def test_checkpoint_restores_parameters():
    spec = MlpSpec(hidden_layers=2, hidden_width=7)
    theta = init_params(spec, 9)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "seed_9.ckpt"
        save_checkpoint(path, theta)
        first_line = path.read_bytes().split(b"\n", 1)[0].decode("ascii")
        assert first_line == spec.header()
        restored = load_checkpoint(path)
    assert restored.spec == spec
    assert torch.equal(restored.data, theta.data)


def test_checkpoint_rejects_foreign_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bogus.ckpt"
        path.write_bytes(b"not a checkpoint\n\x00\x00")
        try:
            load_checkpoint(path)
        except ValueError:
            return
    raise AssertionError("expected ValueError for a foreign file")


def test_checkpoint_rejects_truncated_payload():
    spec = MlpSpec(hidden_layers=1, hidden_width=3)
    theta = init_params(spec, 0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "short.ckpt"
        save_checkpoint(path, theta)
        path.write_bytes(path.read_bytes()[:-8])
        try:
            load_checkpoint(path)
        except ValueError:
            return
    raise AssertionError("expected ValueError for a truncated payload")


def main():
    return run_tests(
        "MLP backbone",
        [
            test_default_spec_size,
            test_layout_is_contiguous,
            test_invalid_spec_rejected,
            test_param_vector_length_checked,
            test_init_is_deterministic,
            test_forward_paths_agree_exactly,
            test_checkpoint_restores_parameters,
            test_checkpoint_rejects_foreign_file,
            test_checkpoint_rejects_truncated_payload,
        ],
    )


if __name__ == "__main__":
    sys.exit(main())
