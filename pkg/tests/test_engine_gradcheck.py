import numpy as np
import pytest

from shapebias.engine import (
    BatchNorm2dSpec,
    Conv2dSpec,
    DenseSpec,
    FlattenSpec,
    GlobalAvgPoolSpec,
    MaxPool2dSpec,
    ReluSpec,
    build_layer,
    grad_check,
    kink_margins,
)

MARGIN = 1e-3  # keep finite differences away from ReLU kinks / argmax ties


def build_stack(specs, seed):
    rng = np.random.default_rng(seed)
    return [build_layer(s, rng, precision="float64") for s in specs]


def draw_instance(specs, batch, shape, n_classes, seed):
    """Draw (layers, x, labels) redrawn until kink margins are safe."""
    for attempt in range(200):
        layers = build_stack(specs, seed * 1000 + attempt)
        rng = np.random.default_rng(seed * 1000 + attempt + 1)
        x = rng.standard_normal((batch, *shape))
        margins = kink_margins(layers, x)
        if margins["relu_margin"] > MARGIN and margins["pool_gap"] > MARGIN:
            labels = rng.integers(0, n_classes, size=batch)
            return layers, x, labels
    raise RuntimeError("no kink-safe instance found")


def test_single_dense_layer():
    specs = [DenseSpec(6, 4)]
    layers, x, labels = draw_instance(specs, 3, (6,), 4, seed=1)
    report = grad_check(layers, x, labels, tolerance=1e-6, max_entries_per_param=1000)
    assert report.passed, report.per_param
    assert report.max_rel_error <= 1e-6


def test_conv_relu_pool_dense_softmax_stack():
    specs = [
        Conv2dSpec(2, 4, kernel=3, stride=1, pad=1),
        ReluSpec(),
        MaxPool2dSpec(window=2, stride=2),
        FlattenSpec(),
        DenseSpec(4 * 4 * 4, 5),
    ]
    layers, x, labels = draw_instance(specs, 2, (2, 8, 8), 5, seed=2)
    report = grad_check(layers, x, labels, tolerance=1e-4, max_entries_per_param=1000)
    assert report.passed, report.per_param


def test_batchnorm_train_mode():
    specs = [
        Conv2dSpec(1, 3, kernel=3, stride=1, pad=1),
        BatchNorm2dSpec(3),
        ReluSpec(),
        GlobalAvgPoolSpec(),
        DenseSpec(3, 4),
    ]
    layers, x, labels = draw_instance(specs, 4, (1, 6, 6), 4, seed=3)
    report = grad_check(layers, x, labels, tolerance=1e-4, max_entries_per_param=1000)
    assert report.passed, report.per_param


def test_requires_64bit():
    specs = [DenseSpec(3, 2)]
    layers = build_stack(specs, 0)
    x = np.zeros((2, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        grad_check(layers, x, np.array([0, 1]))


def test_failure_is_report_not_exception():
    specs = [DenseSpec(4, 3)]
    layers, x, labels = draw_instance(specs, 2, (4,), 3, seed=4)
    layers[0].params["w"][0, 0] += 10.0  # corrupt after caches are irrelevant
    # recompute with a deliberately broken backward: scale gradient
    orig_backward = layers[0].backward

    def bad_backward(dy):
        dx = orig_backward(dy)
        layers[0].grads["w"] *= 2.0
        return dx

    layers[0].backward = bad_backward
    report = grad_check(layers, x, labels, tolerance=1e-6, max_entries_per_param=1000)
    assert not report.passed
    assert report.failures()
