"""Analytic-vs-numeric gradient verification for layer stacks.

Runs only at 64-bit. Central finite differences use h=1e-5, sized for
unit-scale inputs; sampled parameter entries keep the check tractable on
full models. Because finite differences misbehave when a perturbation
crosses a ReLU kink or flips a pooling argmax, :func:`kink_margins` reports
how close an instance sits to those discontinuities so callers can redraw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, _im2col, softmax_cross_entropy, softmax_cross_entropy_backward
from .tensor import Tensor


def stack_forward(layers: list[Layer], x: Tensor, train: bool = True) -> Tensor:
    h = x
    for layer in layers:
        h = layer.forward(h, train)
    return h


def stack_loss(layers: list[Layer], x: Tensor, labels: np.ndarray, train: bool = True):
    logits = stack_forward(layers, x, train)
    return softmax_cross_entropy(logits, labels)


def stack_backward(layers: list[Layer], probs: Tensor, labels: np.ndarray) -> Tensor:
    d = softmax_cross_entropy_backward(probs, labels)
    for layer in reversed(layers):
        d = layer.backward(d)
    return d


def kink_margins(layers: list[Layer], x: Tensor) -> dict[str, float]:
    """Distance of the forward pass from ReLU kinks and pooling argmax ties."""
    relu_margin = np.inf
    pool_gap = np.inf
    h = x
    for layer in layers:
        kind = layer.spec.kind
        if kind == "relu":
            # exact zeros come from upstream dead units; h=1e-5 cannot revive them
            nonzero = np.abs(h[h != 0])
            if nonzero.size:
                relu_margin = min(relu_margin, float(nonzero.min()))
        elif kind == "maxpool2d" and layer.spec.window > 1:
            s = layer.spec
            n, c, hh, ww = h.shape
            pad = s.pad
            hn = np.ascontiguousarray(h.transpose(0, 2, 3, 1))
            hp = (
                np.pad(hn, ((0, 0), (pad, pad), (pad, pad), (0, 0)), constant_values=-np.inf)
                if pad
                else hn
            )
            oh = (hh + 2 * pad - s.window) // s.stride + 1
            ow = (ww + 2 * pad - s.window) // s.stride + 1
            cols = _im2col(hp, s.window, s.stride, oh, ow).reshape(n, oh, ow, s.window**2, c)
            top2 = np.partition(cols, -2, axis=3)[:, :, :, -2:, :]
            gaps = top2[:, :, :, 1, :] - top2[:, :, :, 0, :]
            # exact ties are dead-unit zeros (harmless); near-ties are the hazard
            risky = gaps[np.isfinite(gaps) & (gaps > 0)]
            if risky.size:
                pool_gap = min(pool_gap, float(risky.min()))
        h = layer.forward(h, train=True)
    return {"relu_margin": relu_margin, "pool_gap": pool_gap}


@dataclass
class GradCheckReport:
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)
    max_rel_error: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def failures(self) -> list[str]:
        return [name for name, err in self.per_param.items() if err > self.tolerance]


def grad_check(
    layers: list[Layer],
    x: Tensor,
    labels: np.ndarray,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries_per_param: int = 8,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central finite differences.

    Failures are report entries, never exceptions. Up to
    ``max_entries_per_param`` entries per tensor are sampled (seeded) so full
    models stay tractable; small tensors are checked exhaustively.
    """
    if x.dtype != np.float64:
        raise ValueError("grad_check requires 64-bit inputs and parameters")
    for layer in layers:
        for arr in layer.params.values():
            if arr.dtype != np.float64:
                raise ValueError("grad_check requires 64-bit inputs and parameters")

    loss, probs = stack_loss(layers, x, labels, train=True)
    stack_backward(layers, probs, labels)
    analytic = {
        f"{i}:{layer.spec.kind}.{name}": layer.grads[name].copy()
        for i, layer in enumerate(layers)
        for name in layer.params
    }

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for i, layer in enumerate(layers):
        for name, w in layer.params.items():
            key = f"{i}:{layer.spec.kind}.{name}"
            grad = analytic[key]
            n_entries = w.size
            if n_entries <= max_entries_per_param:
                flat_idx = np.arange(n_entries)
            else:
                flat_idx = rng.choice(n_entries, size=max_entries_per_param, replace=False)
            worst = 0.0
            flat = w.reshape(-1)
            for j in flat_idx:
                orig = flat[j]
                flat[j] = orig + h
                lp, _ = stack_loss(layers, x, labels, train=True)
                flat[j] = orig - h
                lm, _ = stack_loss(layers, x, labels, train=True)
                flat[j] = orig
                numeric = (lp - lm) / (2.0 * h)
                a = grad.reshape(-1)[j]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-5)
                worst = max(worst, rel)
            report.per_param[key] = worst
            report.max_rel_error = max(report.max_rel_error, worst)
    return report
