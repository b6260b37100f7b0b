"""Desk-scale model families, training loops, and activation capture.

Three families share one structural plan format:

* ``mini_alexnet``: three conv/pool stages plus two hidden dense layers.
* ``mini_resnet``: stem + three residual stages with batchnorm + global
  average pool (channels 32*w -> 64*w -> 128*w, two blocks per stage).
* ``mini_bagnet``: the residual family with 1x1-dominated downstream convs
  so the pre-pool receptive field stays within the declared patch bound;
  per-location class logits are spatially averaged.

Training normalizes pixels by the training subset's mean/std, applies the
configured augmentation to train items only, and reports the maximum
validation accuracy over the training period as the headline metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPipeline, apply_pipeline, rotate_exact
from .engine import (
    BatchNorm2dSpec,
    Conv2dSpec,
    DenseSpec,
    FlattenSpec,
    GlobalAvgPoolSpec,
    LrSchedule,
    MaxPool2dSpec,
    NumericalFault,
    OptimizerState,
    ReluSpec,
    build_layer,
    optimizer_step,
    relu,
    relu_backward,
    schedule_lr,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)
from .stimuli import SplitPlan, StimulusSet

FAMILIES = ("mini_alexnet", "mini_resnet", "mini_bagnet")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    class_count: int
    input_extent: int = 64
    width: float = 1.0
    patch_bound: int = 17  # mini_bagnet only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.class_count < 2:
            raise ValueError("class count must be >= 2")
        if self.input_extent < 16 or self.input_extent % 16:
            raise ValueError("input extent must be a positive multiple of 16")
        if self.width <= 0:
            raise ValueError("width multiplier must be positive")

    def channels(self) -> tuple[int, int, int]:
        return tuple(max(4, round(c * self.width)) for c in (32, 64, 128))


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"  # adam | sgd_momentum
    learning_rate: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 90
    batch_size: int = 64
    schedule: LrSchedule | None = None
    augment: AugmentPipeline | None = None
    seed: int = 0
    precision: str = "float32"
    restore_best: bool = False  # rewind to the best-validation epoch at the end

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")


# ---------------------------------------------------------------------------
# structural plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockPlan:
    """Residual block: conv(ka, stride)-bn-relu-conv(kb)-bn plus shortcut."""

    in_ch: int
    out_ch: int
    stride: int
    kernel_a: int
    kernel_b: int


def _family_plan(spec: ModelSpec):
    """Returns (nodes, taps): nodes are (name, layer-or-block specs), taps map
    tap names to the node after which the activation is captured."""
    c1, c2, c3 = spec.channels()
    e = spec.input_extent
    if spec.family == "mini_alexnet":
        fc1 = max(8, round(256 * spec.width))
        fc2 = max(8, round(128 * spec.width))
        flat_extent = e // 16
        nodes = [
            ("conv1", [Conv2dSpec(3, c1, 5, 2, 2), ReluSpec()]),
            ("pool1", [MaxPool2dSpec(2, 2)]),
            ("conv2", [Conv2dSpec(c1, c2, 3, 1, 1), ReluSpec()]),
            ("pool2", [MaxPool2dSpec(2, 2)]),
            ("conv3", [Conv2dSpec(c2, c3, 3, 1, 1), ReluSpec()]),
            ("pool3", [MaxPool2dSpec(2, 2)]),
            ("flatten", [FlattenSpec()]),
            ("fc1", [DenseSpec(c3 * flat_extent * flat_extent, fc1), ReluSpec()]),
            ("fc2", [DenseSpec(fc1, fc2), ReluSpec()]),
            ("logits", [DenseSpec(fc2, spec.class_count)]),
        ]
        taps = {
            "conv1": "conv1",
            "conv2": "conv2",
            "conv3": "conv3",
            "last_conv": "pool3",
            "fc1": "fc1",
            "fc2": "fc2",
            "logits": "logits",
        }
        return nodes, taps
    if spec.family == "mini_resnet":
        nodes = [
            ("stem", [Conv2dSpec(3, c1, 3, 2, 1), BatchNorm2dSpec(c1), ReluSpec()]),
            ("stem_pool", [MaxPool2dSpec(2, 2)]),
            ("stage1a", BlockPlan(c1, c1, 1, 3, 3)),
            ("stage1b", BlockPlan(c1, c1, 1, 3, 3)),
            ("stage2a", BlockPlan(c1, c2, 2, 3, 3)),
            ("stage2b", BlockPlan(c2, c2, 1, 3, 3)),
            ("stage3a", BlockPlan(c2, c3, 1, 3, 3)),
            ("stage3b", BlockPlan(c3, c3, 1, 3, 3)),
            ("post_pool", [GlobalAvgPoolSpec()]),
            ("logits", [DenseSpec(c3, spec.class_count)]),
        ]
        taps = {
            "stem": "stem",
            "stage1": "stage1b",
            "stage2": "stage2b",
            "stage3": "stage3b",
            "last_conv": "stage3b",
            "pre_pool": "stage3b",
            "post_pool": "post_pool",
            "logits": "logits",
        }
        return nodes, taps
    # mini_bagnet: one 3x3 residual conv after a stride-4 stem, 1x1 convs
    # downstream, so the pre-pool receptive field stays within the patch bound
    nodes = [
        ("stem", [Conv2dSpec(3, c1, 5, 4, 2), BatchNorm2dSpec(c1), ReluSpec()]),
        ("stage1a", BlockPlan(c1, c1, 1, 3, 1)),
        ("stage1b", BlockPlan(c1, c1, 1, 1, 1)),
        ("stage2a", BlockPlan(c1, c2, 2, 1, 1)),
        ("stage2b", BlockPlan(c2, c2, 1, 1, 1)),
        ("stage3a", BlockPlan(c2, c3, 1, 1, 1)),
        ("stage3b", BlockPlan(c3, c3, 1, 1, 1)),
        ("patch_logits", [Conv2dSpec(c3, spec.class_count, 1, 1, 0)]),
        ("logits", [GlobalAvgPoolSpec()]),
    ]
    taps = {
        "stem": "stem",
        "stage1": "stage1b",
        "stage2": "stage2b",
        "stage3": "stage3b",
        "last_conv": "stage3b",
        "pre_pool": "stage3b",
        "patch_logits": "patch_logits",
        "post_pool": "logits",
        "logits": "logits",
    }
    return nodes, taps


def receptive_field(spec: ModelSpec) -> dict[str, dict[str, float]]:
    """Analytic receptive-field recursion per tap: {rf, jump, start}.

    Dense/flatten/global-pool taps are global: rf equals the input extent.
    """
    nodes, taps = _family_plan(spec)
    rf, jump, start = 1, 1, 0.5
    is_global = False
    after: dict[str, dict[str, float]] = {}

    def advance(k, s, p):
        nonlocal rf, jump, start
        rf = rf + (k - 1) * jump
        start = start + ((k - 1) / 2 - p) * jump
        jump = jump * s

    for name, node in nodes:
        if isinstance(node, BlockPlan):
            advance(node.kernel_a, node.stride, node.kernel_a // 2)
            advance(node.kernel_b, 1, node.kernel_b // 2)
        else:
            for sub in node:
                if sub.kind == "conv2d":
                    advance(sub.kernel, sub.stride, sub.pad)
                elif sub.kind == "maxpool2d":
                    advance(sub.window, sub.stride, sub.pad)
                elif sub.kind in ("dense", "flatten", "global_avg_pool"):
                    is_global = True
        extent = spec.input_extent if is_global else min(rf, spec.input_extent)
        after[name] = {"rf": extent, "jump": jump, "start": start}
    result = {tap: after[node_name] for tap, node_name in taps.items()}
    if spec.family == "mini_bagnet":
        pre_pool_rf = result["pre_pool"]["rf"]
        if pre_pool_rf > spec.patch_bound:
            raise ValueError(
                f"mini_bagnet pre-pool receptive field {pre_pool_rf} exceeds patch bound {spec.patch_bound}"
            )
    return result


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

class SequentialNode:
    def __init__(self, specs, rng, precision):
        self.layers = [build_layer(s, rng, precision) for s in specs]

    def forward(self, x, train):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_layers(self):
        for i, layer in enumerate(self.layers):
            yield str(i), layer


class ResidualNode:
    """conv-bn-relu-conv-bn plus (projected) shortcut, relu after the sum."""

    def __init__(self, plan: BlockPlan, rng, precision):
        self.plan = plan
        p_a, p_b = plan.kernel_a // 2, plan.kernel_b // 2
        self.conv_a = build_layer(Conv2dSpec(plan.in_ch, plan.out_ch, plan.kernel_a, plan.stride, p_a), rng, precision)
        self.bn_a = build_layer(BatchNorm2dSpec(plan.out_ch), rng, precision)
        self.relu_a = build_layer(ReluSpec(), rng, precision)
        self.conv_b = build_layer(Conv2dSpec(plan.out_ch, plan.out_ch, plan.kernel_b, 1, p_b), rng, precision)
        self.bn_b = build_layer(BatchNorm2dSpec(plan.out_ch), rng, precision)
        if plan.stride != 1 or plan.in_ch != plan.out_ch:
            self.proj = build_layer(Conv2dSpec(plan.in_ch, plan.out_ch, 1, plan.stride, 0), rng, precision)
            self.proj_bn = build_layer(BatchNorm2dSpec(plan.out_ch), rng, precision)
        else:
            self.proj = None
            self.proj_bn = None
        self._sum_cache = None

    def forward(self, x, train):
        h = self.conv_a.forward(x, train)
        h = self.bn_a.forward(h, train)
        h = self.relu_a.forward(h, train)
        h = self.conv_b.forward(h, train)
        h = self.bn_b.forward(h, train)
        if self.proj is not None:
            s = self.proj_bn.forward(self.proj.forward(x, train), train)
        else:
            s = x
        out, self._sum_cache = relu(h + s)
        return out

    def backward(self, dy):
        dsum = relu_backward(dy, self._sum_cache)
        dh = self.bn_b.backward(dsum)
        dh = self.conv_b.backward(dh)
        dh = self.relu_a.backward(dh)
        dh = self.bn_a.backward(dh)
        dx = self.conv_a.backward(dh)
        if self.proj is not None:
            dx = dx + self.proj.backward(self.proj_bn.backward(dsum))
        else:
            dx = dx + dsum
        return dx

    def named_layers(self):
        yield "conv_a", self.conv_a
        yield "bn_a", self.bn_a
        yield "conv_b", self.conv_b
        yield "bn_b", self.bn_b
        if self.proj is not None:
            yield "proj", self.proj
            yield "proj_bn", self.proj_bn


class Model:
    """Named nodes in forward order plus tap bookkeeping."""

    def __init__(self, spec: ModelSpec, nodes, taps):
        self.spec = spec
        self.nodes = nodes  # list of (name, node)
        self.taps = taps  # tap name -> node name
        self.normalization: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, x, train=False, capture: set[str] | None = None):
        """Forward NCHW input; optionally capture activations after the
        nodes that back the requested taps."""
        wanted = {}
        if capture:
            unknown = set(capture) - set(self.taps)
            if unknown:
                raise KeyError(f"unknown tap name(s) {sorted(unknown)}")
            wanted = {self.taps[t]: t for t in capture}
        traces = {}
        h = x
        for name, node in self.nodes:
            h = node.forward(h, train)
            if name in wanted:
                traces[wanted[name]] = h
        return (h, traces) if capture is not None else (h, {})

    def backward(self, dlogits):
        d = dlogits
        for _, node in reversed(self.nodes):
            d = node.backward(d)
        return d

    def named_layers(self):
        for node_name, node in self.nodes:
            for sub_name, layer in node.named_layers():
                yield f"{node_name}/{sub_name}", layer

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {
            f"{name}.{key}": arr
            for name, layer in self.named_layers()
            for key, arr in layer.params.items()
        }

    def grad_arrays(self) -> dict[str, np.ndarray]:
        return {
            f"{name}.{key}": arr
            for name, layer in self.named_layers()
            for key, arr in layer.grads.items()
        }

    def state_tensors(self) -> dict[str, np.ndarray]:
        """All persistent tensors: parameters plus batchnorm running stats."""
        out = dict(self.param_arrays())
        for name, layer in self.named_layers():
            for key, arr in layer.state.items():
                out[f"{name}.state.{key}"] = arr
        if self.normalization is not None:
            out["normalization.mean"] = self.normalization[0]
            out["normalization.std"] = self.normalization[1]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, layer in self.named_layers():
            for key in layer.params:
                layer.params[key][...] = tensors[f"{name}.{key}"]
            for key in layer.state:
                layer.state[key][...] = tensors[f"{name}.state.{key}"]
        if "normalization.mean" in tensors:
            self.normalization = (tensors["normalization.mean"], tensors["normalization.std"])


def build_model(spec: ModelSpec, seed: int, precision: str = "float32") -> Model:
    node_plans, taps = _family_plan(spec)
    receptive_field(spec)  # validates the bagnet patch bound
    nodes = []
    for i, (name, plan) in enumerate(node_plans):
        rng = np.random.default_rng([seed, i])
        if isinstance(plan, BlockPlan):
            nodes.append((name, ResidualNode(plan, rng, precision)))
        else:
            nodes.append((name, SequentialNode(plan, rng, precision)))
    return Model(spec, nodes, taps)


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------

def _labels(items, attribute: str) -> np.ndarray:
    if attribute == "shape":
        return np.array([it.shape_label for it in items], dtype=np.int64)
    if attribute == "texture":
        return np.array([it.texture_label for it in items], dtype=np.int64)
    raise ValueError(f"unknown label attribute {attribute!r}")


def _to_nchw(images: np.ndarray, normalization, dtype) -> np.ndarray:
    x = images.astype(np.float64)
    if normalization is not None:
        mean, std = normalization
        x = (x - mean) / std
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2)).astype(dtype)


def _channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = images.mean(axis=(0, 1, 2))
    std = np.maximum(images.std(axis=(0, 1, 2)), 1e-3)
    return mean.astype(np.float64), std.astype(np.float64)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainResult:
    metrics: list[EpochMetrics] = field(default_factory=list)

    @property
    def max_val_acc(self) -> float:
        """Headline: maximum validation accuracy over the training period."""
        return max(m.val_acc for m in self.metrics)

    @property
    def best_epoch(self) -> int:
        return max(self.metrics, key=lambda m: m.val_acc).epoch


def _eval_logits(model: Model, x_all: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = []
    for i in range(0, len(x_all), batch_size):
        logits, _ = model.forward(x_all[i : i + batch_size], train=False, capture=None)
        outs.append(logits)
    return np.concatenate(outs, axis=0)


def train_model(
    model: Model,
    dataset: StimulusSet,
    split: SplitPlan,
    task: str,
    config: TrainConfig,
) -> TrainResult:
    """Minibatch training on the split's train ids; validation per epoch."""
    if not split.train_ids or not split.val_ids:
        raise ValueError("empty split")
    table = dataset.by_id()
    train_items = [table[i] for i in split.train_ids]
    val_items = [table[i] for i in split.val_ids]
    train_images = np.stack([it.image for it in train_items]).astype(np.float32)
    val_images = np.stack([it.image for it in val_items]).astype(np.float32)
    y_train = _labels(train_items, task)
    y_val = _labels(val_items, task)
    dtype = np.float32 if config.precision == "float32" else np.float64

    model.normalization = _channel_stats(train_images)
    x_val = _to_nchw(val_images, model.normalization, dtype)

    params = model.param_arrays()
    state = OptimizerState(
        kind=config.optimizer,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    schedule = config.schedule or LrSchedule("constant", base_rate=config.learning_rate)

    n = len(train_items)
    x_train = None
    if config.augment is None:
        x_train = _to_nchw(train_images, model.normalization, dtype)
    result = TrainResult()
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 101, epoch]).permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        seen = 0
        lr = schedule_lr(schedule, step)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs >= 2; drop the straggler
            if config.augment is None:
                x = x_train[idx]
            else:
                batch = np.stack(
                    [
                        apply_pipeline(config.augment, train_images[i], int(epoch * n + i))
                        for i in idx
                    ]
                )
                x = _to_nchw(batch, model.normalization, dtype)
            y = y_train[idx]
            logits, _ = model.forward(x, train=True, capture=None)
            loss, probs = softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise NumericalFault(
                    f"non-finite training loss at epoch {epoch} step {step} (lr={lr:g})"
                )
            model.backward(softmax_cross_entropy_backward(probs, y).astype(dtype))
            lr = schedule_lr(schedule, step)
            optimizer_step(params, model.grad_arrays(), state, rate=lr)
            step += 1
            epoch_loss += loss * len(idx)
            epoch_correct += int((probs.argmax(axis=1) == y).sum())
            seen += len(idx)
        val_logits = _eval_logits(model, x_val)
        val_loss, val_probs = softmax_cross_entropy(val_logits.astype(np.float64), y_val)
        val_acc = float((val_probs.argmax(axis=1) == y_val).mean())
        result.metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=epoch_loss / max(seen, 1),
                train_acc=epoch_correct / max(seen, 1),
                val_loss=val_loss,
                val_acc=val_acc,
                lr=lr,
            )
        )
        if config.restore_best and val_acc >= result.max_val_acc:
            best_state = {k: v.copy() for k, v in model.state_tensors().items()}
    if config.restore_best:
        model.load_state_tensors(best_state)
    return result


def evaluate_accuracy(model: Model, items, attribute: str):
    """Argmax predictions (ties break to the lowest class index) plus the
    per-item record table consumed by bias scoring and the stats module."""
    items = list(items)
    if not items:
        raise ValueError("no items to evaluate")
    images = np.stack([it.image for it in items]).astype(np.float32)
    x = _to_nchw(images, model.normalization, np.float32)
    logits = _eval_logits(model, x)
    n_classes = logits.shape[1]
    labels = _labels(items, attribute)
    if labels.max() >= n_classes:
        raise ValueError(
            f"label {labels.max()} out of range for {n_classes}-way model output"
        )
    predicted = logits.argmax(axis=1)
    records = [
        {
            "id": it.id,
            "predicted": int(p),
            "shape_label": int(it.shape_label),
            "texture_label": int(it.texture_label),
            "label": int(y),
            "correct": bool(p == y),
        }
        for it, p, y in zip(items, predicted, labels)
    ]
    accuracy = float((predicted == labels).mean())
    return accuracy, records


def predict_probabilities(model: Model, items, batch_size: int = 256) -> np.ndarray:
    """Class probabilities per item (softmax over the model's logits)."""
    images = np.stack([it.image for it in items]).astype(np.float32)
    x = _to_nchw(images, model.normalization, np.float32)
    logits = _eval_logits(model, x, batch_size)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward_with_activations(model: Model, images: np.ndarray, tap_names) -> tuple[np.ndarray, dict]:
    """Inference-mode pass capturing post-nonlinearity activations per tap."""
    x = _to_nchw(images.astype(np.float32), model.normalization, np.float32)
    logits, traces = model.forward(x, train=False, capture=set(tap_names))
    return logits, traces


# ---------------------------------------------------------------------------
# model persistence: tensor container plus a sidecar spec file
# ---------------------------------------------------------------------------

def save_model(path, model: Model) -> None:
    import json
    from pathlib import Path

    from .engine import save_checkpoint

    save_checkpoint(path, model.state_tensors())
    sidecar = {
        "family": model.spec.family,
        "class_count": model.spec.class_count,
        "input_extent": model.spec.input_extent,
        "width": model.spec.width,
        "patch_bound": model.spec.patch_bound,
    }
    Path(str(path) + ".spec.json").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def load_model(path) -> Model:
    import json
    from pathlib import Path

    from .engine import load_checkpoint

    sidecar = json.loads(Path(str(path) + ".spec.json").read_text(encoding="utf-8"))
    spec = ModelSpec(**sidecar)
    tensors = load_checkpoint(path)
    param_key = next(k for k in tensors if not k.startswith("normalization"))
    precision = "float64" if tensors[param_key].dtype == np.float64 else "float32"
    model = build_model(spec, seed=0, precision=precision)
    model.load_state_tensors(tensors)
    return model


# ---------------------------------------------------------------------------
# rotation pretext
# ---------------------------------------------------------------------------

def train_rotation_pretext(
    spec: ModelSpec,
    images: np.ndarray,
    config: TrainConfig,
    val_fraction: float = 0.2,
) -> tuple[Model, TrainResult]:
    """4-way rotation classification over {0, 90, 180, 270} degrees applied
    uniformly per item per epoch; returns the trained trunk (head included,
    discarded by probes)."""
    if images.shape[1] != images.shape[2]:
        raise ValueError("rotation pretext requires square images")
    head_spec = ModelSpec(
        family=spec.family,
        class_count=4,
        input_extent=spec.input_extent,
        width=spec.width,
        patch_bound=spec.patch_bound,
    )
    model = build_model(head_spec, config.seed, config.precision)
    n = len(images)
    rng = np.random.default_rng([config.seed, 7])
    order = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    model.normalization = _channel_stats(images[train_idx])
    dtype = np.float32 if config.precision == "float32" else np.float64

    val_rot = np.random.default_rng([config.seed, 8]).integers(0, 4, size=n_val)
    x_val = np.stack([rotate_exact(images[i], int(k)) for i, k in zip(val_idx, val_rot)])
    x_val = _to_nchw(x_val, model.normalization, dtype)

    params = model.param_arrays()
    state = OptimizerState(
        kind=config.optimizer,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    schedule = config.schedule or LrSchedule("constant", base_rate=config.learning_rate)
    result = TrainResult()
    step = 0
    for epoch in range(config.epochs):
        ep_rng = np.random.default_rng([config.seed, 9, epoch])
        order = ep_rng.permutation(len(train_idx))
        rotations = ep_rng.integers(0, 4, size=len(train_idx))
        epoch_loss, epoch_correct, seen = 0.0, 0, 0
        lr = schedule_lr(schedule, step)
        for lo in range(0, len(train_idx), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            if len(sel) < 2:
                continue
            batch = np.stack(
                [rotate_exact(images[train_idx[i]], int(rotations[i])) for i in sel]
            )
            y = rotations[sel].astype(np.int64)
            x = _to_nchw(batch, model.normalization, dtype)
            logits, _ = model.forward(x, train=True, capture=None)
            loss, probs = softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise NumericalFault(f"non-finite rotation loss at epoch {epoch}")
            model.backward(softmax_cross_entropy_backward(probs, y).astype(dtype))
            lr = schedule_lr(schedule, step)
            optimizer_step(params, model.grad_arrays(), state, rate=lr)
            step += 1
            epoch_loss += loss * len(sel)
            epoch_correct += int((probs.argmax(axis=1) == y).sum())
            seen += len(sel)
        val_logits = _eval_logits(model, x_val)
        val_loss, val_probs = softmax_cross_entropy(val_logits.astype(np.float64), val_rot)
        result.metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=epoch_loss / max(seen, 1),
                train_acc=epoch_correct / max(seen, 1),
                val_loss=val_loss,
                val_acc=float((val_probs.argmax(axis=1) == val_rot).mean()),
                lr=lr,
            )
        )
    return model, result
