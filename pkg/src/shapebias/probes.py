"""How much shape/texture is decodable from frozen activations.

Linear probes are multinomial logistic classifiers trained on extracted
features with a weight-decay grid search per split; the headline number is
the maximum validation accuracy over the training period, averaged across
splits. The kNN probe categorizes each retrieved neighbour as shape match,
texture match, both, or other, excluding neighbours that share a content or
style source with the query.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (
    LrSchedule,
    OptimizerState,
    optimizer_step,
    schedule_lr,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)
from .models import Model, forward_with_activations
from .stimuli import SplitPlan, StimulusSet, make_split

WEIGHT_DECAY_GRID = (1e-3, 1e-4, 1e-5, 1e-6)


@dataclass(frozen=True)
class ProbeConfig:
    tap: str
    task: str  # shape | texture
    kind: str = "linear"  # linear | knn
    k: int = 5
    learning_rate: float = 1e-2
    epochs: int = 40
    batch_size: int = 64
    weight_decay_grid: tuple[float, ...] = WEIGHT_DECAY_GRID
    n_splits: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("shape", "texture"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind not in ("linear", "knn"):
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class ProbeReport:
    kind: str
    tap: str
    task: str
    chance: float
    per_split: list[float] = field(default_factory=list)  # linear: accuracy per split
    mean: float = 0.0
    sd: float = 0.0
    fractions: dict[str, float] = field(default_factory=dict)  # knn categories
    selected_weight_decay: list[float] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tap": self.tap,
            "task": self.task,
            "chance": self.chance,
            "per_split": self.per_split,
            "mean": self.mean,
            "sd": self.sd,
            "fractions": self.fractions,
            "selected_weight_decay": self.selected_weight_decay,
        }


def extract_features(model: Model, stimulus_set: StimulusSet, tap: str, batch_size: int = 128):
    """Flattened per-item feature vectors, ordered as the set's items."""
    items = stimulus_set.items
    feats = []
    for lo in range(0, len(items), batch_size):
        chunk = items[lo : lo + batch_size]
        images = np.stack([it.image for it in chunk])
        _, traces = forward_with_activations(model, images, [tap])
        feats.append(traces[tap].reshape(len(chunk), -1).astype(np.float32))
    features = np.concatenate(feats, axis=0)
    labels = {
        "shape": np.array([it.shape_label for it in items], dtype=np.int64),
        "texture": np.array([it.texture_label for it in items], dtype=np.int64),
    }
    return features, labels


def probe_splits(stimulus_set: StimulusSet, n_splits: int, seed: int) -> list[SplitPlan]:
    """Exemplar-holdout splits (the style-transfer-set protocol), one per seed."""
    return [
        make_split(stimulus_set, "shape", holdout="exemplar", seed=seed * 100 + k)
        for k in range(n_splits)
    ]


def _fit_logistic(x_tr, y_tr, x_va, y_va, n_classes, lr, epochs, batch_size, wd, seed):
    """Minibatch multinomial logistic regression; returns max val accuracy."""
    rng = np.random.default_rng([seed, 3])
    d = x_tr.shape[1]
    w = (rng.uniform(-1, 1, size=(d, n_classes)) / np.sqrt(d)).astype(np.float32)
    b = np.zeros(n_classes, dtype=np.float32)
    params = {"w": w, "b": b}
    state = OptimizerState("adam", learning_rate=lr, weight_decay=wd)
    schedule = LrSchedule("cosine_decay", base_rate=lr, total_steps=max(1, epochs * max(1, len(x_tr) // batch_size)))
    best = 0.0
    step = 0
    n = len(x_tr)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 4, epoch]).permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            logits = x_tr[idx] @ params["w"] + params["b"]
            _, probs = softmax_cross_entropy(logits, y_tr[idx])
            dlogits = softmax_cross_entropy_backward(probs, y_tr[idx]).astype(np.float32)
            grads = {"w": x_tr[idx].T @ dlogits, "b": dlogits.sum(axis=0)}
            optimizer_step(params, grads, state, rate=schedule_lr(schedule, step))
            step += 1
        val_pred = (x_va @ params["w"] + params["b"]).argmax(axis=1)
        best = max(best, float((val_pred == y_va).mean()))
    return best


def train_linear_probe(
    features: np.ndarray,
    labels: np.ndarray,
    splits: list[SplitPlan],
    stimulus_set: StimulusSet,
    config: ProbeConfig,
) -> ProbeReport:
    """Per split: standardize features on train, search the weight-decay grid,
    keep the best max-over-epochs validation accuracy."""
    ids = [it.id for it in stimulus_set.items]
    index_of = {i: k for k, i in enumerate(ids)}
    classes = np.unique(labels)
    n_classes = int(classes.max()) + 1
    report = ProbeReport(
        kind="linear",
        tap=config.tap,
        task=config.task,
        chance=1.0 / len(classes),
    )
    for split in splits:
        tr = np.array([index_of[i] for i in split.train_ids])
        va = np.array([index_of[i] for i in split.val_ids])
        if len(np.unique(labels[tr])) < 2:
            raise ValueError("train split has fewer than 2 classes")
        missing = set(labels[va].tolist()) - set(labels[tr].tolist())
        if missing:
            raise ValueError(f"class(es) {sorted(missing)} absent from train split")
        mu = features[tr].mean(axis=0)
        sd = np.maximum(features[tr].std(axis=0), 1e-6)
        x_tr = ((features[tr] - mu) / sd).astype(np.float32)
        x_va = ((features[va] - mu) / sd).astype(np.float32)
        best_acc, best_wd = -1.0, None
        for wd in config.weight_decay_grid:
            acc = _fit_logistic(
                x_tr,
                labels[tr],
                x_va,
                labels[va],
                n_classes,
                config.learning_rate,
                config.epochs,
                config.batch_size,
                wd,
                config.seed,
            )
            if acc > best_acc:
                best_acc, best_wd = acc, wd
        report.per_split.append(best_acc)
        report.selected_weight_decay.append(best_wd)
    report.mean = float(np.mean(report.per_split))
    report.sd = float(np.std(report.per_split))
    return report


def knn_probe(
    features: np.ndarray,
    stimulus_set: StimulusSet,
    config: ProbeConfig,
    exclude_shared_sources: bool = True,
) -> ProbeReport:
    """k nearest neighbours (Euclidean) with per-neighbour categorization.

    Fractions are over all retrieved neighbours (k per query). Distance ties
    break to the lower item index. Exclusions drop candidates sharing the
    query's content or style source.
    """
    items = stimulus_set.items
    n = len(items)
    if n != len(features):
        raise ValueError("features and items disagree in length")
    x = features.astype(np.float64)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    if exclude_shared_sources:
        content = [it.provenance.get("content_source") for it in items]
        style = [it.provenance.get("style_source") for it in items]
        for i in range(n):
            for j in range(n):
                if i != j and (
                    (content[i] is not None and content[i] == content[j])
                    or (style[i] is not None and style[i] == style[j])
                ):
                    d2[i, j] = np.inf
    counts = {"shape_match": 0, "texture_match": 0, "both_match": 0, "other": 0}
    order = np.argsort(d2, axis=1, kind="stable")  # stable: ties to lower index
    for i in range(n):
        eligible = order[i][np.isfinite(d2[i, order[i]])]
        if len(eligible) < config.k:
            raise ValueError(
                f"item {items[i].id}: exclusions leave {len(eligible)} neighbours < k={config.k}"
            )
        for j in eligible[: config.k]:
            s = items[j].shape_label == items[i].shape_label
            t = items[j].texture_label == items[i].texture_label
            if s and t:
                counts["both_match"] += 1
            elif s:
                counts["shape_match"] += 1
            elif t:
                counts["texture_match"] += 1
            else:
                counts["other"] += 1
    total = n * config.k
    fractions = {key: val / total for key, val in counts.items()}
    return ProbeReport(
        kind="knn",
        tap=config.tap,
        task=config.task,
        chance=1.0 / len(set(it.shape_label for it in items)),
        fractions=fractions,
    )
