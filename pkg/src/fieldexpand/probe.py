"""Linear probe: multinomial logistic regression and its metric suite.

The probe is trained from scratch by deterministic full-batch gradient
descent with backtracking line search; the problem is convex, so the final
loss does not depend on initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ProbeModel:
    weights: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray  # (num_classes,)
    l2: float

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def probe_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + (l2/2) ||W||^2 and its analytic gradient."""
    n = features.shape[0]
    logits = features @ weights.T + bias
    log_p = _log_softmax(logits)
    loss = -log_p[np.arange(n), labels].mean() + 0.5 * l2 * float(
        (weights**2).sum()
    )
    probs = np.exp(log_p)
    probs[np.arange(n), labels] -= 1.0
    grad_w = probs.T @ features / n + l2 * weights
    grad_b = probs.mean(axis=0)
    return float(loss), grad_w, grad_b


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-4,
    max_iter: int = 1500,
    tol: float = 1e-7,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> ProbeModel:
    """Fit the probe by full-batch descent with Armijo backtracking.

    Stops when the gradient norm over (W, b) drops below tol or after
    max_iter iterations.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with one label per row")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("labels must contain at least 2 classes")
    if classes.min() < 0:
        raise ValueError("labels must be non-negative class ids")
    k = int(classes.max()) + 1
    n, d = x.shape
    if n < k:
        raise ValueError(f"need at least {k} samples for {k} classes")

    if init is None:
        w = np.zeros((k, d))
        b = np.zeros(k)
    else:
        w = np.array(init[0], dtype=np.float64, copy=True)
        b = np.array(init[1], dtype=np.float64, copy=True)
        if w.shape != (k, d) or b.shape != (k,):
            raise ValueError("init shapes do not match (num_classes, feature_dim)")

    loss, grad_w, grad_b = probe_loss_and_grad(w, b, x, y, l2)
    step = 1.0
    for _ in range(max_iter):
        grad_norm = np.sqrt((grad_w**2).sum() + (grad_b**2).sum())
        if grad_norm < tol:
            break
        # Armijo condition along the steepest-descent direction
        slope = -(grad_norm**2)
        step = min(step * 2.0, 1e4)
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, gw_new, gb_new = probe_loss_and_grad(w_new, b_new, x, y, l2)
            if loss_new <= loss + 1e-4 * step * slope or step < 1e-20:
                break
            step *= 0.5
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, gw_new, gb_new
    return ProbeModel(weights=w, bias=b, l2=l2)


def predict(model: ProbeModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise ValueError(
            f"features must be (n, {model.feature_dim}), got {x.shape}"
        )
    return np.argmax(x @ model.weights.T + model.bias, axis=1)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_f1: list[float] = field(default_factory=list)
    macro_f1: float = 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class_f1": list(self.per_class_f1),
            "macro_f1": self.macro_f1,
        }


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean 2PR/(P+R); zero when both rates vanish.

    Scale-invariant, so it accepts rates as fractions or percentages.
    """
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def confusion_matrix(
    labels: np.ndarray, predictions: np.ndarray, num_classes: int
) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(labels), np.asarray(predictions)), 1)
    return matrix


def metrics_from_predictions(
    labels: np.ndarray,
    predictions: np.ndarray,
    num_classes: int,
    positive_class: int | None = None,
) -> MetricsReport:
    """Accuracy, balanced accuracy, and per-class precision/recall/F1.

    Binary precision/recall/F1 refer to positive_class (class 1 by default
    for two-class problems); for multiclass without a positive class, the
    headline precision/recall/F1 are the macro averages. Empty denominators
    count as 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    cm = confusion_matrix(labels, predictions, num_classes)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)

    with np.errstate(divide="ignore", invalid="ignore"):
        precision_c = np.where(predicted > 0, tp / predicted, 0.0)
        recall_c = np.where(support > 0, tp / support, 0.0)
    f1_c = [f1_score(p, r) for p, r in zip(precision_c, recall_c)]

    present = support > 0
    accuracy = float(tp.sum() / max(1, labels.size))
    balanced = float(recall_c[present].mean()) if present.any() else 0.0
    macro_f1 = float(np.mean([f for f, keep in zip(f1_c, present) if keep]))

    if positive_class is None and num_classes == 2:
        positive_class = 1
    if positive_class is not None:
        if not 0 <= positive_class < num_classes:
            raise ValueError(f"positive_class {positive_class} out of range")
        headline_p = float(precision_c[positive_class])
        headline_r = float(recall_c[positive_class])
    else:
        headline_p = float(precision_c[present].mean()) if present.any() else 0.0
        headline_r = balanced
    return MetricsReport(
        accuracy=accuracy,
        balanced_accuracy=balanced,
        precision=headline_p,
        recall=headline_r,
        f1=f1_score(headline_p, headline_r),
        per_class_f1=[float(f) for f in f1_c],
        macro_f1=macro_f1,
    )


def evaluate_probe(
    model: ProbeModel,
    features: np.ndarray,
    labels: np.ndarray,
    positive_class: int | None = None,
) -> MetricsReport:
    """Argmax predictions of the probe scored against true labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= model.num_classes:
        raise ValueError(
            f"labels must lie in [0, {model.num_classes}), "
            f"got range [{labels.min()}, {labels.max()}]"
        )
    predictions = predict(model, features)
    return metrics_from_predictions(
        labels, predictions, model.num_classes, positive_class
    )
