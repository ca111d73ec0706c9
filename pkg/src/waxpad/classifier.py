"""Linear softmax heads: one two-class model per feature extractor.

Training is plain mini-batch gradient descent on L2-regularized cross-entropy
with a seeded shuffle schedule, so a rerun with the same data and config
reproduces the parameters bit for bit. The returned model carries the
parameters of the epoch with the best validation loss.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .dataset import Label
from .features import FeatureStore, FeatureVector

CLASS_ORDER = (Label.BONA_FIDE, Label.ATTACK)


class ClassifierError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    l2_penalty: float = 1e-4
    patience: int = 20

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ClassifierError("learning_rate, epochs and batch_size must be positive")
        if self.l2_penalty < 0 or self.patience <= 0:
            raise ClassifierError("l2_penalty must be >= 0 and patience positive")

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass
class SoftmaxModel:
    """Affine scores + softmax over the fixed class order (bona_fide, attack)."""

    extractor_id: str
    weights: np.ndarray  # (dim, 2)
    bias: np.ndarray  # (2,)
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[1] != 2 or self.bias.shape != (2,):
            raise ClassifierError("model parameters must be (dim, 2) weights and (2,) bias")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ClassifierError("model parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Prediction:
    face_id: str
    extractor_id: str
    p_attack: float

    @property
    def p_bona_fide(self) -> float:
        return 1.0 - self.p_attack

    @property
    def label(self) -> Label:
        # Ties resolve to bona_fide: only confidently attack-ish faces are flagged.
        return Label.ATTACK if self.p_attack > 0.5 else Label.BONA_FIDE


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _one_hot(y: np.ndarray) -> np.ndarray:
    out = np.zeros((y.shape[0], 2))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _loss_and_grads(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    l2_penalty: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + (l2/2)*||W||^2 and its analytic gradients."""
    n = x.shape[0]
    probs = _softmax(x @ weights + bias)
    eps = np.finfo(np.float64).tiny
    ce = -np.mean(np.log(probs[np.arange(n), y] + eps))
    loss = ce + 0.5 * l2_penalty * float(np.sum(weights * weights))
    delta = (probs - _one_hot(y)) / n
    grad_w = x.T @ delta + l2_penalty * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def _cross_entropy(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    probs = _softmax(x @ weights + bias)
    eps = np.finfo(np.float64).tiny
    return float(-np.mean(np.log(probs[np.arange(x.shape[0]), y] + eps)))


def _assemble(
    features: FeatureStore, labels: dict[str, Label]
) -> tuple[list[str], np.ndarray, np.ndarray]:
    face_ids = sorted(labels)
    missing = [fid for fid in face_ids if features.get(fid) is None]
    if missing:
        raise ClassifierError(
            f"feature coverage gap: {len(missing)} labeled face(s) without features, "
            f"first: {missing[0]!r}"
        )
    x = features.matrix(face_ids)
    y = np.array([CLASS_ORDER.index(labels[fid]) for fid in face_ids], dtype=np.intp)
    return face_ids, x, y


def train(
    features: FeatureStore,
    labels: dict[str, Label],
    valid_features: FeatureStore,
    valid_labels: dict[str, Label],
    config: TrainConfig,
) -> SoftmaxModel:
    """Fit a softmax head; returns the parameters of the best validation epoch."""
    _, x, y = _assemble(features, labels)
    _, xv, yv = _assemble(valid_features, valid_labels)
    if len(set(y.tolist())) < 2:
        raise ClassifierError("degenerate labels: training set contains a single class")

    dim = x.shape[1]
    weights = np.zeros((dim, 2))
    bias = np.zeros(2)
    rng = np.random.default_rng(config.seed)

    best_loss = np.inf
    best_weights = weights.copy()
    best_bias = bias.copy()
    epochs_since_best = 0

    for _ in range(config.epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grad_w, grad_b = _loss_and_grads(
                weights, bias, x[batch], y[batch], config.l2_penalty
            )
            weights = weights - config.learning_rate * grad_w
            bias = bias - config.learning_rate * grad_b
        val_loss = _cross_entropy(weights, bias, xv, yv)
        if val_loss < best_loss:
            best_loss = val_loss
            best_weights = weights.copy()
            best_bias = bias.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    return SoftmaxModel(
        extractor_id=features.spec.extractor_id,
        weights=best_weights,
        bias=best_bias,
        train_config=config.to_json_dict(),
    )


def predict(model: SoftmaxModel, feature: FeatureVector) -> Prediction:
    if feature.dim != model.dim:
        raise ClassifierError(
            f"feature dim {feature.dim} does not match model dim {model.dim}"
        )
    probs = _softmax((feature.values.astype(np.float64) @ model.weights + model.bias)[np.newaxis, :])
    return Prediction(
        face_id=feature.face_id,
        extractor_id=model.extractor_id,
        p_attack=float(probs[0, 1]),
    )


def predict_many(model: SoftmaxModel, store: FeatureStore, face_ids: list[str]) -> list[Prediction]:
    if not face_ids:
        return []
    x = store.matrix(face_ids)
    if x.shape[1] != model.dim:
        raise ClassifierError(f"feature dim {x.shape[1]} does not match model dim {model.dim}")
    probs = _softmax(x @ model.weights + model.bias)
    return [
        Prediction(face_id=fid, extractor_id=model.extractor_id, p_attack=float(p))
        for fid, p in zip(face_ids, probs[:, 1])
    ]


def grad_check(
    model: SoftmaxModel,
    x: np.ndarray,
    y: np.ndarray,
    eps: float = 1e-5,
    l2_penalty: float = 1e-4,
) -> float:
    """Max relative error between analytic and central finite-difference gradients."""
    if eps <= 0:
        raise ClassifierError("invalid step: eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if x.size == 0:
        raise ClassifierError("grad_check requires a non-empty batch")

    _, grad_w, grad_b = _loss_and_grads(model.weights, model.bias, x, y, l2_penalty)
    analytic = np.concatenate([grad_w.ravel(), grad_b.ravel()])

    params = np.concatenate([model.weights.ravel(), model.bias.ravel()])
    numeric = np.zeros_like(params)
    n_w = model.weights.size

    def loss_at(theta: np.ndarray) -> float:
        w = theta[:n_w].reshape(model.weights.shape)
        b = theta[n_w:]
        loss, _, _ = _loss_and_grads(w, b, x, y, l2_penalty)
        return loss

    for i in range(params.size):
        bumped = params.copy()
        bumped[i] = params[i] + eps
        up = loss_at(bumped)
        bumped[i] = params[i] - eps
        down = loss_at(bumped)
        numeric[i] = (up - down) / (2 * eps)

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).copy()


def save_model(model: SoftmaxModel, path: str | Path) -> None:
    """JSON document: header fields plus base64 little-endian float64 parameters.

    float64 (not float32) keeps the save/load round trip bit-exact for
    parameters produced by training.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "extractor_id": model.extractor_id,
        "dim": model.dim,
        "class_order": [label.value for label in CLASS_ORDER],
        "train_config": model.train_config,
        "weights_b64": _encode_array(model.weights),
        "bias_b64": _encode_array(model.bias),
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> SoftmaxModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ClassifierError(f"cannot read model file {path}: {exc}") from exc
    dim = int(doc["dim"])
    return SoftmaxModel(
        extractor_id=doc["extractor_id"],
        weights=_decode_array(doc["weights_b64"], (dim, 2)),
        bias=_decode_array(doc["bias_b64"], (2,)),
        train_config=doc.get("train_config") or {},
    )
