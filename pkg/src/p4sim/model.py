"""Linear softmax classifier with hand-derived distillation gradients.

Both the proxy model (theta) and the local model (phi) are instances of
:class:`LinearModel`.  Parameters live in one flat float64 vector laid out as
``[W.ravel() (row-major, C x d), b (C)]`` so that clipping, noise, deltas and
distances all operate on the same vector the optimizer updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12
_LOG_FLOOR = float(np.log(PROB_FLOOR))


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights of the two distillation objectives.

    ``alpha`` weights the KL term of the proxy loss, ``beta`` the KL term of
    the local loss.  ``temperature`` scales logits inside the KL term only.
    """

    alpha: float = 0.5
    beta: float = 0.5
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class LinearModel:
    num_classes: int
    dim: int
    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters for "
                f"{self.num_classes}x{self.dim} model, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "params", p)

    @property
    def n_params(self) -> int:
        return self.num_classes * self.dim + self.num_classes

    @property
    def weights(self) -> np.ndarray:
        return self.params[: self.num_classes * self.dim].reshape(self.num_classes, self.dim)

    @property
    def bias(self) -> np.ndarray:
        return self.params[self.num_classes * self.dim:]

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "LinearModel":
        return cls(num_classes, dim, np.zeros(num_classes * dim + num_classes))

    @classmethod
    def from_parts(cls, weights, bias) -> "LinearModel":
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        c, d = weights.shape
        return cls(c, d, np.concatenate([weights.ravel(), bias]))

    def flatten(self) -> np.ndarray:
        return self.params.copy()

    def unflatten(self, flat) -> "LinearModel":
        """Model of the same architecture holding ``flat``."""
        return LinearModel(self.num_classes, self.dim, flat)

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"feature dim {x.shape[-1]} != model dim {self.dim}")
        return x @ self.weights.T + self.bias


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(model: LinearModel, x) -> np.ndarray:
    """Class probabilities for one sample (vector) or a batch (matrix)."""
    return softmax(model.logits(x))


def predict(model: LinearModel, x) -> np.ndarray:
    return np.argmax(model.logits(x), axis=-1)


def accuracy(model: LinearModel, x, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predict(model, x) == y))


def cross_entropy(p, y: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= y < p.shape[-1]:
        raise ValueError(f"label {y} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(p[y], PROB_FLOOR)))


def kl_divergence(p, q) -> float:
    """KL(p || q) with ``q`` clamped below at 1e-12; ``0 ln 0`` terms vanish."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], PROB_FLOOR)))))


def _check_batch(x, y, model):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) == 0 or x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != len(y):
        raise ValueError(f"{x.shape[0]} samples but {len(y)} labels")
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ValueError("label out of range")
    return x, y


def _distill_terms(student, teacher, x, lw_weight, temperature):
    z = student.logits(x)
    log_p = log_softmax(z)
    if lw_weight == 0.0:
        return z, log_p, None, None
    log_ps = log_softmax(z / temperature)
    log_qt = np.maximum(log_softmax(teacher.logits(x) / temperature), _LOG_FLOOR)
    return z, log_p, log_ps, log_qt


def distill_loss(student: LinearModel, teacher: LinearModel, x, y, weight: float,
                 temperature: float = 1.0) -> float:
    """Batch mean of ``(1-w) CE(f_s(x), y) + w KL(f_s(x) || f_t(x))``."""
    x, y = _check_batch(x, y, student)
    _, log_p, log_ps, log_qt = _distill_terms(student, teacher, x, weight, temperature)
    ce = -log_p[np.arange(len(y)), y]
    if log_ps is None:
        return float(np.mean(ce))
    kl = np.sum(np.exp(log_ps) * (log_ps - log_qt), axis=1)
    return float(np.mean((1.0 - weight) * ce + weight * kl))


def distill_logit_grads(student: LinearModel, teacher: LinearModel, x, y, weight: float,
                        temperature: float = 1.0) -> np.ndarray:
    """Per-sample gradient of the distillation loss w.r.t. the student logits."""
    x, y = _check_batch(x, y, student)
    _, log_p, log_ps, log_qt = _distill_terms(student, teacher, x, weight, temperature)
    g = np.exp(log_p)
    g[np.arange(len(y)), y] -= 1.0
    if log_ps is None:
        return g
    ps = np.exp(log_ps)
    a = log_ps - log_qt
    kl = np.sum(ps * a, axis=1, keepdims=True)
    g_kl = ps * (a - kl) / temperature
    return (1.0 - weight) * g + weight * g_kl


def per_sample_param_grads(model: LinearModel, x, dlogits) -> np.ndarray:
    """Chain rule through the affine map: one flat gradient row per sample."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    gw = (dlogits[:, :, None] * x[:, None, :]).reshape(n, -1)
    return np.concatenate([gw, dlogits], axis=1)


def proxy_loss(theta, phi, x, y, lw: LossWeights) -> float:
    return distill_loss(theta, phi, x, y, lw.alpha, lw.temperature)


def local_loss(phi, theta, x, y, lw: LossWeights) -> float:
    return distill_loss(phi, theta, x, y, lw.beta, lw.temperature)


def proxy_loss_grad(theta: LinearModel, phi: LinearModel, x, y, lw: LossWeights) -> np.ndarray:
    """Per-sample gradients (n x n_params) of the proxy loss; phi is held fixed."""
    dz = distill_logit_grads(theta, phi, x, y, lw.alpha, lw.temperature)
    return per_sample_param_grads(theta, x, dz)


def local_loss_grad(phi: LinearModel, theta: LinearModel, x, y, lw: LossWeights) -> np.ndarray:
    """Batch-mean gradient of the local loss; theta is held fixed."""
    dz = distill_logit_grads(phi, theta, x, y, lw.beta, lw.temperature)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    gw = dz.T @ x / n
    return np.concatenate([gw.ravel(), dz.mean(axis=0)])


def sgd_step(model: LinearModel, grad, lr: float) -> LinearModel:
    if not lr >= 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {model.params.shape}")
    return model.unflatten(model.params - lr * grad)
