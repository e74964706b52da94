"""Analytic gradients of the cross-entropy loss and a finite-difference check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoActiveRulesError
from .fnn import RuleBank, forward, one_hot, per_sample_losses


@dataclass
class GradientSet:
    """Per-rule gradients aligned with the rows of a RuleBank."""

    dm: np.ndarray       # (K, D)
    dsigma: np.ndarray   # (K, D)
    dtheta: np.ndarray   # (K, D+1, C)

    @classmethod
    def zeros_like(cls, bank: RuleBank) -> "GradientSet":
        return cls(np.zeros_like(bank.m), np.zeros_like(bank.sigma), np.zeros_like(bank.theta))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dm.ravel(), self.dsigma.ravel(), self.dtheta.ravel()])


def batch_backward(X: np.ndarray, y: np.ndarray, bank: RuleBank, s) -> tuple[float, GradientSet]:
    """Mean loss over a batch and its gradient w.r.t. every rule parameter.

    ``y`` holds integer labels. Masked rules have h = 0 and therefore receive
    exactly zero gradient in every component.
    """
    fw = forward(X, bank, s)
    y = np.asarray(y, dtype=np.int64)
    B = fw.Xa.shape[0]
    A, C = fw.idx.size, bank.C
    loss = float(per_sample_losses(fw.probs, y).mean())

    # d loss / d tau for softmax + cross-entropy, averaged over the batch
    delta = (fw.probs - one_hot(y, C)) / B
    hd = (fw.ha[:, :, None] * delta[:, None, :]).reshape(B, A * C)
    dtheta = (fw.Xa.T @ hd).reshape(-1, A, C).transpose(1, 0, 2)

    # through the firing normalization: d/dr_k = h_k (a_k - sum_j h_j a_j)
    a = np.matmul(fw.g, delta[:, :, None])[:, :, 0]
    dr = fw.ha * (a - (fw.ha * a).sum(axis=1, keepdims=True))
    # r = ||phi||, phi = exp(-z^2), z = (x - m) / sigma; phi^2 / r -> 0 as r -> 0
    r = fw.r[:, :, None]
    dphi = dr[:, :, None] * np.divide(fw.phi, r, out=np.zeros_like(fw.phi), where=r > 0)
    dz_common = dphi * fw.phi * 2.0 * fw.z / bank.sigma[fw.idx][None]

    grads = GradientSet.zeros_like(bank)
    grads.dm[fw.idx] = dz_common.sum(axis=0)
    grads.dsigma[fw.idx] = (dz_common * fw.z).sum(axis=0)
    grads.dtheta[fw.idx] = dtheta
    return loss, grads


def backward(x: np.ndarray, y_onehot: np.ndarray, bank: RuleBank, s) -> tuple[float, GradientSet]:
    """Loss and exact gradient for a single sample with a one-hot label."""
    label = int(np.argmax(y_onehot))
    return batch_backward(np.asarray(x, dtype=float)[None], np.array([label]), bank, s)


def _loss_extended(x, y_onehot, m, sigma, theta, s) -> np.longdouble:
    """Single-sample loss evaluated in extended precision, written out term by term."""
    K, D = m.shape
    active = [k for k in range(K) if s[k]]
    if not active:
        raise NoActiveRulesError()
    r = {}
    for k in active:
        z = (x - m[k]) / sigma[k]
        phi = np.exp(-z * z)
        r[k] = np.sqrt(np.sum(phi * phi))
    top = max(r.values())
    w = {k: np.exp(r[k] - top) for k in active}
    total = sum(w.values())
    xa = np.concatenate([np.ones(1, dtype=np.longdouble), x])
    tau = sum((w[k] / total) * (xa @ theta[k]) for k in active)
    tau = tau - tau.max()
    log_probs = tau - np.log(np.sum(np.exp(tau)))
    return -np.sum(y_onehot * log_probs)


def finite_difference_gradient(x, y_onehot, bank: RuleBank, s, step: float = 1e-5) -> GradientSet:
    """Central differences of the single-sample loss, one scalar at a time.

    Losses are evaluated in extended precision so the difference quotient is
    not dominated by float64 rounding on coordinates with tiny gradients.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    ld = np.longdouble
    x = np.asarray(x, dtype=ld)
    y_onehot = np.asarray(y_onehot, dtype=ld)
    s = np.asarray(s)
    params = {"m": bank.m.astype(ld), "sigma": bank.sigma.astype(ld), "theta": bank.theta.astype(ld)}
    grads = {name: np.zeros(v.shape) for name, v in params.items()}
    h = ld(step)

    for name, base in params.items():
        for i in range(base.size):
            plus = base.copy()
            plus.flat[i] += h
            minus = base.copy()
            minus.flat[i] -= h
            lp = _loss_extended(x, y_onehot, **{**params, name: plus}, s=s)
            lm = _loss_extended(x, y_onehot, **{**params, name: minus}, s=s)
            grads[name].flat[i] = float((lp - lm) / (2 * h))
    return GradientSet(grads["m"], grads["sigma"], grads["theta"])


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))
