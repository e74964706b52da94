"""
Rule-masked first-order Takagi-Sugeno fuzzy neural network.

Shapes used throughout:

    x        (D,)            one input sample
    X        (B, D)          a batch of samples
    m        (K, D)          Gaussian membership centers
    sigma    (K, D)          Gaussian membership spreads
    theta    (K, D+1, C)     consequent parameters, row 0 is the bias row
    s        (K,)            binary activation row of one client

A rule fires with weight proportional to exp(||phi_k(x)||_2), where phi_k(x)
is the vector of its D membership values; deactivated rules are masked out
of the normalization and contribute exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, NoActiveRulesError

SIGMA_MIN = 1e-3
PROB_EPS = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Rule:
    """One fuzzy rule: Gaussian antecedents (m, sigma) and a linear consequent."""

    id: int
    m: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _frozen(self.m))
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        object.__setattr__(self, "theta", _frozen(self.theta))
        d = self.m.shape[0]
        if self.m.ndim != 1 or self.sigma.shape != (d,):
            raise ValueError("m and sigma must be vectors of equal length")
        if self.theta.ndim != 2 or self.theta.shape[0] != d + 1:
            raise ValueError(f"theta must have shape ({d + 1}, C), got {self.theta.shape}")
        if np.any(self.sigma < SIGMA_MIN):
            raise ValueError(f"sigma below the clamp {SIGMA_MIN}")


@dataclass(frozen=True)
class RuleBank:
    """Ordered global rule set stored as stacked arrays.

    Row ``k`` of each array belongs to the rule with identifier ``ids[k]``.
    Arrays are read-only; every update produces a new bank.
    """

    ids: np.ndarray
    m: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", _frozen(self.ids, dtype=np.int64))
        object.__setattr__(self, "m", _frozen(self.m))
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        object.__setattr__(self, "theta", _frozen(self.theta))
        k = self.ids.shape[0]
        if self.m.ndim != 2 or self.m.shape[0] != k:
            raise ValueError("m must have shape (K, D)")
        if self.sigma.shape != self.m.shape:
            raise ValueError("sigma must match m")
        if self.theta.ndim != 3 or self.theta.shape[:2] != (k, self.m.shape[1] + 1):
            raise ValueError("theta must have shape (K, D+1, C)")
        if len(np.unique(self.ids)) != k:
            raise ValueError("rule ids must be unique")
        if np.any(self.sigma < SIGMA_MIN):
            raise ValueError(f"sigma below the clamp {SIGMA_MIN}")

    @property
    def K(self) -> int:
        return self.ids.shape[0]

    @property
    def D(self) -> int:
        return self.m.shape[1]

    @property
    def C(self) -> int:
        return self.theta.shape[2]

    def __len__(self):
        return self.K

    def rule(self, k: int) -> Rule:
        return Rule(int(self.ids[k]), self.m[k], self.sigma[k], self.theta[k])

    @property
    def rules(self) -> list[Rule]:
        return [self.rule(k) for k in range(self.K)]

    @classmethod
    def from_rules(cls, rules: Sequence[Rule], D: int | None = None, C: int | None = None) -> "RuleBank":
        if not rules:
            if D is None or C is None:
                raise ValueError("an empty bank needs explicit D and C")
            return cls(np.zeros(0, np.int64), np.zeros((0, D)), np.ones((0, D)), np.zeros((0, D + 1, C)))
        return cls(
            np.array([r.id for r in rules]),
            np.stack([r.m for r in rules]),
            np.stack([r.sigma for r in rules]),
            np.stack([r.theta for r in rules]),
        )

    def select(self, keep: Iterable[int]) -> "RuleBank":
        """Sub-bank holding rows ``keep`` in the given order."""
        keep = np.asarray(list(keep), dtype=np.int64)
        return RuleBank(self.ids[keep], self.m[keep], self.sigma[keep], self.theta[keep])

    def append(self, rule: Rule) -> "RuleBank":
        return RuleBank(
            np.append(self.ids, rule.id),
            np.concatenate([self.m, rule.m[None]]),
            np.concatenate([self.sigma, rule.sigma[None]]),
            np.concatenate([self.theta, rule.theta[None]]),
        )

    def replace_params(self, m=None, sigma=None, theta=None) -> "RuleBank":
        return RuleBank(
            self.ids,
            self.m if m is None else m,
            self.sigma if sigma is None else sigma,
            self.theta if theta is None else theta,
        )

    def next_id(self) -> int:
        return int(self.ids.max()) + 1 if self.K else 0


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"X must be (N, D) and y (N,), got {X.shape} and {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError("labels out of range")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def C(self) -> int:
        return self.n_classes

    def __len__(self):
        return self.N

    def onehot(self) -> np.ndarray:
        return one_hot(self.y, self.n_classes)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.X[idx], self.y[idx], self.n_classes)


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


# -- single-sample operations -------------------------------------------------


def membership_value(x_j: float, m_kj: float, sigma_kj: float) -> float:
    """Gaussian membership exp(-((x - m) / sigma)^2)."""
    if not (np.isfinite(x_j) and np.isfinite(m_kj) and np.isfinite(sigma_kj)):
        raise ValueError("non-finite input")
    if sigma_kj < SIGMA_MIN:
        raise ValueError(f"sigma {sigma_kj} below the clamp {SIGMA_MIN}")
    z = (x_j - m_kj) / sigma_kj
    return float(np.exp(-z * z))


def memberships(x: np.ndarray, bank: RuleBank) -> np.ndarray:
    """(K, D) matrix of membership values of ``x`` under every rule."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    z = (x[None, :] - bank.m) / bank.sigma
    return np.exp(-z * z)


def _masked_normalize(r: np.ndarray, s: np.ndarray) -> np.ndarray:
    active = np.asarray(s) != 0
    if not active.any():
        raise NoActiveRulesError()
    shifted = np.where(active, r - r[active].max(), 0.0)
    w = np.where(active, np.exp(shifted), 0.0)
    return w / w.sum()


def firing_strengths(x: np.ndarray, bank: RuleBank, s) -> np.ndarray:
    """Normalized firing strengths h_k; masked rules are exactly 0."""
    s = np.asarray(s)
    if s.shape != (bank.K,):
        raise ValueError(f"activation row has length {s.shape}, bank has {bank.K} rules")
    r = np.linalg.norm(memberships(x, bank), axis=1)
    return _masked_normalize(r, s)


def consequent_output(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != x.shape[0] + 1:
        raise ValueError(f"theta shape {theta.shape} does not fit input of length {x.shape[0]}")
    return theta[0] + x @ theta[1:]


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def predict(x: np.ndarray, bank: RuleBank, s) -> np.ndarray:
    """Class probabilities for one sample."""
    h = firing_strengths(x, bank, s)
    tau = np.zeros(bank.C)
    for k in np.flatnonzero(h):
        tau += h[k] * consequent_output(x, bank.theta[k])
    return softmax(tau)


def cross_entropy_loss(y_onehot: np.ndarray, y_hat: np.ndarray) -> float:
    y_onehot = np.asarray(y_onehot, dtype=float)
    p = np.maximum(np.asarray(y_hat, dtype=float), PROB_EPS)
    return float(-(y_onehot * np.log(p)).sum())


# -- batched forward pass -----------------------------------------------------


@dataclass
class Forward:
    """Intermediate quantities of a batched forward pass, kept for backprop.

    Only the active rules (indices ``idx``) are evaluated; ``A`` below is
    their count. Masked rules never enter the computation.
    """

    idx: np.ndarray     # (A,) indices of active rules in the bank
    K: int              # size of the full bank
    Xa: np.ndarray      # (B, D+1) inputs with a leading 1
    z: np.ndarray       # (B, A, D) standardized distances (x - m) / sigma
    phi: np.ndarray     # (B, A, D) membership values
    r: np.ndarray       # (B, A) membership norms
    ha: np.ndarray      # (B, A) firing strengths of active rules
    g: np.ndarray       # (B, A, C) rule consequents
    probs: np.ndarray   # (B, C)

    @property
    def h(self) -> np.ndarray:
        """(B, K) firing strengths with exact zeros for masked rules."""
        h = np.zeros((self.ha.shape[0], self.K))
        h[:, self.idx] = self.ha
        return h


def forward(X: np.ndarray, bank: RuleBank, s) -> Forward:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s = np.asarray(s)
    if s.shape != (bank.K,):
        raise ValueError(f"activation row has length {s.shape}, bank has {bank.K} rules")
    idx = np.flatnonzero(s)
    if idx.size == 0:
        raise NoActiveRulesError()
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    m, sigma, theta = bank.m[idx], bank.sigma[idx], bank.theta[idx]
    z = (X[:, None, :] - m[None]) / sigma[None]
    phi = np.exp(-z * z)
    r = np.sqrt((phi * phi).sum(axis=2))
    w = np.exp(r - r.max(axis=1, keepdims=True))
    ha = w / w.sum(axis=1, keepdims=True)
    Xa = np.concatenate([np.ones((X.shape[0], 1)), X], axis=1)
    A, C = idx.size, bank.C
    g = (Xa @ theta.transpose(1, 0, 2).reshape(-1, A * C)).reshape(-1, A, C)
    tau = np.matmul(ha[:, None, :], g)[:, 0, :]
    return Forward(idx, bank.K, Xa, z, phi, r, ha, g, softmax(tau, axis=1))


def predict_proba(X: np.ndarray, bank: RuleBank, s) -> np.ndarray:
    return forward(X, bank, s).probs


def per_sample_losses(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = probs[np.arange(len(y)), y]
    return -np.log(np.maximum(p, PROB_EPS))


def dataset_loss(dataset: LabeledDataset, bank: RuleBank, s) -> float:
    """Mean cross-entropy of the masked model over ``dataset``."""
    if dataset.N == 0:
        raise DataError("empty dataset")
    probs = predict_proba(dataset.X, bank, s)
    return float(per_sample_losses(probs, dataset.y).mean())


def accuracy(dataset: LabeledDataset, bank: RuleBank, s) -> float:
    if dataset.N == 0:
        raise DataError("empty dataset")
    probs = predict_proba(dataset.X, bank, s)
    return float((probs.argmax(axis=1) == dataset.y).mean())
