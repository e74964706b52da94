"""Local client training: E epochs of shuffled mini-batch SGD on active rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError, DivergenceError
from .fnn import PROB_EPS, SIGMA_MIN, LabeledDataset, RuleBank, dataset_loss
from .grad import batch_backward


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    backend: str = "auto"   # "numpy", "numba", or "auto" (numba when importable)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs > 0 and not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.backend not in ("auto", "numpy", "numba"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "numba" and not _kernels.HAVE_NUMBA:
            raise ValueError("numba backend requested but numba is not installed")

    @property
    def use_numba(self) -> bool:
        return self.backend == "numba" or (self.backend == "auto" and _kernels.HAVE_NUMBA)


def epoch_order(n: int, epoch_seed) -> np.ndarray:
    return np.random.default_rng(epoch_seed).permutation(n)


def batch_iterator(n: int | LabeledDataset, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded permutation of range(n) cut into consecutive batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(n, LabeledDataset):
        n = n.N
    perm = epoch_order(n, epoch_seed)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _numpy_epoch(X, y, order, batch_size, m, sigma, theta, lr) -> bool:
    ids = np.arange(m.shape[0])
    ones = np.ones(m.shape[0], dtype=np.int8)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        loss, g = batch_backward(X[idx], y[idx], RuleBank(ids, m, sigma, theta), ones)
        if not np.isfinite(loss):
            return False
        m -= lr * g.dm
        np.maximum(sigma - lr * g.dsigma, SIGMA_MIN, out=sigma)
        theta -= lr * g.dtheta
    return True


def local_train(dataset: LabeledDataset, bank: RuleBank, s_row, cfg: TrainConfig) -> tuple[RuleBank, float]:
    """Train a private copy of ``bank`` on ``dataset`` with rows masked by ``s_row``.

    Returns the updated bank and the mean training loss after the final step.
    Rules with s = 0 come back untouched.
    """
    if dataset.N == 0:
        raise DataError("empty dataset")
    active = np.flatnonzero(np.asarray(s_row))
    m = bank.m[active].copy()
    sigma = bank.sigma[active].copy()
    theta = bank.theta[active].copy()
    X = np.ascontiguousarray(dataset.X)
    lr = float(cfg.learning_rate)

    for epoch in range(cfg.epochs):
        order = epoch_order(dataset.N, [cfg.seed, epoch])
        if cfg.use_numba:
            ok = _kernels.sgd_epoch(X, dataset.y, order, cfg.batch_size, m, sigma, theta, lr, SIGMA_MIN, PROB_EPS)
        else:
            ok = _numpy_epoch(X, dataset.y, order, cfg.batch_size, m, sigma, theta, lr)
        if not ok:
            raise DivergenceError(f"divergence: non-finite loss in epoch {epoch}")

    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(theta))):
        raise DivergenceError("divergence: non-finite parameters after training")
    full_m, full_sigma, full_theta = bank.m.copy(), bank.sigma.copy(), bank.theta.copy()
    full_m[active], full_sigma[active], full_theta[active] = m, sigma, theta
    updated = bank.replace_params(full_m, full_sigma, full_theta)
    final = dataset_loss(dataset, updated, s_row)
    if not np.isfinite(final):
        raise DivergenceError("divergence: non-finite final loss")
    return updated, final
