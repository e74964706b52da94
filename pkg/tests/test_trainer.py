import numpy as np
import pytest

from conftest import random_bank, random_dataset
from fedfnn import _kernels
from fedfnn.errors import DataError, DivergenceError
from fedfnn.fnn import LabeledDataset, Rule, RuleBank, dataset_loss, one_hot
from fedfnn.grad import backward
from fedfnn.trainer import TrainConfig, batch_iterator, local_train

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


def test_batches_cover_indices_disjointly():
    batches = batch_iterator(4, 2, [0, 0])
    assert len(batches) == 2
    assert sorted(np.concatenate(batches).tolist()) == [0, 1, 2, 3]


def test_large_batch_is_single_permutation():
    (only,) = batch_iterator(7, 50, [3, 1])
    assert sorted(only.tolist()) == list(range(7))


def test_batches_are_deterministic():
    a = batch_iterator(100, 16, [9, 2])
    b = batch_iterator(100, 16, [9, 2])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = batch_iterator(100, 16, [9, 3])
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_learning_rate_leaves_bank_untouched(rng, backend):
    bank = random_bank(rng, 3, 2, 3)
    ds = random_dataset(rng, 30, 2, 3)
    new, loss = local_train(ds, bank, [1, 1, 1], TrainConfig(epochs=2, learning_rate=0.0, backend=backend))
    np.testing.assert_array_equal(new.theta, bank.theta)
    np.testing.assert_array_equal(new.m, bank.m)
    np.testing.assert_array_equal(new.sigma, bank.sigma)


def test_zero_epochs_returns_initial_loss(rng):
    bank = random_bank(rng, 3, 2, 3)
    ds = random_dataset(rng, 30, 2, 3)
    new, loss = local_train(ds, bank, [1, 0, 1], TrainConfig(epochs=0))
    np.testing.assert_array_equal(new.theta, bank.theta)
    assert loss == dataset_loss(ds, bank, [1, 0, 1])


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_sample_step_is_one_gradient_step(rng, backend):
    bank = random_bank(rng, 3, 4, 3)
    x, y = rng.normal(size=4), 2
    ds = LabeledDataset(x[None], np.array([y]), 3)
    lr = 0.1
    new, _ = local_train(ds, bank, [1, 1, 1], TrainConfig(epochs=1, learning_rate=lr, batch_size=1, backend=backend))
    _, g = backward(x, one_hot([y], 3)[0], bank, [1, 1, 1])
    np.testing.assert_allclose(new.m, bank.m - lr * g.dm, rtol=1e-13, atol=1e-16)
    np.testing.assert_allclose(new.sigma, bank.sigma - lr * g.dsigma, rtol=1e-13, atol=1e-16)
    np.testing.assert_allclose(new.theta, bank.theta - lr * g.dtheta, rtol=1e-13, atol=1e-16)


@pytest.mark.parametrize("backend", BACKENDS)
def test_inactive_rules_come_back_bit_identical(rng, backend):
    bank = random_bank(rng, 5, 3, 2)
    ds = random_dataset(rng, 40, 3, 2)
    s = np.array([0, 1, 0, 1, 1])
    new, _ = local_train(ds, bank, s, TrainConfig(epochs=3, learning_rate=0.5, batch_size=8, backend=backend))
    for k in (0, 2):
        assert np.array_equal(new.m[k], bank.m[k])
        assert np.array_equal(new.sigma[k], bank.sigma[k])
        assert np.array_equal(new.theta[k], bank.theta[k])
    assert not np.array_equal(new.theta[1], bank.theta[1])


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_compiled_epoch_agrees_with_numpy(rng):
    bank = random_bank(rng, 6, 4, 3)
    ds = random_dataset(rng, 150, 4, 3)
    s = np.array([1, 1, 0, 1, 0, 1])
    cfg = dict(epochs=3, learning_rate=0.2, batch_size=16, seed=5)
    a, la = local_train(ds, bank, s, TrainConfig(backend="numpy", **cfg))
    b, lb = local_train(ds, bank, s, TrainConfig(backend="numba", **cfg))
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(a.m, b.m, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-10, atol=1e-13)
    assert la == pytest.approx(lb, rel=1e-10)


def test_training_reduces_loss(rng):
    X = np.concatenate([rng.normal(-0.5, 0.2, (50, 2)), rng.normal(0.5, 0.2, (50, 2))])
    ds = LabeledDataset(X, np.repeat([0, 1], 50), 2)
    bank = random_bank(rng, 3, 2, 2, theta_scale=0.1)
    before = dataset_loss(ds, bank, [1, 1, 1])
    _, after = local_train(ds, bank, [1, 1, 1], TrainConfig(epochs=20, learning_rate=0.2, batch_size=10))
    assert after < before


def test_sigma_never_drops_below_clamp(rng):
    bank = random_bank(rng, 2, 2, 2, sigma_range=(0.0011, 0.0012))
    ds = random_dataset(rng, 20, 2, 2)
    new, _ = local_train(ds, bank, [1, 1], TrainConfig(epochs=3, learning_rate=5.0, batch_size=4))
    assert new.sigma.min() >= 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("backend", BACKENDS)
def test_divergence_is_reported(rng, backend):
    # logits overflow to +/-inf, their difference is nan
    bank = random_bank(rng, 2, 2, 2, theta_scale=1e306)
    ds = LabeledDataset(100 * rng.uniform(-1, 1, (20, 2)), rng.integers(0, 2, 20), 2)
    with pytest.raises(DivergenceError, match="divergence"):
        local_train(ds, bank, [1, 1], TrainConfig(epochs=1, learning_rate=0.1, batch_size=4, backend=backend))


def test_empty_dataset_rejected(rng):
    bank = random_bank(rng, 2, 2, 2)
    with pytest.raises(DataError):
        local_train(LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2), bank, [1, 1], TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(backend="gpu")


def test_fifty_epochs_halve_the_loss_on_separable_blobs(rng):
    centers = np.array([[-0.5, -0.5], [0.5, 0.5]])
    y = np.repeat([0, 1], 100)
    ds = LabeledDataset(centers[y] + 0.1 * rng.standard_normal((200, 2)), y, 2)
    bank = RuleBank.from_rules([Rule(k, centers[k], np.ones(2), np.zeros((3, 2))) for k in range(2)])
    before = dataset_loss(ds, bank, [1, 1])
    _, after = local_train(ds, bank, [1, 1], TrainConfig(epochs=50, learning_rate=0.05))
    assert after <= 0.5 * before
