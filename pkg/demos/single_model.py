"""A fuzzy rule bank on one machine: forward pass, gradient check, a few epochs of SGD."""

import numpy as np

from fedfnn.datakit import make_blobs, normalize_mapminmax
from fedfnn.federation import init_bank
from fedfnn.fnn import accuracy, dataset_loss, firing_strengths, one_hot
from fedfnn.grad import backward, finite_difference_gradient, relative_error
from fedfnn.trainer import TrainConfig, local_train

rng = np.random.default_rng(0)
data = normalize_mapminmax(make_blobs(600, 2, 3, 0.3, seed=1))
bank = init_bank(K=6, D=2, C=3, rng=rng)
s = np.ones(bank.K, dtype=np.int8)

x = data.X[0]
print("firing strengths of the first sample:", np.round(firing_strengths(x, bank, s), 3))

# the analytic gradient against central differences
_, g = backward(x, one_hot([data.y[0]], 3)[0], bank, s)
fd = finite_difference_gradient(x, one_hot([data.y[0]], 3)[0], bank, s)
print(f"max relative gradient error: {relative_error(g.flat(), fd.flat()).max():.2e}")

print(f"before training: loss {dataset_loss(data, bank, s):.3f}, accuracy {accuracy(data, bank, s):.3f}")
for epochs in (5, 20):
    trained, loss = local_train(data, bank, s, TrainConfig(epochs=epochs, learning_rate=0.2, batch_size=32))
    print(f"after {epochs:2d} epochs:  loss {loss:.3f}, accuracy {accuracy(data, trained, s):.3f}")

# switching rules off only renormalizes over the rest
s_half = np.array([1, 1, 1, 0, 0, 0], dtype=np.int8)
print("half the rules:", np.round(firing_strengths(x, trained, s_half), 3))
