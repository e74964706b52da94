"""How the Dirichlet concentration controls label skew across five clients."""

import numpy as np

from fedfnn.datakit import PartitionSpec, dirichlet_partition, make_blobs

data = make_blobs(3000, 4, 6, 0.5, seed=0)

for alpha in (0.1, 0.5, 100.0):
    parts = dirichlet_partition(data, PartitionSpec(alpha=alpha, clients=5, seed=3))
    counts = np.array([np.bincount(p.y, minlength=6) for p in parts])
    print(f"alpha = {alpha}")
    print("  class:   " + " ".join(f"{c:5d}" for c in range(6)))
    for q, row in enumerate(counts):
        print(f"  client {q}: " + " ".join(f"{v:5d}" for v in row))
    share = counts.max(axis=0) / counts.sum(axis=0)
    print(f"  largest client share per class: {np.round(share, 2)}\n")
