"""FedFNN against FedAvg on label-skewed Gaussian blobs.

Both runs share the same clients, test splits and initial rules; FedAvg keeps
every rule on for every client and never restructures the bank.
"""

import dataclasses

import numpy as np

from fedfnn.datakit import PartitionSpec, dirichlet_proportions, make_blobs, normalize_mapminmax, partition_indices
from fedfnn.federation import ExperimentConfig, erl_run
from fedfnn.harness import fedavg_config

data = normalize_mapminmax(make_blobs(3000, 4, 6, 0.5, seed=2))
perm = np.random.default_rng(0).permutation(data.N)
train, test = data.subset(perm[:2400]), data.subset(perm[2400:])

props = dirichlet_proportions(6, PartitionSpec(alpha=0.5, clients=5, seed=7))
clients = [train.subset(i) for i in partition_indices(train.y, props, [7, 1])]
tests = [test.subset(i) for i in partition_indices(test.y, props, [7, 2])]
print("training samples per client:", [c.N for c in clients])

config = ExperimentConfig(clients=5, rules=15, erl_iterations=8, coop_rounds=10, seed=7)
for name, cfg in (("FedFNN", config), ("FedAvg", fedavg_config(config))):
    state, records = erl_run(cfg, clients, tests)
    ends = [r for r in records if r.round % cfg.coop_rounds == 0]
    print(f"\n{name}")
    for r in ends:
        print(f"  iteration {r.erl_iteration}: mean accuracy {r.mean_accuracy:.3f}, K = {r.K}")
    print("  final per-client accuracy:", np.round(records[-1].test_accuracy, 3))
    if name == "FedFNN":
        print("  final activation matrix (clients x rules):")
        print(state.activation)
