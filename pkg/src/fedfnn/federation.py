"""
Server-side evolutionary rule learning.

One ERL iteration is ``L`` cooperation rounds followed by one evolution stage:

* cooperation: every client trains its active rules on private data, then the
  server replaces each global rule by the size-weighted mean of the local
  copies from the clients that have it active;
* evolution: clients report per-rule contribution factors, the server
  deactivates weak rules, spawns a private rule for any client that is both
  stagnating and worse than average (or left with no rules), and drops rules
  no client uses.

The server never touches raw samples; it only sees trained banks, losses and
contribution factors returned by the client-side functions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DivergenceError, EmptyRuleBankError
from .fnn import LabeledDataset, Rule, RuleBank, accuracy, forward
from .trainer import TrainConfig, local_train

log = logging.getLogger(__name__)

# independent RNG streams derived from the experiment seed
_STREAM_BANK, _STREAM_ACTIVATION, _STREAM_TRAIN, _STREAM_SPAWN = range(4)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, keys)])


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    clients: int = 5
    rules: int = 15
    epochs: int = 1
    learning_rate: float = 0.05
    batch_size: int = 64
    coop_rounds: int = 10
    erl_iterations: int = 15
    beta: float = 0.7
    alpha: float = 0.5
    uncertainty: float = 0.1
    seed: int = 0
    folds: int = 5
    # switches used to express the FedAvg baseline as a degenerate ERL run
    evolution: bool = True
    spawning: bool = True
    initial_activation: str = "random"

    def __post_init__(self):
        checks = [
            (self.clients >= 1, "clients must be >= 1"),
            (self.rules >= 1, "rules must be >= 1"),
            (self.coop_rounds >= 1, "coop_rounds must be >= 1"),
            (self.erl_iterations >= 0, "erl_iterations must be >= 0"),
            (self.beta >= 0, "beta must be non-negative"),
            (self.alpha > 0, "alpha must be positive"),
            (0.0 <= self.uncertainty <= 1.0, "uncertainty must lie in [0, 1]"),
            (self.initial_activation in ("random", "ones"), "initial_activation must be 'random' or 'ones'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class ClientState:
    client_id: int
    dataset: LabeledDataset
    loss_history: list[float] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.dataset.N


@dataclass
class ServerState:
    bank: RuleBank
    activation: np.ndarray          # (Q, K) of 0/1
    clients: list[ClientState]
    config: ExperimentConfig
    round: int = 0

    def __post_init__(self):
        self.activation = np.asarray(self.activation, dtype=np.int8)
        if self.activation.shape != (len(self.clients), self.bank.K):
            raise ValueError(
                f"activation shape {self.activation.shape} does not match "
                f"{len(self.clients)} clients x {self.bank.K} rules"
            )

    @property
    def K(self) -> int:
        return self.bank.K

    def copy(self) -> "ServerState":
        clients = [replace(c, loss_history=list(c.loss_history)) for c in self.clients]
        return replace(self, activation=self.activation.copy(), clients=clients)


@dataclass
class RoundRecord:
    round: int
    erl_iteration: int
    K: int
    train_loss: list[float]
    test_accuracy: list[float] | None
    activation: np.ndarray

    @property
    def mean_accuracy(self) -> float | None:
        if self.test_accuracy is None:
            return None
        return float(np.mean(self.test_accuracy))


# -- initialization -----------------------------------------------------------


def random_rule(rule_id: int, D: int, C: int, rng: np.random.Generator) -> Rule:
    return Rule(
        rule_id,
        m=rng.uniform(-1.0, 1.0, D),
        sigma=np.ones(D),
        theta=rng.uniform(-0.1, 0.1, (D + 1, C)),
    )


def init_bank(K: int, D: int, C: int, rng: np.random.Generator) -> RuleBank:
    return RuleBank.from_rules([random_rule(k, D, C, rng) for k in range(K)])


def init_activation(Q: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(0.5) statuses; rows with no active rule are redrawn."""
    act = rng.integers(0, 2, size=(Q, K), dtype=np.int8)
    for q in range(Q):
        while not act[q].any():
            act[q] = rng.integers(0, 2, size=K, dtype=np.int8)
    return act


def init_state(config: ExperimentConfig, client_datasets: Sequence[LabeledDataset]) -> ServerState:
    if len(client_datasets) != config.clients:
        raise ValueError(f"expected {config.clients} client datasets, got {len(client_datasets)}")
    D, C = client_datasets[0].D, client_datasets[0].C
    bank = init_bank(config.rules, D, C, derive_rng(config.seed, _STREAM_BANK))
    if config.initial_activation == "ones":
        act = np.ones((config.clients, config.rules), dtype=np.int8)
    else:
        act = init_activation(config.clients, config.rules, derive_rng(config.seed, _STREAM_ACTIVATION))
    clients = [ClientState(q, ds) for q, ds in enumerate(client_datasets)]
    return ServerState(bank, act, clients, config)


# -- cooperation stage --------------------------------------------------------


def aggregate_rule(k: int, local_banks: Sequence[RuleBank], activation_col, sizes, previous: Rule) -> Rule:
    """Activation-masked, size-weighted mean of rule ``k`` over client copies.

    With no activating client the previous global rule is carried over.
    """
    activation_col = np.asarray(activation_col)
    contributors = [q for q in range(len(local_banks)) if activation_col[q]]
    gamma = float(sum(sizes[q] for q in contributors))
    if gamma == 0:
        return previous
    weights = {q: sizes[q] / gamma for q in contributors}
    m = sum(weights[q] * local_banks[q].m[k] for q in contributors)
    sigma = sum(weights[q] * local_banks[q].sigma[k] for q in contributors)
    theta = sum(weights[q] * local_banks[q].theta[k] for q in contributors)
    return Rule(previous.id, m, sigma, theta)


def aggregate_bank(bank: RuleBank, local_banks: Sequence[RuleBank], activation: np.ndarray, sizes) -> RuleBank:
    return RuleBank.from_rules(
        [aggregate_rule(k, local_banks, activation[:, k], sizes, bank.rule(k)) for k in range(bank.K)]
    )


def train_config_for(config: ExperimentConfig, client_id: int, round_: int) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        seed=derive_seed(config.seed, _STREAM_TRAIN, client_id, round_),
    )


def cooperation_round(state: ServerState) -> ServerState:
    """Broadcast, train every client locally, record losses, aggregate."""
    new = state.copy()
    local_banks, losses = [], []
    for c in new.clients:
        row = new.activation[c.client_id]
        cfg = train_config_for(new.config, c.client_id, new.round)
        try:
            bank_q, loss_q = local_train(c.dataset, new.bank, row, cfg)
        except DivergenceError as exc:
            raise DivergenceError(
                f"divergence: client {c.client_id} in round {new.round} "
                f"(lr={cfg.learning_rate}, active rules={int(row.sum())}): {exc}"
            ) from exc
        local_banks.append(bank_q)
        losses.append(loss_q)
    for c, loss_q in zip(new.clients, losses):
        c.loss_history.append(loss_q)
    sizes = [c.size for c in new.clients]
    new.bank = aggregate_bank(new.bank, local_banks, new.activation, sizes)
    new.round += 1
    return new


# -- evolution stage ----------------------------------------------------------


def contribution_factors(client: ClientState, bank: RuleBank, s_row) -> np.ndarray:
    """Mean firing strength of every rule over the client's samples."""
    return forward(client.dataset.X, bank, s_row).h.mean(axis=0)


def activation_threshold(pi, s_row, beta: float) -> float:
    s_row = np.asarray(s_row)
    n_active = int(s_row.sum())
    if n_active == 0:
        raise ValueError("activation threshold needs at least one active rule")
    return beta * float(np.dot(s_row, pi)) / n_active


def update_statuses(pi, threshold: float) -> np.ndarray:
    return (np.asarray(pi) > threshold).astype(np.int8)


def mean_loss_increment(loss_history: Sequence[float], L: int) -> float:
    """Average of the last L round-to-round loss changes, summed term by term."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if len(loss_history) < L + 1:
        raise ValueError(f"need {L + 1} losses, got {len(loss_history)}")
    t = len(loss_history) - 1
    increments = [loss_history[t - l + 1] - loss_history[t - l] for l in range(1, L + 1)]
    return sum(increments) / L


def stagnation_check(loss_history: Sequence[float], L: int) -> bool:
    """True when the loss rose on average over the last L rounds; short histories never stagnate."""
    if len(loss_history) < L + 1:
        return False
    return mean_loss_increment(loss_history, L) > 0


def underperformance_check(client_loss: float, all_losses: Sequence[float]) -> bool:
    return client_loss - float(np.mean(all_losses)) > 0


def spawn_rule(state: ServerState, q: int, rng: np.random.Generator | None = None) -> ServerState:
    """Append a random rule active only for client ``q``."""
    if rng is None:
        rng = derive_rng(state.config.seed, _STREAM_SPAWN, state.round, q, state.bank.next_id())
    new = state.copy()
    rule = random_rule(new.bank.next_id(), new.bank.D, new.bank.C, rng)
    new.bank = new.bank.append(rule)
    col = np.zeros((len(new.clients), 1), dtype=np.int8)
    col[q] = 1
    new.activation = np.concatenate([new.activation, col], axis=1)
    return new


def prune_rules(state: ServerState) -> ServerState:
    """Drop every rule no client has active, keeping the order of the rest."""
    keep = np.flatnonzero(state.activation.sum(axis=0) > 0)
    if keep.size == state.K:
        return state
    if keep.size == 0:
        raise EmptyRuleBankError()
    new = state.copy()
    new.bank = new.bank.select(keep)
    new.activation = new.activation[:, keep]
    return new


@dataclass
class EvolutionReport:
    contributions: list[np.ndarray]
    thresholds: list[float]
    statuses: np.ndarray
    spawned_for: list[int]
    pruned_ids: list[int]


def evolution_stage(state: ServerState, report: bool = False):
    """Status update for every client, then spawning, then global pruning."""
    cfg = state.config
    new = state.copy()
    pis, thresholds = [], []
    for c in new.clients:
        row = new.activation[c.client_id]
        pi = contribution_factors(c, new.bank, row)
        thr = activation_threshold(pi, row, cfg.beta)
        new.activation[c.client_id] = update_statuses(pi, thr)
        pis.append(pi)
        thresholds.append(thr)
    statuses = new.activation.copy()

    latest = [c.loss_history[-1] for c in new.clients if c.loss_history]
    spawned = []
    for c in new.clients:
        q = c.client_id
        starving = not new.activation[q].any()
        struggling = (
            cfg.spawning
            and len(latest) == len(new.clients)
            and stagnation_check(c.loss_history, cfg.coop_rounds)
            and underperformance_check(c.loss_history[-1], latest)
        )
        if starving or struggling:
            new = spawn_rule(new, q)
            spawned.append(q)

    before = set(new.bank.ids.tolist())
    new = prune_rules(new)
    pruned = sorted(before - set(new.bank.ids.tolist()))
    if spawned or pruned:
        log.debug("round %d: spawned for %s, pruned %s, K=%d", new.round, spawned, pruned, new.K)
    if report:
        return new, EvolutionReport(pis, thresholds, statuses, spawned, pruned)
    return new


# -- outer loop ---------------------------------------------------------------


def evaluate(state: ServerState, test_datasets: Sequence[LabeledDataset]) -> list[float]:
    """Per-client test accuracy, each client using its own activation row."""
    return [
        accuracy(ds, state.bank, state.activation[q]) if ds.N else float("nan")
        for q, ds in enumerate(test_datasets)
    ]


def erl_run(
    config: ExperimentConfig,
    client_datasets: Sequence[LabeledDataset],
    test_datasets: Sequence[LabeledDataset] | None = None,
) -> tuple[ServerState, list[RoundRecord]]:
    """Run ``erl_iterations`` blocks of cooperation rounds plus evolution."""
    state = init_state(config, client_datasets)
    records = []
    for it in range(config.erl_iterations):
        for _ in range(config.coop_rounds):
            state = cooperation_round(state)
            acc = evaluate(state, test_datasets) if test_datasets is not None else None
            records.append(RoundRecord(
                round=state.round,
                erl_iteration=it + 1,
                K=state.K,
                train_loss=[c.loss_history[-1] for c in state.clients],
                test_accuracy=acc,
                activation=state.activation.copy(),
            ))
        if config.evolution:
            state = evolution_stage(state)
    return state, records
