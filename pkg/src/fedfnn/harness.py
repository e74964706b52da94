"""
Experiment runner: repeated k-fold evaluation of FedFNN and the FedAvg baseline.

Per repeat the normalized table is noised once and split into folds; each fold's
training part is spread over clients with Dirichlet label skew, and its test
part is spread with the same class proportions, so every client is scored on
data drawn like its own.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .datakit import (
    PartitionSpec,
    dirichlet_proportions,
    inject_noise,
    kfold_split,
    load_csv,
    normalize_mapminmax,
    partition_indices,
)
from .errors import ConfigError, DivergenceError
from .federation import ExperimentConfig, RoundRecord, derive_seed, erl_run
from .fnn import LabeledDataset, predict_proba

log = logging.getLogger(__name__)


def param_count(D: int, C: int, K: int) -> int:
    """Trainable parameters of K rules: D centers, D spreads, (D+1) x C consequents."""
    for name, v in (("D", D), ("C", C), ("K", K)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer")
    return K * (2 * D + (D + 1) * C)


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    out: str | None = None
    alpha: float = 0.5
    uncertainty: float = 0.1
    noise_mode: str = "samples"
    clients: int = 5
    rules: int = 15
    erl_iters: int = 15
    coop_rounds: int = 10
    beta: float = 0.7
    lr: float = 0.05
    epochs: int = 1
    batch: int = 64
    folds: int = 5
    repeats: int = 1
    seed: int = 0
    baseline: str = "none"

    def __post_init__(self):
        if self.baseline not in ("none", "fedavg"):
            raise ConfigError(f"baseline must be 'fedavg' or 'none', got {self.baseline!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    def experiment(self, seed: int, **switches) -> ExperimentConfig:
        try:
            return ExperimentConfig(
                clients=self.clients, rules=self.rules, epochs=self.epochs, learning_rate=self.lr,
                batch_size=self.batch, coop_rounds=self.coop_rounds, erl_iterations=self.erl_iters,
                beta=self.beta, alpha=self.alpha, uncertainty=self.uncertainty, seed=seed,
                folds=self.folds, **switches,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def as_dict(self) -> dict[str, Any]:
        """Experiment settings; the output location is left out so metrics files do not depend on it."""
        d = dataclasses.asdict(self)
        del d["out"]
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str, "str | None": str}


def _coerce(key: str, value: Any) -> Any:
    key = key.strip().replace("-", "_")
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    if value is None or not isinstance(value, str):
        return key, value
    cast = _CASTS[str(_FIELDS[key].type)]
    try:
        if cast is int:
            return key, int(float(value)) if float(value).is_integer() else int(value)
        return key, cast(value.strip())
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = line.split("=", 1)
        k, v = _coerce(key, value.strip())
        out[k] = v
    return out


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(path)))
        if values.get("dataset") and not Path(values["dataset"]).is_absolute():
            values["dataset"] = str(path.parent / values["dataset"])
    for key, value in (overrides or {}).items():
        if value is not None:
            k, v = _coerce(key, value)
            values[k] = v
    return RunConfig(**values)


# -- metrics ------------------------------------------------------------------


@dataclass
class FoldRun:
    repeat: int
    fold: int
    seed: int
    rounds: list[RoundRecord] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)       # per client, final model
    class_accuracy: list[float] = field(default_factory=list)
    rule_ids: list[int] = field(default_factory=list)
    activation: np.ndarray | None = None
    failed: str | None = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.nanmean(self.accuracy)) if self.accuracy else float("nan")

    @property
    def final_K(self) -> int:
        return len(self.rule_ids)

    def iteration_accuracy(self) -> list[float]:
        """Mean client accuracy at the end of each ERL iteration's cooperation block."""
        last: dict[int, float] = {}
        for rec in self.rounds:
            last[rec.erl_iteration] = rec.mean_accuracy
        return [last[i] for i in sorted(last)]


@dataclass
class RunMetrics:
    mode: str
    config: dict[str, Any]
    runs: list[FoldRun] = field(default_factory=list)
    wall_time: float = 0.0
    baseline: "RunMetrics | None" = None

    @property
    def ok_runs(self) -> list[FoldRun]:
        return [r for r in self.runs if r.failed is None]

    def summary(self) -> dict[str, Any]:
        ok = self.ok_runs
        accs = [r.mean_accuracy for r in ok]
        curves = [r.iteration_accuracy() for r in ok]
        curve = np.nanmean(np.array(curves), axis=0).tolist() if curves and curves[0] else []
        return {
            "mode": self.mode,
            "runs": len(self.runs),
            "failed": len(self.runs) - len(ok),
            "mean_accuracy": float(np.mean(accs)) if accs else None,
            "std_accuracy": float(np.std(accs)) if accs else None,
            "mean_final_K": float(np.mean([r.final_K for r in ok])) if ok else None,
            "iteration_accuracy": curve,
            "total_rounds": sum(len(r.rounds) for r in self.runs),
        }


def _class_accuracy(bank, activation, tests: Sequence[LabeledDataset], n_classes: int) -> list[float]:
    hits = np.zeros(n_classes)
    counts = np.zeros(n_classes)
    for q, ds in enumerate(tests):
        if ds.N == 0:
            continue
        pred = predict_proba(ds.X, bank, activation[q]).argmax(axis=1)
        np.add.at(counts, ds.y, 1)
        np.add.at(hits, ds.y, pred == ds.y)
    with np.errstate(invalid="ignore"):
        return (hits / counts).tolist()


def _execute(cfg: ExperimentConfig, train: Sequence[LabeledDataset], test: Sequence[LabeledDataset],
             run: FoldRun) -> FoldRun:
    try:
        state, records = erl_run(cfg, train, test)
    except DivergenceError as exc:
        run.failed = str(exc)
        warnings.warn(f"run repeat={run.repeat} fold={run.fold} failed: {exc}", RuntimeWarning, stacklevel=2)
        return run
    run.rounds = records
    run.accuracy = list(records[-1].test_accuracy) if records else []
    run.class_accuracy = _class_accuracy(state.bank, state.activation, test, train[0].C)
    run.rule_ids = state.bank.ids.tolist()
    run.activation = state.activation.copy()
    return run


def fedavg_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return dataclasses.replace(cfg, evolution=False, spawning=False, initial_activation="ones")


def fedavg_baseline(config: ExperimentConfig, client_datasets: Sequence[LabeledDataset],
                    test_datasets: Sequence[LabeledDataset] | None = None) -> RunMetrics:
    """Same pipeline with every rule active for every client and no evolution."""
    t0 = time.perf_counter()
    tests = test_datasets if test_datasets is not None else client_datasets
    run = _execute(fedavg_config(config), client_datasets, tests, FoldRun(0, 0, config.seed))
    return RunMetrics("fedavg", dataclasses.asdict(config), [run], time.perf_counter() - t0)


def client_splits(train: LabeledDataset, test: LabeledDataset, cfg: RunConfig, seed: int):
    props = dirichlet_proportions(train.n_classes, PartitionSpec(cfg.alpha, cfg.clients, seed))
    ptrain = [train.subset(i) for i in partition_indices(train.y, props, [seed, 1])]
    ptest = [test.subset(i) for i in partition_indices(test.y, props, [seed, 2])]
    return ptrain, ptest


def run_protocol(cfg: RunConfig, data: LabeledDataset) -> RunMetrics:
    """Noise, k-fold, partition and train on an already normalized dataset."""
    t0 = time.perf_counter()
    metrics = RunMetrics("fedfnn", cfg.as_dict())
    base = RunMetrics("fedavg", cfg.as_dict()) if cfg.baseline == "fedavg" else None
    for r in range(cfg.repeats):
        rseed = derive_seed(cfg.seed, r)
        noisy = inject_noise(data, cfg.uncertainty, [rseed, 0], mode=cfg.noise_mode)
        for f, (train, test) in enumerate(kfold_split(noisy, cfg.folds, [rseed, 1])):
            fseed = derive_seed(rseed, f)
            ptrain, ptest = client_splits(train, test, cfg, fseed)
            exp = cfg.experiment(fseed)
            run = _execute(exp, ptrain, ptest, FoldRun(r, f, fseed))
            metrics.runs.append(run)
            log.info("repeat %d fold %d: FedFNN accuracy %.4f, K=%d", r, f, run.mean_accuracy, run.final_K)
            if base is not None:
                brun = _execute(fedavg_config(exp), ptrain, ptest, FoldRun(r, f, fseed))
                base.runs.append(brun)
                log.info("repeat %d fold %d: FedAvg accuracy %.4f", r, f, brun.mean_accuracy)
    metrics.wall_time = time.perf_counter() - t0
    if base is not None:
        base.wall_time = metrics.wall_time
        metrics.baseline = base
    return metrics


def run_experiment(config=None, overrides: Mapping[str, Any] | None = None) -> RunMetrics:
    """Full pipeline from a config file (or RunConfig) to metrics files.

    Files are written only when ``out`` is set.
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config, overrides)
    if isinstance(config, RunConfig) and overrides:
        cfg = dataclasses.replace(cfg, **dict(_coerce(k, v) for k, v in overrides.items() if v is not None))
    if not cfg.dataset:
        raise ConfigError("no dataset given")
    if not Path(cfg.dataset).is_file():
        raise ConfigError(f"dataset file not found: {cfg.dataset}")
    data = normalize_mapminmax(load_csv(cfg.dataset))
    metrics = run_protocol(cfg, data)
    if cfg.out:
        emit_metrics(metrics, cfg.out)
    return metrics


# -- output -------------------------------------------------------------------


def _num(v) -> Any:
    if v is None:
        return None
    v = float(v)
    return None if np.isnan(v) else v


def emit_metrics(metrics: RunMetrics, out_dir) -> list[Path]:
    """Write summary.json, rounds.csv and one activation CSV per run.

    Wall time goes to timing.json so the other files stay reproducible.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    summary = {
        "config": metrics.config,
        "summary": metrics.summary(),
        "runs": [
            {
                "repeat": r.repeat,
                "fold": r.fold,
                "seed": r.seed,
                "failed": r.failed,
                "mean_accuracy": _num(r.mean_accuracy) if r.failed is None else None,
                "client_accuracy": [_num(a) for a in r.accuracy],
                "class_accuracy": [_num(a) for a in r.class_accuracy],
                "final_K": r.final_K,
                "rule_ids": r.rule_ids,
            }
            for r in metrics.runs
        ],
    }
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)

    path = out / "rounds.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["repeat", "fold", "round", "erl_iteration", "K", "client",
                    "train_loss", "test_accuracy", "mean_accuracy"])
        for r in metrics.runs:
            for rec in r.rounds:
                for q, loss in enumerate(rec.train_loss):
                    acc = rec.test_accuracy[q] if rec.test_accuracy is not None else ""
                    w.writerow([r.repeat, r.fold, rec.round, rec.erl_iteration, rec.K, q,
                                repr(float(loss)), repr(float(acc)) if acc != "" else "",
                                repr(rec.mean_accuracy) if rec.mean_accuracy is not None else ""])
    written.append(path)

    for r in metrics.runs:
        if r.activation is None:
            continue
        path = out / f"activation_r{r.repeat}_f{r.fold}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["client", *[f"rule_{i}" for i in r.rule_ids]])
            for q, row in enumerate(r.activation):
                w.writerow([q, *row.tolist()])
        written.append(path)

    (out / "timing.json").write_text(json.dumps({"wall_time_s": metrics.wall_time}) + "\n", encoding="utf-8")
    if metrics.baseline is not None:
        written.extend(emit_metrics(metrics.baseline, out / "baseline"))
    return written
