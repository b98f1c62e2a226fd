"""Deterministic training loop, learning-rate selection and multi-seed benchmarks."""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .events import DatasetSplit, pad_batch
from .exceptions import AbortStep, EmptyBatch, NumericalUnderflow, TrainingDiverged
from .loss import LossTerms, Objective, build_objective
from .optim import AdamState, adam_step
from .tpp.base import concat_positions

LEARNING_RATES = (1e-2, 1e-3, 1e-4)
SEEDS = (2019, 2020, 2021, 2022, 2023)
TRACE_COLUMNS = ("epoch", "split", "mark_nll", "time_nll", "time_mse", "sigma1", "sigma2",
                 "sigma3", "total")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 16
    grad_accumulation: int = 4
    max_epochs: int = 100
    patience: int = 10
    seeds: tuple = SEEDS
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reduction: str = "per_event_mean"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        for name in ("learning_rate", "batch_size", "grad_accumulation", "max_epochs", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class TrainingTrace:
    """Per-epoch loss rows plus the selected epoch."""

    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_nll: float = math.inf
    epochs_run: int = 0
    objective: Objective | None = None

    def column(self, name, split="val"):
        return [r[name] for r in self.rows if r["split"] == split]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})

    def __eq__(self, other):
        return isinstance(other, TrainingTrace) and self.rows == other.rows \
            and self.best_epoch == other.best_epoch


def _split_parts(split):
    if isinstance(split, DatasetSplit):
        return list(split.train), list(split.val)
    train, val = split[0], split[1]
    return list(train), list(val)


class _Evaluator:
    """Batches of sequences to summed terms; caches positions when the state is static."""

    def __init__(self, model, seqs):
        self.model = model
        self.seqs = [s for s in seqs if len(s) >= 2]
        self.cache = None
        if model.state_is_static:
            self.cache = [model.positions(pad_batch([s])) for s in self.seqs]

    def batch(self, idx):
        if self.cache is not None:
            return concat_positions([self.cache[i] for i in idx])
        return pad_batch([self.seqs[i] for i in idx])

    def totals(self, chunk=256):
        sums, count = np.zeros(3), 0
        for start in range(0, len(self.seqs), chunk):
            idx = range(start, min(start + chunk, len(self.seqs)))
            res = self.model.loss_terms(self.batch(idx), weights=(0.0, 0.0, 0.0), need_grad=False)
            sums += res.sums
            count += res.count
        return sums, count


def _row(epoch, split, terms: LossTerms, objective: Objective):
    sigma = objective.sigma
    return {"epoch": epoch, "split": split, "mark_nll": terms.mark_nll,
            "time_nll": terms.time_nll, "time_mse": terms.time_mse,
            "sigma1": float(sigma[0]), "sigma2": float(sigma[1]), "sigma3": float(sigma[2]),
            "total": objective.value(terms.as_array())}


def train_model(model, split, objective="uwm", config: TrainConfig | None = None, seed=2019,
                init=True, trace_path=None):
    """Fit ``model`` in place and return ``(model, trace)``.

    Parameters
    ----------
    split : DatasetSplit or (train, val) pair
        Validation sequences drive early stopping through the unweighted
        mark + time NLL per event; with no validation events the training
        NLL is used instead.
    objective : str or Objective
        Training objective; a fresh copy of its weights is trained.
    init : bool
        Draw fresh initial parameters from ``seed``.

    Returns
    -------
    model : TPPModel
        Parameters restored to the best-validation epoch.
    trace : TrainingTrace

    Raises
    ------
    TrainingDiverged
        If a loss or gradient becomes non-finite.
    """
    config = config or TrainConfig()
    if isinstance(objective, Objective):
        objective = build_objective(objective.variant, None if objective.weights is None
                                    else objective.sigma)
    else:
        objective = build_objective(objective)
    train, val = _split_parts(split)
    rng = np.random.default_rng(seed)
    if init:
        model.init_params(rng, train)
    train_eval = _Evaluator(model, train)
    if not train_eval.seqs:
        raise EmptyBatch("no training sequence has two or more events")
    val_eval = _Evaluator(model, val)
    n_model = model.n_params
    sigma_s = objective.weights.s if objective.weights is not None else np.zeros(0)
    theta = np.concatenate([model.params, sigma_s if objective.learn_sigma else np.zeros(0)])
    state = AdamState.zeros(len(theta))
    mean = config.reduction == "per_event_mean"
    trace = TrainingTrace()
    best_theta = theta.copy()
    bad_epochs = 0
    n = len(train_eval.seqs)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        batches = [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]
        ep_sums, ep_count = np.zeros(3), 0
        for step, start in enumerate(range(0, len(batches), config.grad_accumulation)):
            group = batches[start:start + config.grad_accumulation]
            weights = objective.term_weights()
            grad, sums, count = np.zeros(n_model), np.zeros(3), 0
            try:
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    for idx in group:
                        res = model.loss_terms(train_eval.batch(idx), weights, training=True,
                                               rng=rng)
                        grad += res.grad
                        sums += res.sums
                        count += res.count
                if count == 0:
                    continue
                ell = sums / count if mean else sums
                g = grad / count if mean else grad
                if objective.learn_sigma:
                    g = np.concatenate([g, objective.grad_s(ell)])
                theta, state = adam_step(theta, g, state, config.learning_rate, config.beta1,
                                         config.beta2, config.eps)
            except (AbortStep, NumericalUnderflow, FloatingPointError) as exc:
                raise TrainingDiverged(epoch, step, str(exc)) from exc
            model.params = theta[:n_model]
            if objective.learn_sigma:
                objective.weights.s = theta[n_model:].copy()
            ep_sums += sums
            ep_count += count
        trace.rows.append(_row(epoch, "train", LossTerms.from_sums(ep_sums, ep_count,
                                                                   config.reduction), objective))
        try:
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                v_sums, v_count = val_eval.totals() if val_eval.seqs else train_eval.totals()
        except NumericalUnderflow as exc:
            raise TrainingDiverged(epoch, -1, str(exc)) from exc
        v_terms = LossTerms.from_sums(v_sums, v_count)
        trace.rows.append(_row(epoch, "val", v_terms, objective))
        trace.epochs_run = epoch
        val_nll = v_terms.nll
        if not math.isfinite(val_nll):
            raise TrainingDiverged(epoch, -1, "validation NLL is not finite")
        if val_nll < trace.best_val_nll:
            trace.best_val_nll = val_nll
            trace.best_epoch = epoch
            best_theta = theta.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= config.patience:
            break
    model.params = best_theta[:n_model].copy()
    if objective.learn_sigma:
        objective.weights.s = best_theta[n_model:].copy()
    trace.objective = objective
    if trace_path is not None:
        trace.write_csv(trace_path)
    return model, trace


def select_learning_rate(make_model, split, objective="uwm", config: TrainConfig | None = None,
                         seed=2019, grid=LEARNING_RATES):
    """Train once per learning rate and keep the best validation NLL.

    Returns ``(best_lr, {lr: best_val_nll})``; diverged runs score ``inf``.
    """
    config = config or TrainConfig()
    scores = {}
    for lr in grid:
        cfg = TrainConfig(**{**config.to_dict(), "learning_rate": lr})
        try:
            _, trace = train_model(make_model(), split, objective, cfg, seed)
            scores[lr] = trace.best_val_nll
        except TrainingDiverged:
            scores[lr] = math.inf
    best = min(grid, key=lambda lr: (scores[lr], grid.index(lr)))
    return best, scores


def _mean_std(values):
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass
class RunReport:
    """Grid results: per-seed metrics and their mean and population std per cell."""

    cells: dict = field(default_factory=dict)

    def add(self, model_name, objective, seed, metrics=None, error=None, best_epoch=None,
            wall_time=0.0, metrics_path=None):
        cell = self.cells.setdefault(f"{model_name}/{objective}",
                                     {"model": model_name, "objective": objective, "runs": []})
        run = {"seed": int(seed), "best_epoch": best_epoch, "wall_time": float(wall_time)}
        if metrics_path is not None:
            run["metrics_path"] = metrics_path
        if error is not None:
            run["error"] = error
        else:
            run["metrics"] = metrics
        cell["runs"].append(run)

    def summary(self):
        out = {}
        for key, cell in self.cells.items():
            ok = [r for r in cell["runs"] if "metrics" in r]
            entry = {"model": cell["model"], "objective": cell["objective"],
                     "n_runs": len(cell["runs"]), "failed": len(ok) < len(cell["runs"])}
            if ok:
                for name in sorted(ok[0]["metrics"]):
                    mu, sd = _mean_std([r["metrics"][name] for r in ok])
                    entry[f"{name}_mean"], entry[f"{name}_std"] = mu, sd
            out[key] = entry
        return out

    def to_dict(self):
        return {"cells": self.cells, "summary": self.summary()}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        rows = list(self.summary().values())
        cols = ["model", "objective", "n_runs", "failed"]
        cols += sorted({k for r in rows for k in r} - set(cols))
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow(r)


def run_benchmark(models, objectives, split, config: TrainConfig | None = None, evaluate=None,
                  eval_config=None, out_dir=None):
    """Train every model factory under every objective and seed.

    Parameters
    ----------
    models : dict of name -> zero-argument model factory
    objectives : list of objective variant names
    split : DatasetSplit
    evaluate : callable, optional
        ``evaluate(model, test_seqs, eval_config) -> MetricsReport``; defaults to
        :func:`ammtpp.evaluation.evaluate`.
    out_dir : str, optional
        If given, each run writes ``runs/<model>_<objective>_<seed>/`` with
        ``metrics.json``, ``checkpoint.json`` and ``trace.csv``; the report
        records the relative metrics path.

    Returns
    -------
    RunReport
        Failed runs are recorded with their error; the grid continues.
    """
    if not models or not objectives:
        raise ValueError("need at least one model and one objective")
    config = config or TrainConfig()
    if evaluate is None:
        from .evaluation import evaluate
    report = RunReport()
    for name, factory in models.items():
        for variant in objectives:
            for seed in config.seeds:
                t0 = time.perf_counter()
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        model, trace = train_model(factory(), split, variant, config, seed)
                        result = evaluate(model, list(split.test), eval_config)
                    path = None
                    if out_dir is not None:
                        rel = os.path.join("runs", f"{name}_{variant}_{seed}")
                        os.makedirs(os.path.join(out_dir, rel), exist_ok=True)
                        path = os.path.join(rel, "metrics.json")
                        with open(os.path.join(out_dir, path), "w") as fh:
                            fh.write(result.to_json())
                        model.save(os.path.join(out_dir, rel, "checkpoint.json"))
                        trace.write_csv(os.path.join(out_dir, rel, "trace.csv"))
                    report.add(name, variant, seed, result.flat(), best_epoch=trace.best_epoch,
                               wall_time=time.perf_counter() - t0, metrics_path=path)
                except Exception as exc:  # noqa: BLE001 - record and continue
                    report.add(name, variant, seed, error=f"{type(exc).__name__}: {exc}",
                               wall_time=time.perf_counter() - t0)
    return report
