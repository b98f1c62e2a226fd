import csv
import json

import numpy as np
import pytest

from ammtpp.events import DatasetSplit, EventSequence, chronological_split
from ammtpp.exceptions import AbortStep, TrainingDiverged
from ammtpp.evaluation import MetricsReport
from ammtpp.optim import AdamState, adam_step
from ammtpp.tpp import RMTPP, Hawkes, LogNormMix
from ammtpp.train import (SEEDS, RunReport, TrainConfig, run_benchmark, select_learning_rate,
                          train_model)


def constant_gap_split(gap=5, n=60, length=30):
    rng = np.random.default_rng(2019)
    seqs = [EventSequence(f"c{i:03d}", 1 + 1000 * i + gap * np.arange(length),
                          rng.integers(0, 3, length)) for i in range(n)]
    return chronological_split(seqs)


def small_split(n=12, length=8, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(n):
        t = 1 + 500 * i + np.cumsum(rng.integers(1, 20, length))
        seqs.append(EventSequence(f"s{i:02d}", t, rng.integers(0, 4, length)))
    return chronological_split(seqs)


def tiny_rmtpp(**kw):
    return RMTPP(n_marks=31, hidden_size=8, **kw)


class TestAdam:
    def test_zero_gradient(self):
        p, s = adam_step(np.array([1.0, 2.0]), np.zeros(2), AdamState.zeros(2), 0.1)
        assert p.tolist() == [1.0, 2.0] and s.t == 1

    def test_first_step(self):
        p, _ = adam_step(np.array([0.0]), np.array([1.0]), AdamState.zeros(1), 0.1)
        assert p[0] == pytest.approx(-0.1, rel=1e-6)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(5)
            p, s = np.zeros(4), AdamState.zeros(4)
            for _ in range(100):
                p, s = adam_step(p, rng.normal(size=4), s, 0.01)
            return p
        assert np.array_equal(run(), run())

    def test_pure(self):
        st = AdamState.zeros(1)
        adam_step(np.zeros(1), np.ones(1), st, 0.1)
        assert st.t == 0 and st.m[0] == 0

    def test_non_finite(self):
        with pytest.raises(AbortStep):
            adam_step(np.zeros(2), np.array([0.0, np.nan]), AdamState.zeros(2), 0.1)

    def test_shape(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), 0.1)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.grad_accumulation, c.max_epochs, c.patience) == (16, 4, 100, 10)
        assert c.seeds == SEEDS and (c.beta1, c.beta2, c.eps) == (0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("kw", [{"patience": 11, "max_epochs": 10}, {"learning_rate": 0},
                                    {"batch_size": -1}, {"seeds": ()}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTrainModel:
    def test_patience_zero_runs_one_epoch(self):
        _, tr = train_model(tiny_rmtpp(), small_split(), "uwm", TrainConfig(patience=0))
        assert tr.epochs_run == 1 and tr.best_epoch == 1

    def test_deterministic_trace(self):
        cfg = TrainConfig(max_epochs=3, patience=3)
        m1, t1 = train_model(tiny_rmtpp(), small_split(), "uwm", cfg, seed=7)
        m2, t2 = train_model(tiny_rmtpp(), small_split(), "uwm", cfg, seed=7)
        assert t1 == t2 and np.array_equal(m1.params, m2.params)

    def test_constant_gap_mse_decreases(self):
        cfg = TrainConfig(learning_rate=1e-4, max_epochs=5, patience=5)
        _, tr = train_model(RMTPP(hidden_size=64), constant_gap_split(), "uwm", cfg, seed=2019)
        mse = tr.column("time_mse")
        assert len(mse) == 5
        assert all(b < a for a, b in zip(mse, mse[1:]))

    @pytest.mark.parametrize("family", [RMTPP, LogNormMix, Hawkes])
    def test_accumulation_matches_large_batch(self, family):
        split = small_split(n=40)
        kw = {} if family is Hawkes else {"hidden_size": 8, "dropout": 0.0}
        a, _ = train_model(family(**kw), split, "uwm",
                           TrainConfig(batch_size=4, grad_accumulation=4, max_epochs=2, patience=2))
        b, _ = train_model(family(**kw), split, "uwm",
                           TrainConfig(batch_size=16, grad_accumulation=1, max_epochs=2, patience=2))
        assert np.max(np.abs(a.params - b.params)) < 1e-10

    def test_best_checkpoint_never_worse(self, tmp_path):
        path = tmp_path / "trace.csv"
        cfg = TrainConfig(learning_rate=5e-2, max_epochs=8, patience=3)
        m, tr = train_model(tiny_rmtpp(), small_split(), "nll", cfg, trace_path=str(path))
        val = [r["mark_nll"] + r["time_nll"] for r in tr.rows if r["split"] == "val"]
        assert tr.best_val_nll == min(val) == val[tr.best_epoch - 1]
        from ammtpp.loss import compute_terms
        assert compute_terms(m, small_split().val).nll == pytest.approx(tr.best_val_nll)
        header = next(csv.reader(open(path)))
        assert header == ["epoch", "split", "mark_nll", "time_nll", "time_mse", "sigma1",
                          "sigma2", "sigma3", "total"]

    def test_sigma_learned_only_for_uw_variants(self):
        cfg = TrainConfig(max_epochs=2, patience=2)
        _, tr = train_model(tiny_rmtpp(), small_split(), "uwm", cfg)
        assert not np.allclose(tr.objective.sigma, 1.0)
        _, tr = train_model(tiny_rmtpp(), small_split(), ("fixed_sigma", [1.0, 2.0, 3.0]), cfg)
        assert np.allclose(tr.objective.sigma, [1.0, 2.0, 3.0])

    def test_divergence(self):
        split = small_split()
        with pytest.raises(TrainingDiverged) as ei:
            train_model(tiny_rmtpp(), split, "uwm",
                        TrainConfig(learning_rate=1e6, max_epochs=3, patience=3))
        assert ei.value.epoch >= 1

    def test_empty_validation_uses_train(self):
        sp = small_split(n=3)
        assert len(sp.val) == 0
        _, tr = train_model(tiny_rmtpp(), sp, "nll", TrainConfig(max_epochs=2, patience=2))
        assert np.isfinite(tr.best_val_nll)

    def test_select_learning_rate(self):
        cfg = TrainConfig(max_epochs=2, patience=2)
        best, scores = select_learning_rate(tiny_rmtpp, small_split(), "nll", cfg)
        assert set(scores) == {1e-2, 1e-3, 1e-4}
        assert scores[best] == min(scores.values())


class TestBenchmark:
    @staticmethod
    def constant_eval(model, test, cfg):
        return MetricsReport(0.5, 3.0, {5: 1.0})

    def test_grid_counts_and_zero_std(self, tmp_path):
        cfg = TrainConfig(max_epochs=1, patience=1)
        models = {"a": tiny_rmtpp, "b": lambda: LogNormMix(hidden_size=4)}
        rep = run_benchmark(models, ["nll", "uwm"], small_split(), cfg,
                            evaluate=self.constant_eval, out_dir=str(tmp_path))
        summary = rep.summary()
        assert len(summary) == 4
        assert sum(c["n_runs"] for c in summary.values()) == 20
        for cell in summary.values():
            assert not cell["failed"]
            assert cell["time_rmse_std"] == 0.0 and cell["time_rmse_mean"] == 3.0
        run = rep.cells["a/nll"]["runs"][0]
        saved = json.load(open(tmp_path / run["metrics_path"]))
        assert saved["time_rmse"] == 3.0
        rep.write_json(str(tmp_path / "grid.json"))
        rep.write_csv(str(tmp_path / "grid.csv"))

    def test_failed_cell_recorded(self):
        cfg = TrainConfig(max_epochs=1, patience=1, seeds=(1, 2))

        def broken():
            raise RuntimeError("boom")

        rep = run_benchmark({"ok": tiny_rmtpp, "bad": broken}, ["nll"], small_split(), cfg,
                            evaluate=self.constant_eval)
        s = rep.summary()
        assert s["bad/nll"]["failed"] and "boom" in rep.cells["bad/nll"]["runs"][0]["error"]
        assert not s["ok/nll"]["failed"] and s["ok/nll"]["n_runs"] == 2

    def test_single_seed_std(self):
        rep = RunReport()
        rep.add("m", "nll", 1, {"x": 4.0})
        assert rep.summary()["m/nll"]["x_std"] == 0.0

    def test_needs_models(self):
        with pytest.raises(ValueError):
            run_benchmark({}, ["nll"], small_split())
