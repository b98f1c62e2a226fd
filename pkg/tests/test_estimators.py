import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ammtpp.estimators import HawkesTPP, LogNormMixTPP, RMTPPEstimator
from ammtpp.events import EventSequence
from ammtpp.exceptions import InvalidMark
from ammtpp.synthetic import heavy_tail_dataset
from ammtpp.validation import check_horizons, check_positive, check_ratios, check_sequences

SEQS = heavy_tail_dataset(30, 20, seed=4)


@pytest.mark.parametrize("cls,kw", [(RMTPPEstimator, {"hidden_size": 8}),
                                    (LogNormMixTPP, {"hidden_size": 8, "n_components": 2}),
                                    (HawkesTPP, {})])
class TestEstimatorAPI:
    def test_params_and_clone(self, cls, kw):
        est = cls(max_epochs=2, patience=1, **kw)
        params = est.get_params()
        assert params["max_epochs"] == 2
        assert clone(est).get_params() == params

    def test_fit_predict(self, cls, kw):
        est = cls(max_epochs=2, patience=2, **kw).fit(SEQS[:24], X_val=SEQS[24:])
        pred = est.predict(SEQS[:3])
        assert pred.shape == (3, 2) and np.all(pred[:, 1] > 0)
        proba = est.predict_proba(SEQS[:3])
        assert proba.shape == (3, 31) and np.allclose(proba.sum(axis=1), 1)
        assert np.isfinite(est.score(SEQS[24:]))
        assert est.best_epoch_ >= 1 and est.sigma_.shape == (3,)

    def test_not_fitted(self, cls, kw):
        with pytest.raises(NotFittedError):
            cls(**kw).predict(SEQS[:1])


def test_holdout_and_determinism():
    a = RMTPPEstimator(hidden_size=8, max_epochs=2, patience=2, random_state=3).fit(SEQS)
    b = RMTPPEstimator(hidden_size=8, max_epochs=2, patience=2, random_state=3).fit(SEQS)
    assert np.array_equal(a.model_.params, b.model_.params)


def test_evaluate_report():
    est = RMTPPEstimator(hidden_size=8, max_epochs=1, patience=1).fit(SEQS[:20])
    rep = est.evaluate(SEQS[20:])
    assert 0 <= rep.type_accuracy <= 1 and sorted(rep.otd) == [3, 5, 7, 9, 11]


class TestValidation:
    def test_sequences(self):
        with pytest.raises(ValueError):
            check_sequences([EventSequence("a", [1], [0])], min_events=2)
        with pytest.raises(InvalidMark):
            check_sequences([EventSequence("a", [1, 2], [0, 5])], n_marks=3)
        with pytest.raises(TypeError):
            check_sequences([3])
        with pytest.raises(ValueError):
            check_sequences([])

    def test_scalars(self):
        assert check_horizons("3, 5") == (3, 5)
        with pytest.raises(ValueError):
            check_horizons("0,2")
        with pytest.raises(ValueError):
            check_ratios([0.5, 0.5, 0.5])
        with pytest.raises(ValueError):
            check_positive("x", 0)
