"""Estimator wrappers with the familiar fit / predict / score interface.

``X`` is always a list of event sequences. ``predict`` returns the decoded
next event after each full sequence as rows ``[mark, gap]``.

Examples
--------
>>> from ammtpp.estimators import RMTPPEstimator
>>> from ammtpp.synthetic import heavy_tail_dataset
>>> seqs = heavy_tail_dataset(40, 30)
>>> est = RMTPPEstimator(max_epochs=2, patience=2).fit(seqs[:30], X_val=seqs[30:])
>>> est.predict(seqs[:2]).shape
(2, 2)
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import OtdConfig, decode_next, evaluate
from .events import N_MARKS
from .loss import compute_terms
from .tpp import Hawkes, LogNormMix, RMTPP
from .train import TrainConfig, train_model
from .validation import check_sequences


class _TPPEstimator(BaseEstimator):
    """Shared fit/predict logic; subclasses only build the model."""

    def _build(self):
        raise NotImplementedError

    def _train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           grad_accumulation=self.grad_accumulation,
                           max_epochs=self.max_epochs, patience=self.patience)

    def fit(self, X, y=None, X_val=None):
        """Train on sequences ``X``; ``X_val`` drives early stopping if given.

        Without ``X_val`` the last ``validation_fraction`` of ``X`` is held out.
        """
        seqs = check_sequences(X, min_events=2, n_marks=self.n_marks)
        if X_val is None:
            n_val = int(np.floor(len(seqs) * self.validation_fraction))
            train, val = (seqs[:-n_val], seqs[-n_val:]) if n_val else (seqs, [])
        else:
            train, val = seqs, check_sequences(X_val, min_events=2, n_marks=self.n_marks)
        model, trace = train_model(self._build(), (train, val), self.objective,
                                   self._train_config(), seed=self.random_state)
        self.model_ = model
        self.trace_ = trace
        self.sigma_ = trace.objective.sigma
        self.best_epoch_ = trace.best_epoch
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, n_marks=self.n_marks)
        return np.array([decode_next(self.model_, s.times, s.marks) for s in seqs], dtype=float)

    def predict_proba(self, X):
        """Next-mark probabilities after each sequence, shape (n_sequences, n_marks)."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, n_marks=self.n_marks)
        return np.array([np.exp(self.model_.mark_log_probs(s.times, s.marks)) for s in seqs])

    def score(self, X, y=None):
        """Mean log-likelihood per predicted event (higher is better)."""
        check_is_fitted(self, "model_")
        terms = compute_terms(self.model_, check_sequences(X, min_events=2, n_marks=self.n_marks))
        return -terms.nll

    def evaluate(self, X, otd_config=None):
        check_is_fitted(self, "model_")
        return evaluate(self.model_, check_sequences(X, n_marks=self.n_marks),
                        otd_config or OtdConfig())


class HawkesTPP(_TPPEstimator):
    """Multivariate exponential-kernel Hawkes process fitted by gradient descent."""

    def __init__(self, n_marks=N_MARKS, objective="uwm", learning_rate=1e-2, batch_size=16,
                 grad_accumulation=4, max_epochs=100, patience=10, validation_fraction=0.15,
                 max_gap=1e5, random_state=2019):
        self.n_marks = n_marks
        self.objective = objective
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.grad_accumulation = grad_accumulation
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.max_gap = max_gap
        self.random_state = random_state

    def _build(self):
        return Hawkes(n_marks=self.n_marks, max_gap=self.max_gap)


class RMTPPEstimator(_TPPEstimator):
    """History features, a tanh layer and an exponential-in-gap intensity."""

    def __init__(self, n_marks=N_MARKS, hidden_size=64, dropout=0.1, objective="uwm",
                 learning_rate=1e-2, batch_size=16, grad_accumulation=4, max_epochs=100,
                 patience=10, validation_fraction=0.15, max_gap=1e5, random_state=2019):
        self.n_marks = n_marks
        self.hidden_size = hidden_size
        self.dropout = dropout
        self.objective = objective
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.grad_accumulation = grad_accumulation
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.max_gap = max_gap
        self.random_state = random_state

    def _build(self):
        return RMTPP(n_marks=self.n_marks, hidden_size=self.hidden_size, dropout=self.dropout,
                     max_gap=self.max_gap)


class LogNormMixTPP(_TPPEstimator):
    """History features, a tanh layer and a log-normal mixture over gaps."""

    def __init__(self, n_marks=N_MARKS, hidden_size=64, dropout=0.1, n_components=3,
                 min_scale=0.05, objective="uwm", learning_rate=1e-2, batch_size=16,
                 grad_accumulation=4, max_epochs=100, patience=10, validation_fraction=0.15,
                 max_gap=1e5, random_state=2019):
        self.n_marks = n_marks
        self.hidden_size = hidden_size
        self.dropout = dropout
        self.n_components = n_components
        self.min_scale = min_scale
        self.objective = objective
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.grad_accumulation = grad_accumulation
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.max_gap = max_gap
        self.random_state = random_state

    def _build(self):
        return LogNormMix(n_marks=self.n_marks, hidden_size=self.hidden_size,
                          dropout=self.dropout, n_components=self.n_components,
                          min_scale=self.min_scale, max_gap=self.max_gap)
