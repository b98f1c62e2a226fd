"""Shared test utilities: small random instances and a finite-difference oracle."""

import numpy as np

from ammtpp.events import EventSequence, pad_batch
from ammtpp.tpp import RMTPP, Hawkes, LogNormMix


def random_sequences(rng, n_seq=3, n_marks=4, max_len=6, scale=3.0):
    seqs = []
    for i in range(n_seq):
        L = int(rng.integers(2, max_len + 1))
        t = np.cumsum(rng.exponential(scale, L) + 0.05) + 1.0
        seqs.append(EventSequence(f"s{i}", t, rng.integers(0, n_marks, L)))
    return seqs


def random_model(family, rng, n_marks=4):
    if family == "hawkes":
        m = Hawkes(n_marks=n_marks, max_gap=200.0, grid_size=256)
        m.params = rng.normal(-1.0, 0.5, m.n_params)
        return m
    cls = {"rmtpp": RMTPP, "lognormmix": LogNormMix}[family]
    m = cls(n_marks=n_marks, hidden_size=5, dropout=0.0, max_gap=200.0)
    m.params = rng.normal(0.0, 0.3, m.n_params)
    if family == "rmtpp":
        p = m.unpack()
        p["b_time"][:] = -1.0
        p["w"][:] = rng.uniform(-0.2, 0.2)
    return m


def weighted_objective(model, batch, weights, theta):
    return float(np.dot(weights, model.loss_terms(batch, weights, theta=theta,
                                                  need_grad=False).sums))


def finite_difference_grad(f, theta, eps=1e-5):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        g[i] = (f(tp) - f(tm)) / (2 * eps)
    return g


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def model_gradient_error(family, seed, weights):
    rng = np.random.default_rng(seed)
    model = random_model(family, rng)
    batch = pad_batch(random_sequences(rng))
    w = np.asarray(weights, float)
    analytic = model.loss_terms(batch, w).grad
    numeric = finite_difference_grad(lambda th: weighted_objective(model, batch, w, th),
                                     model.params.copy())
    return relative_error(analytic, numeric)
