"""Intensity-free model: the gap is a mixture of log-normals.

Per position the time head emits ``M`` mixture logits, ``M`` means of
``log(delta)`` and ``M`` raw scales; ``sigma = softplus(raw) + min_scale``. The
floor keeps the likelihood bounded on integer-valued gaps, where a component
could otherwise collapse onto a single repeated value.
"""

import math

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .base import NeuralTPP, nll_upstream_softmax, softplus, softplus_inv

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class LogNormMix(NeuralTPP):
    family = "lognormmix"

    def __init__(self, n_marks=31, hidden_size=64, dropout=0.1, n_components=3,
                 min_scale=0.05, max_gap=1e5, grid_size=256):
        self.n_components = int(n_components)
        self.min_scale = float(min_scale)
        super().__init__(n_marks, hidden_size, dropout, max_gap, grid_size)

    def config(self):
        cfg = super().config()
        cfg.update(n_components=self.n_components, min_scale=self.min_scale)
        return cfg

    def time_head_size(self):
        return 3 * self.n_components

    def init_time_head(self, rng, sequences):
        p = self.unpack()
        M = self.n_components
        if sequences:
            logs = np.log(np.concatenate([s.gaps for s in sequences if len(s) > 1]))
            qs = np.quantile(logs, (np.arange(M) + 0.5) / M)
            spread = max(float(logs.std()), 0.5)
        else:
            qs, spread = np.linspace(0.0, 3.0, M), 1.0
        p["b_time"][M:2 * M] = qs
        p["b_time"][2 * M:] = softplus_inv(max(spread / M, self.min_scale + 0.1) - self.min_scale)

    def time_heads(self, out, p):
        M = self.n_components
        raw = out[:, 2 * M:]
        return {"weight_logits": out[:, :M], "means": out[:, M:2 * M], "raw_scales": raw,
                "scales": softplus(raw) + self.min_scale}

    def _components(self, heads, gaps):
        logw = heads["weight_logits"] - logsumexp(heads["weight_logits"], axis=1, keepdims=True)
        sig = heads["scales"]
        z = (np.log(gaps)[:, None] - heads["means"]) / sig
        comp = logw - np.log(sig) - HALF_LOG_2PI - 0.5 * z ** 2
        return logw, sig, z, comp

    def head_prediction(self, heads, theta):
        pi = softmax(heads["weight_logits"], axis=1)
        e = np.exp(heads["means"] + 0.5 * heads["scales"] ** 2)
        return (pi * e).sum(axis=1), np.zeros(len(pi), dtype=bool)

    def head_terms(self, heads, marks, gaps, weights, theta, need_grad=True):
        mark_nll, d_logits = nll_upstream_softmax(heads["logits"], marks)
        logw, sig, z, comp = self._components(heads, gaps)
        lse = logsumexp(comp, axis=1)
        time_nll = -(lse - np.log(gaps))
        pi = np.exp(logw)
        e = np.exp(heads["means"] + 0.5 * sig ** 2)
        pred = (pi * e).sum(axis=1)
        resid = pred - gaps
        vals = {"mark": mark_nll, "time": time_nll, "sq_err": resid ** 2, "pred": pred,
                "fallback": np.zeros(len(gaps), dtype=bool)}
        if not need_grad:
            return vals, None
        r = np.exp(comp - lse[:, None])
        d_a = weights[1] * (pi - r)
        d_mu = weights[1] * (-r * z / sig)
        d_sig = weights[1] * (r * (1.0 - z ** 2) / sig)
        if weights[2] != 0:
            k = weights[2] * 2.0 * resid[:, None]
            d_a = d_a + k * pi * (e - pred[:, None])
            d_mu = d_mu + k * pi * e
            d_sig = d_sig + k * pi * e * sig
        d_raw = d_sig * expit(heads["raw_scales"])
        upstream = {"logits": weights[0] * d_logits,
                    "out": np.concatenate([d_a, d_mu, d_raw], axis=1)}
        return vals, upstream

    def sample_next(self, times, marks, rng):
        heads, _ = self._history_heads(times, marks)
        pi = softmax(heads["weight_logits"][0])
        m = int(rng.choice(self.n_components, p=pi))
        gap = math.exp(heads["means"][0, m] + heads["scales"][0, m] * rng.standard_normal())
        probs = softmax(heads["logits"][0])
        return gap, int(rng.choice(self.n_marks, p=probs))
