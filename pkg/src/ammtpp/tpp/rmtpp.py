"""RMTPP-form model: intensity ``exp(c + w * delta)`` after the last event.

``c`` comes from the history encoder, ``w`` is a global slope. The
compensator has the closed form ``exp(c) * (exp(w * delta) - 1) / w``. With
``w < 0`` the gap distribution is defective (some probability of no further
event), so its mean is infinite; the point prediction then falls back to the
median.
"""

import math

import numpy as np
from scipy.special import exprel, softmax

from .base import LN2, TAIL_TOL, NeuralTPP, nll_upstream_softmax


def _g(w, u):
    """(exp(w u) - 1) / w, continuous at w = 0."""
    return u * exprel(w * u)


def _h(z):
    """(z e^z - e^z + 1) / z**2, continuous at z = 0 (-> 1/2)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-2
    zs = z[small]
    out[small] = 0.5 + zs / 3.0 + zs ** 2 / 8.0 + zs ** 3 / 30.0 + zs ** 4 / 144.0
    zl = z[~small]
    out[~small] = (np.exp(zl) * (zl - 1.0) + 1.0) / zl ** 2
    return out


def _g_w(w, u):
    """d/dw of _g."""
    u = np.asarray(u, dtype=float)
    return u ** 2 * _h(w * u)


class RMTPP(NeuralTPP):
    family = "rmtpp"

    def time_head_size(self):
        return 1

    def extra_specs(self):
        return [("w", (1,))]

    def init_time_head(self, rng, sequences):
        p = self.unpack()
        if sequences:
            gaps = np.concatenate([s.gaps for s in sequences if len(s) > 1])
            p["b_time"][:] = -math.log(max(float(gaps.mean()), 1e-6))
        p["w"][:] = 0.0

    def time_heads(self, out, p):
        return {"c": out[:, 0], "w": float(p["w"][0])}

    def _prediction(self, c, w, need_grad):
        grid = self.grid
        u, q = grid.nodes, grid.weights
        ec = np.exp(c)
        with np.errstate(over="ignore"):
            lam_grid = ec[:, None] * _g(w, u)[None, :]
        S = np.exp(-lam_grid)
        pred = S @ q
        fallback = S[:, -1] > TAIL_TOL
        d_c = d_w = None
        if need_grad:
            # where S underflowed the products are 0, even if the other factor overflowed
            live = S > 0
            with np.errstate(over="ignore", invalid="ignore"):
                d_c = -np.where(live, S * lam_grid, 0.0) @ q
                d_w = -np.where(live, S * (ec[:, None] * _g_w(w, u)[None, :]), 0.0) @ q
        if fallback.any():
            idx = np.nonzero(fallback)[0]
            r = LN2 * np.exp(-c[idx])
            arg = 1.0 + w * r
            m = np.full(len(idx), grid.max_gap)
            ok = arg > 0
            if w == 0.0:
                m[ok] = r[ok]
            else:
                m[ok] = np.log1p(w * r[ok]) / w
            m = np.minimum(m, grid.max_gap)
            ok &= m < grid.max_gap
            pred[idx] = m
            if need_grad:
                lam_m = np.exp(c[idx] + w * m)
                dc = np.where(ok, -LN2 / lam_m, 0.0)
                dw = np.where(ok, -ec[idx] * _g_w(w, m) / lam_m, 0.0)
                d_c[idx] = dc
                d_w[idx] = dw
        return pred, fallback, d_c, d_w

    def head_prediction(self, heads, theta):
        pred, fallback, _, _ = self._prediction(heads["c"], heads["w"], False)
        return pred, fallback

    def head_terms(self, heads, marks, gaps, weights, theta, need_grad=True):
        c, w = heads["c"], heads["w"]
        mark_nll, d_logits = nll_upstream_softmax(heads["logits"], marks)
        ec = np.exp(c)
        comp = ec * _g(w, gaps)
        time_nll = -c - w * gaps + comp
        need_mse = need_grad and weights[2] != 0
        pred, fallback, dp_c, dp_w = self._prediction(c, w, need_mse)
        resid = pred - gaps
        vals = {"mark": mark_nll, "time": time_nll, "sq_err": resid ** 2, "pred": pred,
                "fallback": fallback}
        if not need_grad:
            return vals, None
        dc = weights[1] * (comp - 1.0)
        dw = weights[1] * float(np.sum(-gaps + ec * _g_w(w, gaps)))
        if need_mse:
            dc = dc + weights[2] * 2.0 * resid * dp_c
            dw += weights[2] * float(np.sum(2.0 * resid * dp_w))
        upstream = {"logits": weights[0] * d_logits, "out": dc[:, None],
                    "extra": {"w": np.array([dw])}}
        return vals, upstream

    def sample_next(self, times, marks, rng):
        heads, _ = self._history_heads(times, marks)
        c, w = float(heads["c"][0]), heads["w"]
        e = rng.exponential()
        target = e * math.exp(-c)
        if w == 0.0:
            gap = target
        else:
            arg = 1.0 + w * target
            gap = math.log(arg) / w if arg > 0 else math.inf
        probs = softmax(heads["logits"][0])
        return gap, int(rng.choice(self.n_marks, p=probs))
