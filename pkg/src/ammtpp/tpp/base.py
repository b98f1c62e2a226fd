"""Shared machinery of the marked TPP model families.

A model turns every *position* of a padded batch, i.e. a history ending at
event ``i``, into the parameters ("heads") of the next-event distribution:
mark probabilities and a gap density over ``delta = t[i+1] - t[i]``. The three
loss terms are summed over positions:

* mark: ``-log pi[y]``
* time: ``-log f(delta)``
* mse:  ``(delta_hat - delta) ** 2`` with ``delta_hat = E[delta | history]``

Gradients are written out by hand in each family and propagated through the
shared encoder by :class:`NeuralTPP`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from ..events import PAD_ID
from ..exceptions import NumericalUnderflow
from .features import batch_features, history_features, n_features

TAIL_TOL = 1e-6
LN2 = math.log(2.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class GapGrid:
    """Quadrature rule for ``int_0^max_gap S(u) du``.

    Nodes are log-spaced; the rule is the trapezoid rule in ``log u`` (plus a
    trapezoid panel on ``[0, u_min]``), which converges quickly because the
    transformed integrand vanishes smoothly at both ends.
    """

    nodes: np.ndarray
    weights: np.ndarray
    max_gap: float


def gap_grid(max_gap=1e5, n=256, min_gap=1e-4) -> GapGrid:
    v = np.linspace(math.log(min_gap), math.log(max_gap), n)
    u = np.exp(v)
    h = v[1] - v[0]
    w = h * u
    w[0] *= 0.5
    w[-1] *= 0.5
    nodes = np.concatenate([[0.0], u])
    weights = np.concatenate([[0.5 * u[0]], w])
    weights[1] += 0.5 * u[0]
    return GapGrid(nodes, weights, float(max_gap))


@dataclass
class TermResult:
    """Summed loss terms of a batch (mark, time, mse) and their weighted gradient."""

    sums: np.ndarray
    count: int
    grad: np.ndarray | None = None


@dataclass
class Positions:
    rows: np.ndarray  # (N, ...) prefix state per position
    marks: np.ndarray  # (N,) next mark
    gaps: np.ndarray  # (N,) next gap
    index: tuple  # (batch row, event index of the last history event)


class TPPModel:
    """Base class; subclasses define parameter blocks, heads and their terms."""

    family = None
    # True when prefix_state ignores theta, so positions can be cached
    state_is_static = False

    def __init__(self, n_marks=31, max_gap=1e5, grid_size=256):
        self.n_marks = int(n_marks)
        self.max_gap = float(max_gap)
        self.grid_size = int(grid_size)
        self.grid = gap_grid(self.max_gap, self.grid_size)
        self.params = np.zeros(self.n_params)

    # -- parameter vector ------------------------------------------------------
    def param_specs(self):
        raise NotImplementedError

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for _, s in self.param_specs())

    @property
    def param_names(self):
        return [n for n, _ in self.param_specs()]

    def unpack(self, theta=None):
        theta = self.params if theta is None else theta
        out, k = {}, 0
        for name, shape in self.param_specs():
            size = int(np.prod(shape))
            out[name] = theta[k:k + size].reshape(shape)
            k += size
        return out

    def pack(self, blocks):
        return np.concatenate([np.asarray(blocks[n], dtype=float).reshape(-1)
                               for n in self.param_names])

    def set_params(self, **blocks):
        cur = self.unpack(self.params.copy())
        for name, value in blocks.items():
            if name not in cur:
                raise KeyError(name)
            cur[name] = np.broadcast_to(np.asarray(value, dtype=float), cur[name].shape)
        self.params = self.pack(cur)
        return self

    def config(self):
        return {"n_marks": self.n_marks, "max_gap": self.max_gap, "grid_size": self.grid_size}

    # -- to be provided by subclasses -----------------------------------------
    def prefix_state(self, times, marks, theta):
        """Per-prefix state of a padded batch, shape (B, L, ...)."""
        raise NotImplementedError

    def heads(self, rows, theta, training=False, rng=None):
        """Distribution parameters for each position; returns (heads, cache)."""
        raise NotImplementedError

    def head_terms(self, heads, marks, gaps, weights, theta, need_grad=True):
        """Per-position term values and the weighted upstream gradient."""
        raise NotImplementedError

    def backward(self, cache, upstream, theta):
        raise NotImplementedError

    # -- batch API --------------------------------------------------------------
    def positions(self, batch, theta=None) -> Positions:
        theta = self.params if theta is None else theta
        state = self.prefix_state(batch.times, batch.marks, theta)
        valid = batch.mask[:, 1:]
        rows = state[:, :-1][valid]
        marks = batch.marks[:, 1:][valid]
        gaps = (batch.times[:, 1:] - batch.times[:, :-1])[valid]
        return Positions(rows, marks, gaps, np.nonzero(valid))

    def loss_terms(self, batch, weights=(1.0, 1.0, 1.0), theta=None, need_grad=True,
                   training=False, rng=None) -> TermResult:
        """Summed (mark, time, mse) terms of a batch and the gradient of
        ``sum_m weights[m] * term_m`` with respect to the parameter vector.

        ``batch`` may also be precomputed :class:`Positions` when the prefix
        state does not depend on the parameters (see ``state_is_static``)."""
        theta = self.params if theta is None else theta
        pos = batch if isinstance(batch, Positions) else self.positions(batch, theta)
        if len(pos.gaps) == 0:
            return TermResult(np.zeros(3), 0, np.zeros_like(theta) if need_grad else None)
        heads, cache = self.heads(pos.rows, theta, training=training, rng=rng)
        vals, upstream = self.head_terms(heads, pos.marks, pos.gaps, np.asarray(weights, float),
                                         theta, need_grad=need_grad)
        sums = np.array([vals["mark"].sum(), vals["time"].sum(), vals["sq_err"].sum()])
        if not np.all(np.isfinite(sums)):
            bad = int(np.argmax(~np.isfinite(vals["mark"] + vals["time"])))
            raise NumericalUnderflow("non-finite loss term", index=int(pos.index[1][bad]) + 1)
        grad = self.backward(cache, upstream, theta) if need_grad else None
        return TermResult(sums, len(pos.gaps), grad)

    def position_outputs(self, batch, theta=None):
        """Per-position log mark probabilities, term values and point predictions."""
        theta = self.params if theta is None else theta
        pos = batch if isinstance(batch, Positions) else self.positions(batch, theta)
        if len(pos.gaps) == 0:
            return {"marks": pos.marks, "gaps": pos.gaps, "index": pos.index,
                    "log_probs": np.zeros((0, self.n_marks)), "mark": np.zeros(0),
                    "time": np.zeros(0), "pred_gap": np.zeros(0),
                    "pred_mark": np.zeros(0, dtype=np.int64), "fallback": np.zeros(0, bool)}
        heads, _ = self.heads(pos.rows, theta)
        vals, _ = self.head_terms(heads, pos.marks, pos.gaps, np.zeros(3), theta, need_grad=False)
        logp_pred = self.head_mark_log_probs(heads, vals["pred"], theta)
        return {"marks": pos.marks, "gaps": pos.gaps, "index": pos.index,
                "mark": vals["mark"], "time": vals["time"], "pred_gap": vals["pred"],
                "fallback": vals["fallback"], "log_probs": logp_pred,
                "pred_mark": np.argmax(logp_pred, axis=1)}

    # -- single-history API -------------------------------------------------------
    def _history_heads(self, times, marks, theta=None):
        theta = self.params if theta is None else theta
        times = np.asarray(times, dtype=float)
        marks = np.asarray(marks, dtype=np.int64)
        rows = self.history_state(times, marks, theta)[None]
        heads, _ = self.heads(rows, theta)
        return heads, theta

    def history_state(self, times, marks, theta):
        raise NotImplementedError

    def head_mark_log_probs(self, heads, deltas, theta):
        return log_softmax(heads["logits"], axis=1)

    def mark_logits(self, times, marks, delta=None):
        """Unnormalised next-mark scores; softmax gives the mark distribution."""
        return self.mark_log_probs(times, marks, delta)

    def mark_log_probs(self, times, marks, delta=None):
        """log pi over the next mark given a history (Hawkes: at gap ``delta``)."""
        heads, theta = self._history_heads(times, marks)
        if delta is None:
            delta = self.gap_point_prediction(times, marks)[0]
        return self.head_mark_log_probs(heads, np.atleast_1d(float(delta)), theta)[0]

    def gap_log_density(self, times, marks, delta):
        heads, theta = self._history_heads(times, marks)
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        rep = {k: (np.repeat(v, len(delta), axis=0) if isinstance(v, np.ndarray) and v.ndim >= 1
                   and v.shape[0] == 1 else v) for k, v in heads.items()}
        vals, _ = self.head_terms(rep, np.zeros(len(delta), dtype=np.int64), delta, np.zeros(3),
                                  theta, need_grad=False)
        return -vals["time"]

    def gap_point_prediction(self, times, marks):
        """Conditional mean gap (median when the mean is not resolvable); returns (value, fallback)."""
        heads, theta = self._history_heads(times, marks)
        pred, fallback = self.head_prediction(heads, theta)
        return float(pred[0]), bool(fallback[0])

    def head_prediction(self, heads, theta):
        raise NotImplementedError

    def sample_next(self, times, marks, rng):
        """Draw (gap, mark) of the next event; the gap may be ``inf``."""
        raise NotImplementedError

    # -- persistence -----------------------------------------------------------
    def to_checkpoint(self):
        blocks = self.unpack()
        return {"family": self.family, "param_names": self.param_names,
                "values": [blocks[n].tolist() for n in self.param_names],
                "config": self.config()}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_checkpoint(), fh, indent=2)

    def copy(self):
        clone = type(self)(**self.config())
        clone.params = self.params.copy()
        return clone


def concat_positions(parts):
    """Stack cached per-sequence positions into one batch."""
    return Positions(np.concatenate([p.rows for p in parts]),
                     np.concatenate([p.marks for p in parts]),
                     np.concatenate([p.gaps for p in parts]),
                     (np.concatenate([np.full(len(p.gaps), i) for i, p in enumerate(parts)]),
                      np.concatenate([p.index[1] for p in parts])))


def nll_upstream_softmax(logits, marks):
    """(-log pi[y], d/dlogits) for a batch of logits."""
    logp = log_softmax(logits, axis=1)
    n = np.arange(len(marks))
    d = softmax(logits, axis=1)
    d[n, marks] -= 1.0
    return -logp[n, marks], d


class NeuralTPP(TPPModel):
    """Feature map -> tanh hidden layer -> mark logits and a family-specific time head."""

    state_is_static = True

    def __init__(self, n_marks=31, hidden_size=64, dropout=0.1, max_gap=1e5, grid_size=256):
        self.hidden_size = int(hidden_size)
        self.dropout = float(dropout)
        self.n_in = n_features(n_marks)
        super().__init__(n_marks, max_gap, grid_size)

    def time_head_size(self):
        raise NotImplementedError

    def extra_specs(self):
        return []

    def param_specs(self):
        H, K, T = self.hidden_size, self.n_marks, self.time_head_size()
        return [("W_in", (self.n_in, H)), ("b_in", (H,)), ("W_mark", (H, K)), ("b_mark", (K,)),
                ("W_time", (H, T)), ("b_time", (T,))] + self.extra_specs()

    def config(self):
        cfg = super().config()
        cfg.update(hidden_size=self.hidden_size, dropout=self.dropout)
        return cfg

    def init_params(self, rng, sequences=None):
        p = self.unpack(np.zeros(self.n_params))
        p["W_in"][:] = rng.normal(0.0, 1.0 / math.sqrt(self.n_in), p["W_in"].shape)
        p["W_mark"][:] = rng.normal(0.0, 0.01, p["W_mark"].shape)
        p["W_time"][:] = rng.normal(0.0, 0.01, p["W_time"].shape)
        if sequences:
            counts = np.bincount(np.concatenate([s.marks[1:] for s in sequences if len(s) > 1]),
                                 minlength=self.n_marks).astype(float)
            p["b_mark"][:] = np.log((counts + 1.0) / (counts.sum() + self.n_marks))
        self.params = self.pack(p)
        self.init_time_head(rng, sequences)
        return self

    def init_time_head(self, rng, sequences):
        pass

    def prefix_state(self, times, marks, theta):
        return batch_features(times, marks, self.n_marks)

    def history_state(self, times, marks, theta):
        return history_features(times, marks, self.n_marks)

    def heads(self, rows, theta, training=False, rng=None):
        p = self.unpack(theta)
        hidden = np.tanh(rows @ p["W_in"] + p["b_in"])
        mask = None
        if training and self.dropout > 0 and rng is not None:
            mask = (rng.random(hidden.shape) >= self.dropout) / (1.0 - self.dropout)
            h = hidden * mask
        else:
            h = hidden
        logits = h @ p["W_mark"] + p["b_mark"]
        out = h @ p["W_time"] + p["b_time"]
        heads = {"logits": logits, "out": out}
        heads.update(self.time_heads(out, p))
        return heads, {"rows": rows, "hidden": hidden, "h": h, "mask": mask}

    def time_heads(self, out, p):
        return {}

    def backward(self, cache, upstream, theta):
        p = self.unpack(theta)
        g = self.unpack(np.zeros_like(theta))
        h = cache["h"]
        d_logits, d_out = upstream["logits"], upstream["out"]
        g["W_mark"][:] = h.T @ d_logits
        g["b_mark"][:] = d_logits.sum(axis=0)
        g["W_time"][:] = h.T @ d_out
        g["b_time"][:] = d_out.sum(axis=0)
        dh = d_logits @ p["W_mark"].T + d_out @ p["W_time"].T
        if cache["mask"] is not None:
            dh = dh * cache["mask"]
        dz = dh * (1.0 - cache["hidden"] ** 2)
        g["W_in"][:] = cache["rows"].T @ dz
        g["b_in"][:] = dz.sum(axis=0)
        for name, value in upstream.get("extra", {}).items():
            g[name][...] = value
        return self.pack(g)

    def sample_mark(self, heads, rng):
        probs = softmax(heads["logits"][0])
        return int(rng.choice(self.n_marks, p=probs))


__all__ = ["TPPModel", "NeuralTPP", "GapGrid", "gap_grid", "TermResult", "softplus",
           "softplus_inv", "Positions", "concat_positions", "PAD_ID", "TAIL_TOL", "LN2", "nll_upstream_softmax"]
