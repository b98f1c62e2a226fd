"""Loss terms and their combination.

Three per-event terms are tracked: mark NLL, time NLL and squared error of
the predicted gap. They are combined either as the plain NLL (mark + time) or
with learned homoscedastic uncertainty weights::

    loss = 0.5 * sum_m (l_m / sigma_m**2 + 2 * log sigma_m),  sigma_m = softplus(s_m)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .events import pad_batch
from .exceptions import EmptyBatch, InvalidWeights
from .tpp.base import softplus, softplus_inv

TERM_NAMES = ("mark_nll", "time_nll", "time_mse")
REDUCTIONS = ("sum", "per_event_mean")
SIGMA_INIT = float(softplus_inv(1.0))


@dataclass(frozen=True)
class LossTerms:
    mark_nll: float
    time_nll: float
    time_mse: float
    reduction: str = "per_event_mean"
    n_events: int = 0

    def __post_init__(self):
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")

    def as_array(self):
        return np.array([self.mark_nll, self.time_nll, self.time_mse])

    @property
    def nll(self):
        return self.mark_nll + self.time_nll

    @classmethod
    def from_sums(cls, sums, count, reduction="per_event_mean"):
        sums = np.asarray(sums, dtype=float)
        vals = sums / count if reduction == "per_event_mean" else sums
        return cls(float(vals[0]), float(vals[1]), float(vals[2]), reduction, int(count))


@dataclass
class UncertaintyWeights:
    """Unconstrained log-scale parameters ``s``; ``sigma = softplus(s)``."""

    s: np.ndarray = field(default_factory=lambda: np.full(3, SIGMA_INIT))

    def __post_init__(self):
        self.s = np.array(self.s, dtype=float).reshape(-1)

    @property
    def sigma(self):
        return softplus(self.s)

    @classmethod
    def from_sigma(cls, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if np.any(~(sigma > 0)):
            raise InvalidWeights(f"sigma must be positive, got {sigma.tolist()}")
        return cls(softplus_inv(sigma))


def compute_terms(model, batch, reduction="per_event_mean"):
    """Evaluate the three terms on a padded batch or a list of sequences.

    Raises
    ------
    EmptyBatch
        If the batch holds no predictable position.
    """
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    if isinstance(batch, (list, tuple)):
        batch = pad_batch(list(batch))
    res = model.loss_terms(batch, weights=(0.0, 0.0, 0.0), need_grad=False)
    if res.count == 0:
        raise EmptyBatch("batch has no predictable positions")
    return LossTerms.from_sums(res.sums, res.count, reduction)


def _terms(terms):
    if isinstance(terms, LossTerms):
        return terms.as_array()
    return np.asarray(terms, dtype=float).reshape(-1)


def combine_uwm(terms, weights=None):
    """Uncertainty-weighted loss and its gradient with respect to ``s``.

    ``terms`` and ``weights.s`` must have the same length; the terms are
    treated as constants here.
    """
    ell = _terms(terms)
    if weights is None:
        s = np.full(len(ell), SIGMA_INIT)
    else:
        s = np.asarray(getattr(weights, "s", weights), dtype=float).reshape(-1)
    if s.shape != ell.shape:
        raise ValueError("terms and weights differ in length")
    sigma = softplus(s)
    loss = 0.5 * float(np.sum(ell / sigma ** 2 + 2.0 * np.log(sigma)))
    grad = (-ell / sigma ** 3 + 1.0 / sigma) * expit(s)
    return loss, grad


VARIANTS = ("nll", "uwm", "uw_nll", "uw_event_mse", "fixed_sigma")
_ACTIVE = {"nll": (0, 1), "uwm": (0, 1, 2), "uw_nll": (0, 1), "uw_event_mse": (0, 2),
           "fixed_sigma": (0, 1, 2)}


class Objective:
    """Scalar objective over the three terms, with optionally learned weights.

    Attributes
    ----------
    active : tuple of int
        Indices of the terms that enter the objective.
    weights : UncertaintyWeights or None
        ``None`` for the unweighted NLL.
    learn_sigma : bool
        Whether ``weights.s`` is updated during training.
    """

    def __init__(self, variant, sigma=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown objective {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.active = _ACTIVE[variant]
        self.learn_sigma = variant in ("uwm", "uw_nll", "uw_event_mse")
        if variant == "nll":
            self.weights = None
        elif variant == "fixed_sigma":
            if sigma is None:
                raise InvalidWeights("fixed_sigma needs sigma values")
            sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (3,))
            self.weights = UncertaintyWeights.from_sigma(sigma)
        else:
            self.weights = UncertaintyWeights()
        self._mask = np.zeros(3, dtype=bool)
        self._mask[list(self.active)] = True

    @property
    def uses_mse(self):
        return 2 in self.active

    @property
    def sigma(self):
        return np.ones(3) if self.weights is None else self.weights.sigma

    def term_weights(self):
        """d objective / d term, constant in the terms for every variant."""
        if self.weights is None:
            return self._mask.astype(float)
        return np.where(self._mask, 0.5 / self.sigma ** 2, 0.0)

    def value(self, terms):
        ell = _terms(terms)
        if self.weights is None:
            return float(ell[self._mask].sum())
        return combine_uwm(ell[self._mask], self.weights.s[self._mask])[0]

    def grad_s(self, terms):
        g = np.zeros(3)
        if self.learn_sigma:
            ell = _terms(terms)
            g[self._mask] = combine_uwm(ell[self._mask], self.weights.s[self._mask])[1]
        return g

    def __call__(self, terms):
        return self.value(terms)

    def __repr__(self):
        return f"Objective({self.variant!r}, sigma={np.round(self.sigma, 6).tolist()})"


def build_objective(variant, sigma=None):
    """Objective for ``variant`` in {nll, uwm, uw_nll, uw_event_mse, fixed_sigma}.

    ``variant`` may also be ``("fixed_sigma", values)``.
    """
    if isinstance(variant, (tuple, list)):
        variant, sigma = variant
    return Objective(variant, sigma)


def envelope_value(terms):
    """Minimum over sigma of the weighted loss: 0.5 * sum(1 + log l)."""
    ell = _terms(terms)
    return 0.5 * float(np.sum(1.0 + np.log(ell)))


__all__ = ["LossTerms", "UncertaintyWeights", "Objective", "compute_terms", "combine_uwm",
           "build_objective", "envelope_value", "TERM_NAMES", "VARIANTS", "SIGMA_INIT"]
