"""Marked temporal point process model families."""

import json

import numpy as np

from ..events import pad_batch
from ..exceptions import NumericalUnderflow
from .base import TPPModel, gap_grid
from .features import batch_features, history_features, n_features
from .hawkes import (Hawkes, HawkesParams, fit_hawkes_mle, hawkes_compensator_exact,
                     hawkes_compensator_mc, hawkes_intensity, hawkes_nll_exact, hawkes_nll_mc)
from .lognormmix import LogNormMix
from .rmtpp import RMTPP
from .simulate import quantize_blocks, simulate_thinning

FAMILIES = {"hawkes": Hawkes, "rmtpp": RMTPP, "lognormmix": LogNormMix}


def make_model(family, **config):
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}; expected one of {sorted(FAMILIES)}")
    return cls(**config)


def from_checkpoint(ckpt):
    """Rebuild a model from a checkpoint dict (or a path to its JSON file)."""
    if not isinstance(ckpt, dict):
        with open(ckpt) as fh:
            ckpt = json.load(fh)
    model = make_model(ckpt["family"], **ckpt.get("config", {}))
    if list(ckpt["param_names"]) != model.param_names:
        raise ValueError("checkpoint parameter names do not match the model family")
    model.set_params(**dict(zip(ckpt["param_names"], ckpt["values"])))
    return model


def model_nll(model, seq):
    """Per-event ``-log pi[y]`` and ``-log f(delta)`` for events 1..n-1 of a sequence.

    Raises
    ------
    NumericalUnderflow
        If any term is not finite; carries the event index.
    """
    if len(seq) < 2:
        raise ValueError("model_nll needs at least two events")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = model.position_outputs(pad_batch([seq]))
    terms = out["mark"] + out["time"]
    if not np.all(np.isfinite(terms)):
        bad = int(np.argmax(~np.isfinite(terms)))
        raise NumericalUnderflow("non-finite density", index=bad + 1)
    return out["mark"], out["time"]


__all__ = ["TPPModel", "Hawkes", "HawkesParams", "RMTPP", "LogNormMix", "FAMILIES", "make_model",
           "from_checkpoint", "model_nll", "simulate_thinning", "quantize_blocks",
           "hawkes_intensity", "hawkes_nll_exact", "hawkes_nll_mc", "hawkes_compensator_exact",
           "hawkes_compensator_mc", "fit_hawkes_mle", "history_features", "batch_features",
           "n_features", "gap_grid"]
