"""Experiment configuration: JSON file merged over defaults, with validation."""

from __future__ import annotations

import copy
import json
import os

from .evaluation import HORIZONS, OtdConfig
from .events import chronological_split, load_unified, window_split
from .exceptions import InsufficientData
from .loss import VARIANTS, build_objective
from .synthetic import heavy_tail_dataset
from .tpp import FAMILIES, make_model
from .train import SEEDS, TrainConfig
from .validation import check_horizons, check_ratios

DATA_SOURCES = ("unified", "raw", "heavy_tail")

DEFAULTS = {
    "data": {"root": None, "source": "unified", "protocols": None, "max_len": 300,
             "ratios": [0.70, 0.15, 0.15], "n_sequences": 500, "n_events": 100,
             "data_seed": 2019},
    "model": {"family": "rmtpp", "hidden_size": 64, "n_components": 3, "dropout": 0.1,
              "min_scale": 0.05, "n_marks": 31, "max_gap": 1e5, "grid_size": 256},
    "objective": {"variant": "uwm", "sigma": None},
    "train": {"learning_rate": 1e-2, "batch_size": 16, "grad_accumulation": 4,
              "max_epochs": 100, "patience": 10, "seeds": list(SEEDS),
              "reduction": "per_event_mean"},
    "eval": {"delete_cost": 1.0, "horizons": list(HORIZONS), "rollout": "deterministic",
             "n_draws": 10, "seed": 2019},
    "grid": {"families": None, "objectives": None},
    "output_dir": "out",
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config field {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file, then ``overrides`` (a nested dict of flags)."""
    file_cfg = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    cfg = _merge(DEFAULTS, file_cfg)
    cfg = _merge(cfg, overrides or {})
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    data = cfg["data"]
    if data["source"] not in DATA_SOURCES:
        raise ConfigError(f"data.source must be one of {DATA_SOURCES}")
    if data["source"] != "heavy_tail":
        if not data["root"] or not os.path.isdir(data["root"]):
            raise ConfigError(f"data.root does not exist: {data['root']}")
    if int(data["max_len"]) < 2:
        raise ConfigError("data.max_len must be at least 2")
    try:
        check_ratios(data["ratios"])
        check_horizons(cfg["eval"]["horizons"])
        train_config(cfg)
        otd_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    families = cfg["grid"]["families"] or [cfg["model"]["family"]]
    for fam in families:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown model family {fam!r}")
    for var in cfg["grid"]["objectives"] or [cfg["objective"]["variant"]]:
        if var not in VARIANTS:
            raise ConfigError(f"unknown objective {var!r}")
    if cfg["objective"]["variant"] == "fixed_sigma":
        try:
            build_objective("fixed_sigma", cfg["objective"]["sigma"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def train_config(cfg, **override):
    t = {**cfg["train"], **override}
    return TrainConfig(learning_rate=float(t["learning_rate"]), batch_size=int(t["batch_size"]),
                       grad_accumulation=int(t["grad_accumulation"]),
                       max_epochs=int(t["max_epochs"]), patience=int(t["patience"]),
                       seeds=tuple(t["seeds"]), reduction=t["reduction"])


def otd_config(cfg):
    e = cfg["eval"]
    return OtdConfig(delete_cost=float(e["delete_cost"]), horizons=check_horizons(e["horizons"]),
                     rollout=e["rollout"], n_draws=int(e["n_draws"]), seed=int(e["seed"]))


def model_factory(cfg, family=None):
    m = cfg["model"]
    family = family or m["family"]
    common = {"n_marks": m["n_marks"], "max_gap": m["max_gap"], "grid_size": m["grid_size"]}
    if family == "hawkes":
        kwargs = common
    else:
        kwargs = {**common, "hidden_size": m["hidden_size"], "dropout": m["dropout"]}
        if family == "lognormmix":
            kwargs.update(n_components=m["n_components"], min_scale=m["min_scale"])
    return lambda: make_model(family, **kwargs)


def load_sequences(cfg):
    data = cfg["data"]
    if data["source"] == "heavy_tail":
        return heavy_tail_dataset(int(data["n_sequences"]), int(data["n_events"]),
                                  seed=int(data["data_seed"]))
    if data["source"] == "raw":
        from .ingest import scan_dataset
        scan = scan_dataset(data["root"])
        seqs = [scan.sequences[k] for k in sorted(scan.sequences)]
        if data["protocols"]:
            wanted = {p.lower() for p in data["protocols"]}
            seqs = [scan.sequences[k] for k in sorted(scan.sequences)
                    if k.split("/")[0].lower() in wanted]
    else:
        seqs = load_unified(data["root"], data["protocols"])
    out = []
    for s in seqs:
        out.extend(w for w in window_split(s, int(data["max_len"])) if len(w) >= 2)
    if not out:
        raise InsufficientData("no sequence with two or more events under data.root")
    return out


def load_split(cfg):
    return chronological_split(load_sequences(cfg), tuple(cfg["data"]["ratios"]))


def write_snapshot(cfg, out_dir, name="resolved_config.json"):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
