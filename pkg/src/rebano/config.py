"""Experiment configuration: one JSON document with sections
``dataset``, ``models``, ``training`` and ``experiment``; named presets."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigurationError

SECTIONS = ("dataset", "models", "training", "experiment")
SWEEP_GRIDS = [32, 50, 64, 100, 128, 200, 256, 400, 512, 800, 1024]


def _poisson(n_train, n_test, epochs, lbfgs, n_neurons, baseline_epochs=1000, name="poisson-desk"):
    return {
        "name": name,
        "dataset": {"equation": "poisson1d", "n": 128, "n_train": n_train, "n_test": n_test, "seed": 0,
                    "covariance": {"train": {"dimension": 1, "tau_sq": 1.0, "alpha": 2.0, "boundary": "dirichlet"},
                                   "test_id": {"dimension": 1, "tau_sq": 1.0, "alpha": 2.0, "boundary": "dirichlet"},
                                   "test_ood": {"dimension": 1, "tau_sq": 25.0, "alpha": 2.0, "boundary": "dirichlet"}},
                    "settings": {}},
        "models": {
            "rebano": {"n_neurons": n_neurons, "tol": 1e-6, "online": {"method": "lstsq"},
                       "collocation": {"s_R": 128}},
            "pcanet": {"hidden": [64] * 6, "n_modes_in": 64, "n_modes_out": 64},
            "deeponet": {"branch_hidden": [60] * 4, "trunk_hidden": [60] * 3, "latent": 60, "n_modes_in": 64},
        },
        "training": {
            "pinn": {"widths": [1, 20, 20, 20, 1], "activation": "tanh", "epochs": epochs, "lr": 5e-4,
                     "halving_period": None, "lbfgs_iters": lbfgs},
            "baseline": {"epochs": baseline_epochs, "lr": 1e-3, "halving_period": 100, "activation": "relu"},
        },
        "experiment": {"models": ["rebano", "pcanet", "deeponet"], "sweep_grids": SWEEP_GRIDS,
                       "sweep_count": 50, "ablation": {"seeds": [0, 1, 2, 3, 4], "n_max": 6}},
    }


def _darcy(n, n_train, n_test, n_elements, n_gauss, epochs, lr, halving, lbfgs, n_neurons, name):
    return {
        "name": name,
        "dataset": {"equation": "darcy2d", "n": n, "n_train": n_train, "n_test": n_test, "seed": 0,
                    "covariance": {"train": {"dimension": 2, "tau_sq": 9.0, "alpha": 2.0, "boundary": "neumann"},
                                   "test_id": {"dimension": 2, "tau_sq": 9.0, "alpha": 2.0, "boundary": "neumann"},
                                   "test_ood": {"dimension": 2, "tau_sq": 64.0, "alpha": 2.0, "boundary": "neumann"}},
                    "settings": {"f_value": 1.0}},
        "models": {
            "rebano": {"n_neurons": n_neurons, "tol": 1e-6, "online": {"method": "lstsq"}, "boundary_weight": 100.0,
                       "collocation": {"n_elements": n_elements, "n_gauss": n_gauss, "n_boundary": 4 * n_elements}},
            "pcanet": {"hidden": [200] * 5, "n_modes_in": 128, "n_modes_out": 128},
            "deeponet": {"branch_hidden": [200] * 5, "trunk_hidden": [200] * 4, "latent": 200, "n_modes_in": 128},
        },
        "training": {
            "pinn": {"widths": [2] + [40] * 6 + [1], "activation": "sin", "epochs": epochs, "lr": lr,
                     "halving_period": halving, "lbfgs_iters": lbfgs},
            "baseline": {"epochs": 1000, "lr": 1e-3, "halving_period": 100, "activation": "relu"},
        },
        "experiment": {"models": ["rebano", "pcanet", "deeponet"]},
    }


def _ns(n, n_train, n_test, T, dt, n_space, n_time, epochs, lr, halving, lbfgs, online_epochs, n_neurons, name):
    return {
        "name": name,
        "dataset": {"equation": "ns2d", "n": n, "n_train": n_train, "n_test": n_test, "seed": 0,
                    "covariance": {"train": {"dimension": 2, "tau_sq": 9.0, "alpha": 4.0, "boundary": "periodic"},
                                   "test_id": {"dimension": 2, "tau_sq": 9.0, "alpha": 4.0, "boundary": "periodic"},
                                   "test_ood": {"dimension": 2, "tau_sq": 25.0, "alpha": 4.0, "boundary": "periodic"}},
                    "settings": {"nu": 0.025, "T": T, "dt": dt}},
        "models": {
            "rebano": {"n_neurons": n_neurons, "tol": 1e-6,
                       "online": {"epochs": online_epochs, "lr": 5e-3, "checkpoint_every": max(online_epochs // 10, 1)},
                       "collocation": {"n_space": n_space, "n_time": n_time, "T": T}},
            "pcanet": {"hidden": [200] * 4, "n_modes_in": 64, "n_modes_out": 64},
            "deeponet": {"branch_hidden": [100] * 4, "trunk_hidden": [100] * 3, "latent": 100, "n_modes_in": 64},
        },
        "training": {
            "pinn": {"widths": [3] + [20] * 6 + [2], "activation": "cos", "epochs": epochs, "lr": lr,
                     "halving_period": halving, "lbfgs_iters": lbfgs},
            "baseline": {"epochs": 1000, "lr": 1e-3, "halving_period": 100, "activation": "relu"},
        },
        "experiment": {"models": ["rebano", "pcanet", "deeponet"]},
    }


PRESETS = {
    "poisson-desk": _poisson(200, 200, 5000, 2000, 8),
    "poisson-full": _poisson(1000, 200, 40000, 0, 8, name="poisson-full"),
    "darcy-desk": _darcy(40, 100, 100, 6, 4, 500, 1e-3, 1000, 1500, 12, "darcy-desk"),
    "darcy-full": _darcy(100, 1000, 200, 8, 20, 60000, 1e-3, 10000, 0, 48, "darcy-full"),
    "ns-desk": _ns(32, 20, 20, 1.0, 1e-3, 12, 6, 1000, 5e-3, 500, 1500, 500, 3, "ns-desk"),
    "ns-full": _ns(100, 1000, 200, 10.0, 2e-4, 100, 100, 40000, 5e-3, 5000, 0, 5000, 20, "ns-full"),
}
PRESETS["poisson-full"]["models"]["rebano"]["online"] = {"method": "lbfgs", "lbfgs_iters": 100, "lbfgs_step": 0.8}
PRESETS["darcy-full"]["models"]["rebano"]["online"] = {"method": "lbfgs", "lbfgs_iters": 100, "lbfgs_step": 0.8}
# full-batch training takes one step per epoch, so the desk presets run more of them
for _name in ("poisson-desk", "darcy-desk", "ns-desk"):
    PRESETS[_name]["training"]["baseline"].update(epochs=5000, halving_period=1000)
LONG_RUNNING = {"poisson-full", "darcy-full", "ns-full"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def validate(cfg: dict) -> dict:
    missing = [s for s in SECTIONS if s not in cfg]
    if missing:
        raise ConfigurationError(f"config is missing sections {missing}")
    ds = cfg["dataset"]
    if ds.get("equation") not in ("poisson1d", "darcy2d", "ns2d"):
        raise ConfigurationError(f"unknown equation {ds.get('equation')!r}")
    for key in ("n", "n_train", "n_test"):
        if not isinstance(ds.get(key), int) or ds[key] < 1:
            raise ConfigurationError(f"dataset.{key} must be a positive integer")
    unknown = set(cfg["experiment"].get("models", [])) - {"rebano", "pcanet", "deeponet"}
    if unknown:
        raise ConfigurationError(f"unknown models {sorted(unknown)}")
    return cfg


def load_config(path=None, preset_name: str | None = None, seed: int | None = None) -> dict:
    """Preset (if any) overlaid with the JSON file (if any) and the seed override."""
    cfg = preset(preset_name) if preset_name else {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    if not cfg:
        raise ConfigurationError("no configuration given (use --config or --preset)")
    if seed is not None:
        cfg["dataset"]["seed"] = int(seed)
    return validate(cfg)
