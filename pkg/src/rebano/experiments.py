"""Experiment orchestration: benchmark tables, resolution sweep, greedy-vs-random ablation."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, predict_baseline, save_baseline, train_baseline
from .datasets import Dataset, gen_dataset, resample_inputs
from .errors import CapabilityError, ConfigurationError, RebanoError
from .fields import Field, Grid
from .grf import CovarianceSpec, grid_for
from .metrics import rel_l2, summarize, ratio
from .nn import NetworkParams
from .pinn import (
    PinnConfig, TrainResult, assemble_gram, darcy_collocation, darcy_instance, ns_collocation, ns_instance,
    poisson_collocation, poisson_instance, train_pinn,
)
from .reduced import OnlineConfig, ReducedBasis, encode, greedy_build, online_solve_linear, predict, save_basis
from .solvers import solve_darcy_2d, solve_poisson_1d

log = logging.getLogger(__name__)

CSV_COLUMNS = ["model", "params", "e_mean_train", "e_max_train", "e_mean_id", "e_max_id", "e_mean_ood",
               "e_max_ood", "r_id", "r_ood", "seconds_offline", "seconds_online_per_case"]
TIMING_FIELDS = ("seconds_offline", "seconds_online_per_case")
SPLIT_KEYS = {"train": "train", "test_id": "id", "test_ood": "ood"}


# --------------------------------------------------------------- problem setup
def make_collocation(cfg: dict):
    """``(collocation, assembly)`` for the configured equation (assembly is None unless darcy2d)."""
    eq = cfg["dataset"]["equation"]
    c = cfg["models"]["rebano"].get("collocation", {})
    if eq == "poisson1d":
        return poisson_collocation(c.get("s_R", 128)), None
    if eq == "darcy2d":
        asm = assemble_gram(c.get("n_elements", 8), c.get("n_gauss", 4))
        return darcy_collocation(asm, c.get("n_boundary", 40)), asm
    s = cfg["dataset"].get("settings", {})
    return ns_collocation(c.get("n_space", 16), c.get("n_time", 11), c.get("T", s.get("T", 1.0))), None


def make_instance(cfg: dict, f: Field, collocation, assembly=None, extras=None):
    eq = cfg["dataset"]["equation"]
    s = cfg["dataset"].get("settings", {})
    if eq == "poisson1d":
        return poisson_instance(f, collocation)
    if eq == "darcy2d":
        bw = cfg["models"]["rebano"].get("boundary_weight", 1.0)
        return darcy_instance(f, assembly, s.get("f_value", 1.0), collocation, boundary_weight=bw)
    return ns_instance(f, extras["omega0"], s.get("nu", 0.025), collocation)


def pinn_config(cfg: dict) -> PinnConfig:
    return PinnConfig.from_dict(cfg["training"]["pinn"])


def online_config(cfg: dict) -> OnlineConfig:
    o = {k: v for k, v in cfg["models"]["rebano"].get("online", {}).items() if k != "method"}
    return OnlineConfig(**o)


def split_covariance(cfg: dict, split: str) -> CovarianceSpec:
    return CovarianceSpec.from_dict(cfg["dataset"]["covariance"][split])


def make_dataset(cfg: dict, split: str, count: int | None = None, with_outputs: bool = True,
                 threads: int = 1) -> Dataset:
    d = cfg["dataset"]
    if count is None:
        count = d["n_train"] if split == "train" else d["n_test"]
    return gen_dataset(d["equation"], split, count, split_covariance(cfg, split), d["n"], d["seed"],
                       with_outputs, d.get("settings", {}), threads)


# ----------------------------------------------------------------- PINN cache
class PinnCache:
    """Trained networks on disk, keyed by a hash of the instance data and the training config."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(inst, config: PinnConfig) -> str:
        h = hashlib.sha256()
        h.update(inst.equation.encode())
        h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
        h.update(json.dumps(inst.collocation.meta, sort_keys=True).encode())
        h.update(json.dumps(inst.params, sort_keys=True).encode())
        for k in sorted(inst.data):
            h.update(k.encode())
            h.update(np.ascontiguousarray(inst.data[k], "<f8").tobytes())
        return h.hexdigest()[:32]

    def trainer(self, base=None):
        base = base or (lambda inst, cfg, i: train_pinn(inst, cfg))

        def run(inst, config, input_id):
            path = self.dir / f"{self.key(inst, config)}.json"
            if path.exists():
                rec = json.loads(path.read_text())
                return TrainResult(NetworkParams.from_json(rec["network"]), rec["loss"], [], rec["quality_warning"])
            res = base(inst, config, input_id)
            path.write_text(json.dumps({"network": res.params.to_json(), "loss": res.loss,
                                        "quality_warning": res.quality_warning}))
            return res

        return run


# ------------------------------------------------------------------- ReBaNO
def build_rebano(cfg: dict, train: Dataset, threads: int = 1, cache_dir=None, policy: str = "greedy",
                 seed: int | None = None, n_max: int | None = None, final_scan: bool = False):
    """Greedy (or random) offline stage on the training inputs; returns ``(basis, seconds)``."""
    col, asm = make_collocation(cfg)
    cands = [make_instance(cfg, f, col, asm, train.extras) for f in train.inputs]
    r = cfg["models"]["rebano"]
    trainer = PinnCache(cache_dir).trainer() if cache_dir else None
    t0 = time.perf_counter()
    basis = greedy_build(cands, pinn_config(cfg), n_max or r["n_neurons"], r.get("tol", 1e-6),
                         cfg["dataset"]["seed"] if seed is None else seed, online_config(cfg), trainer, threads,
                         final_scan=final_scan, policy=policy)
    return basis, time.perf_counter() - t0


def _output_points(cfg: dict, grid: Grid) -> np.ndarray:
    X = grid.points()
    if cfg["dataset"]["equation"] == "ns2d":
        T = cfg["models"]["rebano"].get("collocation", {}).get("T", cfg["dataset"]["settings"].get("T", 1.0))
        X = np.hstack([X, np.full((len(X), 1), T)])
    return X


def rebano_solve(basis: ReducedBasis, cfg: dict, f: Field, extras=None, collocation=None):
    inst = make_instance(cfg, f, collocation or basis.collocation, basis.assembly, extras)
    method = cfg["models"]["rebano"].get("online", {}).get("method", "lstsq")
    if inst.equation != "ns2d" and method == "lbfgs":
        return online_solve_linear(basis, inst, "lbfgs", online_config(cfg))
    return encode(basis, inst, online_config(cfg))


def rebano_predict(basis: ReducedBasis, cfg: dict, inputs, extras=None, grid: Grid | None = None,
                   collocation=None, threads: int = 1) -> list[Field]:
    grid = grid or inputs[0].grid
    X = _output_points(cfg, grid)

    def one(f):
        res = rebano_solve(basis, cfg, f, extras, collocation)
        return Field(grid, predict(basis, res.c, X, component=0))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, inputs))
    return [one(f) for f in inputs]


# ---------------------------------------------------------------- benchmark
def _errors(preds, truths) -> list:
    return [rel_l2(p, t) for p, t in zip(preds, truths)]


def _row(model: str, params, errs: dict, t_off: float, t_on: float) -> dict:
    row = {"model": model, "params": params}
    for split, key in SPLIT_KEYS.items():
        s = summarize(errs[split])
        row[f"e_mean_{key}"], row[f"e_max_{key}"] = s["mean"], s["max"]
    row["r_id"] = ratio(row["e_mean_id"], row["e_mean_train"])
    row["r_ood"] = ratio(row["e_mean_ood"], row["e_mean_train"])
    row["seconds_offline"], row["seconds_online_per_case"] = t_off, t_on
    return row


def run_benchmark(cfg: dict, out_dir=None, threads: int = 1, cache_dir=None, datasets: dict | None = None,
                  basis: ReducedBasis | None = None) -> dict:
    """Train/build every configured model and evaluate it on the train, ID and OOD splits.

    Returns the Report as a dict; with ``out_dir`` also writes ``report.json``,
    ``report.csv`` and per-sample error files ``errors/<model>_<split>.csv``.
    """
    eq = cfg["dataset"]["equation"]
    datasets = datasets or {s: make_dataset(cfg, s, threads=threads) for s in SPLIT_KEYS}
    rows, per_sample, artifacts = [], {}, {}
    for model in cfg["experiment"]["models"]:
        try:
            if model == "rebano":
                if basis is None:
                    basis, t_off = build_rebano(cfg, datasets["train"], threads, cache_dir)
                else:
                    t_off = 0.0
                artifacts["rebano"] = basis
                preds, t_on = {}, 0.0
                for split, ds in datasets.items():
                    t0 = time.perf_counter()
                    preds[split] = rebano_predict(basis, cfg, ds.inputs, ds.extras, threads=threads)
                    t_on += time.perf_counter() - t0
                n_cases = sum(len(d) for d in datasets.values())
                params = basis.parameter_label
            else:
                bcfg = BaselineConfig.from_dict({"kind": model, **cfg["training"]["baseline"],
                                                 **cfg["models"][model], "seed": cfg["dataset"]["seed"]})
                t0 = time.perf_counter()
                bm, _ = train_baseline(model, datasets["train"], bcfg)
                t_off = time.perf_counter() - t0
                artifacts[model] = bm
                preds, t_on = {}, 0.0
                for split, ds in datasets.items():
                    t0 = time.perf_counter()
                    preds[split] = predict_baseline(bm, ds.inputs)
                    t_on += time.perf_counter() - t0
                n_cases = sum(len(d) for d in datasets.values())
                params = bm.parameter_count
            errs = {s: _errors(preds[s], datasets[s].outputs) for s in datasets}
            per_sample[model] = errs
            rows.append(_row(model, params, errs, t_off, t_on / n_cases))
        except RebanoError as exc:
            log.error("model %s failed: %s", model, exc)
            rows.append({"model": model, "error": f"{type(exc).__name__}: {exc}"})
    report = {"equation": eq, "preset": cfg.get("name"), "seed": cfg["dataset"]["seed"], "rows": rows}
    if "rebano" in artifacts:
        report["rebano_history"] = artifacts["rebano"].history
    if out_dir is not None:
        write_report(report, per_sample, out_dir, artifacts)
    report["_per_sample"] = per_sample
    report["_artifacts"] = artifacts
    return report


def public_report(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


def fingerprint(report: dict) -> str:
    """Hash of the Report without wall-clock fields (used for determinism checks)."""
    rep = public_report(report)
    rep = dict(rep, rows=[{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in rep["rows"]])
    return hashlib.sha256(json.dumps(rep, sort_keys=True).encode()).hexdigest()


def write_report(report: dict, per_sample: dict, out_dir, artifacts: dict | None = None) -> Path:
    d = Path(out_dir)
    (d / "errors").mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(json.dumps(public_report(report), indent=1))
    with open(d / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report["rows"]:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in CSV_COLUMNS])
    for model, errs in per_sample.items():
        for split, e in errs.items():
            with open(d / "errors" / f"{model}_{split}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["index", "error"])
                w.writerows((i, repr(float(x))) for i, x in enumerate(e))
    for name, art in (artifacts or {}).items():
        if name == "rebano":
            save_basis(art, d / "rebano")
        else:
            save_baseline(art, d / name)
    return d


def read_sample_errors(out_dir, model: str, split: str) -> np.ndarray:
    with open(Path(out_dir) / "errors" / f"{model}_{split}.csv") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["error"]) for r in rows])


# ------------------------------------------------------------------- sweep
def sweep_resolution(basis: ReducedBasis, cfg: dict, grids, test: Dataset | None = None,
                     count: int | None = None, threads: int = 1) -> list[dict]:
    """ReBaNO error on test inputs re-evaluated exactly on each grid.

    For poisson1d the residual collocation points are the grid itself; the
    neuron tables are re-tabulated there.  Truth is the exact solution (poisson1d)
    or the reference solver on that grid (darcy2d).
    """
    eq = cfg["dataset"]["equation"]
    if eq == "ns2d":
        raise CapabilityError("the resolution sweep is implemented for the steady problems only")
    count = count or cfg["experiment"].get("sweep_count", 50)
    test = test or make_dataset(cfg, "test_id", count, with_outputs=False)
    rows = []
    for n in grids:
        inputs = resample_inputs(test, int(n))[:count]
        col = poisson_collocation(int(n)) if eq == "poisson1d" else basis.collocation
        preds = rebano_predict(basis, cfg, inputs, collocation=col, threads=threads)
        if eq == "poisson1d":
            truths = [solve_poisson_1d(f) for f in inputs]
        else:
            truths = [solve_darcy_2d(f, cfg["dataset"]["settings"].get("f_value", 1.0), n=int(n)) for f in inputs]
        s = summarize(_errors(preds, truths))
        rows.append({"grid": int(n), "e_mean": s["mean"], "e_max": s["max"]})
    return rows


# ----------------------------------------------------------------- ablation
def ablate_greedy(cfg: dict, seeds, n_max: int = 6, train: Dataset | None = None, cache_dir=None,
                  threads: int = 1) -> list[dict]:
    """Max indicator over the candidate pool as neurons are added, greedy vs random selection.

    Both arms start from the same (seeded) first pick and share the pool.
    """
    train = train or make_dataset(cfg, "train", with_outputs=False, threads=threads)
    rows = []
    for seed in seeds:
        for policy in ("greedy", "random"):
            basis, _ = build_rebano(cfg, train, threads, cache_dir, policy=policy, seed=seed, n_max=n_max,
                                    final_scan=True)
            for k, scan in enumerate(basis.scans):
                rows.append({"seed": int(seed), "arm": policy, "n": k + 1, "max_indicator": float(np.max(scan)),
                             "input_id": basis.history[k]["input_id"]})
    return rows


def ablation_medians(rows: list[dict]) -> dict:
    """``{arm: {n: median max-indicator over seeds}}``."""
    out = {}
    for arm in ("greedy", "random"):
        ns = sorted({r["n"] for r in rows if r["arm"] == arm})
        out[arm] = {n: float(np.median([r["max_indicator"] for r in rows if r["arm"] == arm and r["n"] == n]))
                    for n in ns}
    return out
