"""Command-line entry point (``rebano <subcommand>``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .datasets import load_dataset, read_field, read_field_header, save_dataset, write_field
from .errors import (
    CapabilityError, ConfigurationError, ContractViolation, DomainError, GreedySelectionError, NumericalFailure,
)
from .experiments import (
    ablate_greedy, ablation_medians, build_rebano, fingerprint, make_collocation, make_dataset, make_instance,
    pinn_config, public_report, rebano_predict, run_benchmark, sweep_resolution,
)
from .metrics import rel_l2, summarize
from .pinn import train_pinn
from .reduced import PRECOMP_MAGIC, load_basis, save_basis

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
log = logging.getLogger("rebano")


def _out(args) -> Path:
    p = Path(args.out or ".")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _cfg(args) -> dict:
    return config_mod.load_config(args.config, args.preset, args.seed)


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=1))


def _load_basis_dir(d: Path, cfg: dict | None = None):
    cfg = cfg or json.loads((d / "config.json").read_text())
    col, asm = make_collocation(cfg)
    return load_basis(d, col, asm), cfg


# ---------------------------------------------------------------- commands
def cmd_gen_data(args):
    cfg = _cfg(args)
    out = _out(args)
    splits = [args.split] if args.split else ["train", "test_id", "test_ood"]
    for split in splits:
        ds = make_dataset(cfg, split, args.count, with_outputs=not args.inputs_only, threads=args.threads)
        save_dataset(ds, out / split)
        print(f"{split}: {len(ds)} fields -> {out / split}")


def cmd_train_pinn(args):
    cfg = _cfg(args)
    ds = load_dataset(args.dataset) if args.dataset else make_dataset(cfg, "train", with_outputs=False)
    if not 0 <= args.index < len(ds):
        raise ConfigurationError(f"index {args.index} outside dataset of size {len(ds)}")
    col, asm = make_collocation(cfg)
    inst = make_instance(cfg, ds.inputs[args.index], col, asm, ds.extras)
    res = train_pinn(inst, pinn_config(cfg))
    out = _out(args)
    (out / "network.json").write_text(res.params.to_json())
    _dump({"index": args.index, "loss": res.loss, "quality_warning": res.quality_warning,
           "history": res.history}, out / "train.json")
    print(f"PINN loss {res.loss:.3e} -> {out / 'network.json'}")


def cmd_build_rebano(args):
    cfg = _cfg(args)
    train = load_dataset(args.dataset) if args.dataset else make_dataset(cfg, "train", with_outputs=False,
                                                                         threads=args.threads)
    basis, secs = build_rebano(cfg, train, args.threads, args.cache)
    out = _out(args)
    save_basis(basis, out)
    _dump(cfg, out / "config.json")
    print(f"{basis.size} neurons in {secs:.1f} s -> {out}")


def cmd_infer(args):
    basis, cfg = _load_basis_dir(Path(args.basis))
    ds = load_dataset(args.dataset)
    preds = rebano_predict(basis, cfg, ds.inputs, ds.extras, threads=args.threads)
    out = _out(args)
    rows = []
    for i, p in enumerate(preds):
        write_field(out / f"prediction_{i:05d}.bin", p, {"equation": ds.equation, "split": ds.split, "index": i})
        if ds.outputs is not None:
            rows.append((i, rel_l2(p, ds.outputs[i])))
    if rows:
        with open(out / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "error"])
            w.writerows((i, repr(e)) for i, e in rows)
        s = summarize([e for _, e in rows])
        print(f"e_mean {s['mean']:.4e}  e_max {s['max']:.4e}")
    print(f"{len(preds)} predictions -> {out}")


def cmd_benchmark(args):
    cfg = _cfg(args)
    out = _out(args)
    rep = run_benchmark(cfg, out, args.threads, args.cache)
    _dump(cfg, out / "config.json")
    for r in rep["rows"]:
        if "error" in r:
            print(f"{r['model']:>9}: FAILED {r['error']}")
        else:
            print(f"{r['model']:>9}: params {r['params']}  e_train {r['e_mean_train']:.4f}  "
                  f"e_id {r['e_mean_id']:.4f}  e_ood {r['e_mean_ood']:.4f}  r_id {r['r_id']:.3f}  r_ood {r['r_ood']:.3f}")
    print(f"fingerprint {fingerprint(rep)}")


def cmd_sweep(args):
    cfg = _cfg(args)
    out = _out(args)
    if args.basis:
        basis, _ = _load_basis_dir(Path(args.basis), cfg)
    else:
        train = make_dataset(cfg, "train", with_outputs=False, threads=args.threads)
        basis, _ = build_rebano(cfg, train, args.threads, args.cache)
    grids = args.grids or cfg["experiment"].get("sweep_grids", config_mod.SWEEP_GRIDS)
    rows = sweep_resolution(basis, cfg, grids, count=args.count, threads=args.threads)
    _dump(rows, out / "sweep.json")
    for r in rows:
        print(f"s={r['grid']:5d}  e_mean {r['e_mean']:.4e}  e_max {r['e_max']:.4e}")


def cmd_ablate(args):
    cfg = _cfg(args)
    out = _out(args)
    ab = cfg["experiment"].get("ablation", {})
    seeds = args.seeds or ab.get("seeds", [0])
    rows = ablate_greedy(cfg, seeds, args.n_max or ab.get("n_max", 6), cache_dir=args.cache, threads=args.threads)
    _dump(rows, out / "ablation.json")
    med = ablation_medians(rows)
    for n in sorted(med["greedy"]):
        print(f"n={n}  greedy {med['greedy'][n]:.3e}  random {med['random'].get(n, float('nan')):.3e}")


def inspect_path(path: Path):
    """JSON-able description of any persisted artifact."""
    if path.is_dir():
        for name in ("manifest.json", "basis.json", "report.json", "pca.json"):
            if (path / name).exists():
                obj = json.loads((path / name).read_text())
                if name == "basis.json" and (path / "history.json").exists():
                    obj["history"] = json.loads((path / "history.json").read_text())
                return obj
        return {"directory": str(path), "entries": sorted(p.name for p in path.iterdir())}
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raw = path.read_bytes()
    if raw[:8] == PRECOMP_MAGIC:
        version, count = np.frombuffer(raw[8:16], "<u4")
        return {"kind": "precomp", "version": int(version), "tables": int(count), "n_values": (len(raw) - 16) // 8}
    if raw[:1] == b"{":
        head = read_field_header(path)
        v = read_field(path).values
        head["stats"] = {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}
        return head
    raise ConfigurationError(f"{path}: unrecognised artifact")


def cmd_inspect(args):
    print(json.dumps(inspect_path(Path(args.path)), indent=1))


# ------------------------------------------------------------------ parser
def _global_flags(p, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON config file")
    p.add_argument("--preset", default=d, help=f"named preset ({', '.join(sorted(config_mod.PRESETS))})")
    p.add_argument("--seed", type=int, default=d, help="master seed (u64)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rebano", description="Reduced Basis Neural Operator experiments")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("gen-data", cmd_gen_data, "sample inputs and reference solutions")
    p.add_argument("--split", choices=["train", "test_id", "test_ood"])
    p.add_argument("--count", type=int)
    p.add_argument("--inputs-only", action="store_true")
    p = add("train-pinn", cmd_train_pinn, "train one PINN on a dataset input")
    p.add_argument("--dataset")
    p.add_argument("--index", type=int, default=0)
    p = add("build-rebano", cmd_build_rebano, "greedy offline stage")
    p.add_argument("--dataset")
    p.add_argument("--cache", help="PINN cache directory")
    p = add("infer", cmd_infer, "online stage on a dataset")
    p.add_argument("--basis", required=True)
    p.add_argument("--dataset", required=True)
    p = add("benchmark", cmd_benchmark, "train and evaluate all models")
    p.add_argument("--cache", help="PINN cache directory")
    p = add("sweep", cmd_sweep, "discretization-invariance sweep")
    p.add_argument("--basis")
    p.add_argument("--grids", type=int, nargs="+")
    p.add_argument("--count", type=int)
    p.add_argument("--cache")
    p = add("ablate", cmd_ablate, "greedy vs random neuron selection")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--n-max", type=int)
    p.add_argument("--cache")
    p = add("inspect", cmd_inspect, "print a persisted artifact as JSON")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, ContractViolation, CapabilityError, DomainError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, GreedySelectionError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
