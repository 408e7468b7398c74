"""Input/output datasets for the three benchmark problems, and their on-disk format.

A dataset is a directory with ``manifest.json`` and one file per field.  Each
field file is a JSON header line followed by the little-endian float64 grid
values and then (when present) the float64 spectral coefficients.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fields import Field, Grid
from .grf import CovarianceSpec, SpectralSeries, grid_for, pushforward_T, sample
from .solvers import solve_darcy_2d, solve_ns_2d, solve_poisson_1d

SPLITS = ("train", "test_id", "test_ood")

# in-distribution and out-of-distribution covariances per equation
COVARIANCES = {
    "poisson1d": {"id": CovarianceSpec(1, 1.0, 2.0, "dirichlet"), "ood": CovarianceSpec(1, 25.0, 2.0, "dirichlet")},
    "darcy2d": {"id": CovarianceSpec(2, 9.0, 2.0, "neumann"), "ood": CovarianceSpec(2, 64.0, 2.0, "neumann")},
    "ns2d": {"id": CovarianceSpec(2, 9.0, 4.0, "periodic"), "ood": CovarianceSpec(2, 25.0, 4.0, "periodic")},
}

NS_DEFAULTS = {"nu": 0.025, "T": 10.0, "dt": 2e-4}


def default_covariance(equation: str, split: str) -> CovarianceSpec:
    if equation not in COVARIANCES:
        raise ConfigurationError(f"unknown equation {equation!r}")
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    return COVARIANCES[equation]["ood" if split == "test_ood" else "id"]


def sample_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Independent stream per (master seed, split, sample index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**63, SPLITS.index(split), int(index)]))


def ns_initial_vorticity(seed: int, n: int, spec: CovarianceSpec | None = None) -> Field:
    """The fixed initial vorticity, drawn once from the in-distribution measure."""
    spec = spec or COVARIANCES["ns2d"]["id"]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) % 2**63, 99]))
    return sample(spec, grid_for(spec, n), rng)


@dataclass
class Dataset:
    equation: str
    split: str
    inputs: list
    outputs: list | None
    covariance: CovarianceSpec
    seed: int
    settings: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)  # e.g. the fixed ns2d initial vorticity

    def __post_init__(self):
        if self.outputs is not None and len(self.outputs) != len(self.inputs):
            raise ConfigurationError("inputs and outputs differ in length")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def grid(self) -> Grid:
        return self.inputs[0].grid


def solve_reference(equation: str, f: Field, settings: dict, extras: dict) -> Field:
    if equation == "poisson1d":
        return solve_poisson_1d(f)
    if equation == "darcy2d":
        return solve_darcy_2d(f, settings.get("f_value", 1.0), n=f.grid.shape[0])
    s = {**NS_DEFAULTS, **settings}
    return solve_ns_2d(f, extras["omega0"], s["nu"], s["T"], s["dt"], f.grid.shape[0])


def gen_dataset(equation: str, split: str, count: int, covariance: CovarianceSpec | None = None,
                n: int | None = None, seed: int = 0, with_outputs: bool = True,
                settings: dict | None = None, threads: int = 1) -> Dataset:
    """Sample ``count`` inputs on an ``n``-point grid (per axis) and optionally solve for the outputs."""
    covariance = covariance or default_covariance(equation, split)
    settings = dict(settings or {})
    n = n or {"poisson1d": 128, "darcy2d": 100, "ns2d": 100}[equation]
    grid = grid_for(covariance, n)
    extras = {}
    if equation == "ns2d":
        extras["omega0"] = ns_initial_vorticity(seed, n)

    def one(i):
        f = sample(covariance, grid, sample_rng(seed, split, i))
        if equation == "darcy2d":
            f = pushforward_T(f)
        f.meta.update({"split": split, "index": i})
        u = solve_reference(equation, f, settings, extras) if with_outputs else None
        return f, u

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            pairs = list(ex.map(one, range(count)))
    else:
        pairs = [one(i) for i in range(count)]
    inputs = [p[0] for p in pairs]
    outputs = [p[1] for p in pairs] if with_outputs else None
    return Dataset(equation, split, inputs, outputs, covariance, seed, settings, extras)


def resample_inputs(ds: Dataset, n: int) -> list[Field]:
    """The dataset's inputs re-evaluated exactly on an ``n``-point grid."""
    grid = grid_for(ds.covariance, n)
    out = []
    for f in ds.inputs:
        g = Field(grid, f.series(grid.points()), series=f.series, meta=dict(f.meta))
        out.append(pushforward_T(g) if f.transform == "threshold" else g)
    return out


# ----------------------------------------------------------------- file format
def write_field(path, fld: Field, header: dict):
    head = dict(header)
    head.update({"grid_shape": list(fld.grid.shape), "domain": [list(d) for d in fld.grid.domain],
                 "periodic": fld.grid.periodic, "transform": fld.transform,
                 "n_coefficients": 0 if fld.series is None else int(fld.series.coefficients.size)})
    if fld.series is not None:
        head["covariance"] = fld.series.spec.to_dict()
    with open(path, "wb") as fh:
        fh.write((json.dumps(head, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(fld.values, "<f8").tobytes())
        if fld.series is not None:
            fh.write(np.ascontiguousarray(fld.series.coefficients, "<f8").tobytes())


def read_field_header(path) -> dict:
    with open(path, "rb") as fh:
        return json.loads(fh.readline())


def read_field(path) -> Field:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    head = json.loads(raw[:nl])
    grid = Grid(tuple(head["grid_shape"]), tuple(tuple(d) for d in head["domain"]), head["periodic"])
    body = np.frombuffer(raw[nl + 1:], "<f8")
    nc = head["n_coefficients"]
    if body.size != grid.size + nc:
        raise ConfigurationError(f"{path}: expected {grid.size + nc} values, found {body.size}")
    series = None
    if nc:
        series = SpectralSeries(CovarianceSpec.from_dict(head["covariance"]), body[grid.size:].copy())
    meta = {k: head[k] for k in ("split", "index", "role") if k in head}
    return Field(grid, body[:grid.size].copy(), series=series, transform=head.get("transform"), meta=meta)


def save_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    base = {"equation": ds.equation, "split": ds.split}
    files = []
    for i, f in enumerate(ds.inputs):
        name = f"input_{i:05d}.bin"
        write_field(d / name, f, {**base, "index": i, "role": "input"})
        entry = {"input": name}
        if ds.outputs is not None:
            entry["output"] = f"output_{i:05d}.bin"
            write_field(d / entry["output"], ds.outputs[i], {**base, "index": i, "role": "output"})
        files.append(entry)
    extras = {}
    for k, f in ds.extras.items():
        write_field(d / f"{k}.bin", f, {**base, "index": -1, "role": k})
        extras[k] = f"{k}.bin"
    manifest = {"equation": ds.equation, "split": ds.split, "count": len(ds), "seed": ds.seed,
                "covariance": ds.covariance.to_dict(), "grid": ds.grid.to_dict(), "settings": ds.settings,
                "extras": extras, "files": files}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    m = json.loads((d / "manifest.json").read_text())
    inputs = [read_field(d / e["input"]) for e in m["files"]]
    outputs = [read_field(d / e["output"]) for e in m["files"]] if m["files"] and "output" in m["files"][0] else None
    extras = {k: read_field(d / v) for k, v in m.get("extras", {}).items()}
    return Dataset(m["equation"], m["split"], inputs, outputs, CovarianceSpec.from_dict(m["covariance"]),
                   m["seed"], m.get("settings", {}), extras)
