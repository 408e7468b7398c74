import csv
import json

import numpy as np
import pytest

from conftest import tiny_poisson_config
from rebano import cli
from rebano.config import SWEEP_GRIDS, load_config, preset
from rebano.datasets import gen_dataset, load_dataset, read_field, read_field_header, save_dataset
from rebano.errors import CapabilityError, ConfigurationError, ContractViolation, DomainError
from rebano.experiments import (
    CSV_COLUMNS, ablate_greedy, ablation_medians, build_rebano, fingerprint, make_dataset, read_sample_errors,
    run_benchmark, sweep_resolution,
)
from rebano.fields import Field, Grid
from rebano.grf import CovarianceSpec
from rebano.metrics import rel_l2, summarize
from rebano.nn import init_network
from rebano.pinn import poisson_collocation
from rebano.reduced import ReducedBasis, greedy_build, precompute_neuron


# ------------------------------------------------------------------ metrics
def test_rel_l2_trivial():
    g = Grid.unit(17)
    t = Field(g, np.sin(np.pi * g.axes()[0]) + 0.1)
    assert rel_l2(t, t) == 0.0
    assert rel_l2(Field(g, np.zeros(17)), t) == 1.0
    assert abs(rel_l2(Field(g, 1.1 * t.values), t) - 0.1) <= 1e-14
    with pytest.raises(DomainError):
        rel_l2(t, Field(g, np.zeros(17)))
    with pytest.raises(ContractViolation):
        rel_l2(t, Field(Grid.unit(9), np.ones(9)))
    assert summarize([1.0, 3.0, 2.0]) == {"mean": 2.0, "max": 3.0, "median": 2.0}


# ----------------------------------------------------------------- datasets
def test_gen_dataset_splits_and_covariance():
    tr = gen_dataset("poisson1d", "train", 5, n=32, seed=1)
    ood = gen_dataset("poisson1d", "test_ood", 3, CovarianceSpec(1, 25.0, 2.0, "dirichlet"), n=32, seed=1)
    assert len(tr) == 5 and len(tr.outputs) == 5 and tr.inputs[0].grid.shape == (32,)
    assert ood.covariance.tau_sq == 25.0 and len(ood) == 3
    assert gen_dataset("poisson1d", "train", 2, n=32, seed=1, with_outputs=False).outputs is None


def test_dataset_files_bitwise_reproducible(tmp_path):
    for name in ("a", "b"):
        save_dataset(gen_dataset("poisson1d", "train", 3, n=32, seed=7), tmp_path / name)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.json" in files and "input_00000.bin" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    head = read_field_header(tmp_path / "a" / "input_00001.bin")
    assert {"equation", "grid_shape", "domain", "split", "index", "covariance"} <= set(head)
    assert head["index"] == 1 and head["split"] == "train"
    back = load_dataset(tmp_path / "a")
    orig = gen_dataset("poisson1d", "train", 3, n=32, seed=7)
    assert back.inputs[2].values.tobytes() == orig.inputs[2].values.tobytes()
    assert back.inputs[2].series.coefficients.tobytes() == orig.inputs[2].series.coefficients.tobytes()
    assert read_field(tmp_path / "a" / "output_00000.bin").values.tobytes() == orig.outputs[0].values.tobytes()


def test_darcy_and_ns_datasets_small():
    d = gen_dataset("darcy2d", "train", 2, n=12, seed=0)
    assert set(np.unique(d.inputs[0].values)) <= {3.0, 12.0}
    assert d.outputs[0].values.min() >= 0
    ns = gen_dataset("ns2d", "train", 1, n=16, seed=0, settings={"T": 0.01, "dt": 1e-3})
    assert "omega0" in ns.extras and ns.outputs[0].grid.periodic


# ------------------------------------------------------------------- config
def test_config_loading(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(preset_name="nope")
    with pytest.raises(ConfigurationError):
        load_config()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dataset": {"n_train": 10}}))
    cfg = load_config(p, "poisson-desk", seed=42)
    assert cfg["dataset"]["n_train"] == 10 and cfg["dataset"]["seed"] == 42
    assert cfg["experiment"]["sweep_grids"] == [32, 50, 64, 100, 128, 200, 256, 400, 512, 800, 1024]
    p.write_text(json.dumps({"dataset": {"equation": "heat"}}))
    with pytest.raises(ConfigurationError):
        load_config(p, "poisson-desk")
    p.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_presets_match_documented_scales():
    pd, dd, nd = preset("poisson-desk"), preset("darcy-desk"), preset("ns-desk")
    assert (pd["dataset"]["n_train"], pd["models"]["rebano"]["n_neurons"], pd["training"]["pinn"]["epochs"]) == (200, 8, 5000)
    assert (dd["dataset"]["n_train"], dd["models"]["rebano"]["n_neurons"], dd["dataset"]["n"]) == (100, 12, 40)
    assert dd["models"]["rebano"]["collocation"]["n_elements"] == 6
    assert (nd["dataset"]["n_train"], nd["models"]["rebano"]["n_neurons"], nd["dataset"]["n"]) == (20, 3, 32)
    assert nd["dataset"]["settings"]["T"] == 1.0
    for name, n in (("poisson-full", 8), ("darcy-full", 48), ("ns-full", 20)):
        assert preset(name)["models"]["rebano"]["n_neurons"] == n


def test_parameter_label_format():
    col = poisson_collocation(16)
    b = ReducedBasis("poisson1d", col)
    for i in range(8):
        net = init_network([1, 20, 20, 20, 1], "tanh", i)
        b.add(net, precompute_neuron(net, col, i), {})
    assert b.parameter_label == "8 + 901×8"


# ---------------------------------------------------------------- benchmark
@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    cache = tmp_path_factory.mktemp("cache")
    cfg = tiny_poisson_config()
    rep = run_benchmark(cfg, out, cache_dir=cache)
    return cfg, rep, out, cache


def test_report_shape_and_files(tiny_run):
    cfg, rep, out, _ = tiny_run
    assert [r["model"] for r in rep["rows"]] == ["rebano", "pcanet", "deeponet"]
    for r in rep["rows"]:
        assert "error" not in r
        assert r["r_id"] == r["e_mean_id"] / r["e_mean_train"]
    assert rep["rows"][0]["params"] == "2 + 97×2"
    with open(out / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS and len(rows) == 4
    assert json.loads((out / "report.json").read_text())["rows"][1]["model"] == "pcanet"
    assert (out / "rebano" / "history.json").exists() and (out / "pcanet" / "pca.bin").exists()


def test_ratios_recomputed_from_sample_files(tiny_run):
    _, rep, out, _ = tiny_run
    for r in rep["rows"]:
        e = {s: read_sample_errors(out, r["model"], s).mean() for s in ("train", "test_id", "test_ood")}
        assert abs(e["test_id"] / e["train"] - r["r_id"]) <= 1e-12
        assert abs(e["test_ood"] / e["train"] - r["r_ood"]) <= 1e-12
        assert read_sample_errors(out, r["model"], "train").max() == r["e_max_train"]


def test_benchmark_deterministic(tiny_run):
    cfg, rep, _, cache = tiny_run
    again = run_benchmark(cfg, cache_dir=cache)
    assert fingerprint(again) == fingerprint(rep)
    assert fingerprint(run_benchmark(cfg)) == fingerprint(rep)


def test_failed_model_row_does_not_stop_others():
    cfg = tiny_poisson_config(models={"pcanet": {"hidden": [0]}}, experiment={"models": ["pcanet", "deeponet"]})
    rep = run_benchmark(cfg)
    assert "error" in rep["rows"][0] and "ConfigurationError" in rep["rows"][0]["error"]
    assert "e_mean_train" in rep["rows"][1]


# --------------------------------------------------------- sweep & ablation
def test_sweep_shape_and_ns_capability(tiny_run):
    cfg, rep, _, _ = tiny_run
    basis = rep["_artifacts"]["rebano"]
    rows = sweep_resolution(basis, cfg, SWEEP_GRIDS[:3], count=2)
    assert [r["grid"] for r in rows] == [32, 50, 64]
    assert all(r["e_max"] >= r["e_mean"] > 0 for r in rows)
    with pytest.raises(CapabilityError):
        sweep_resolution(basis, preset("ns-desk"), [32])


def test_single_neuron_sweep_constant():
    cfg = tiny_poisson_config(training={"pinn": {"widths": [1, 20, 20, 20, 1], "epochs": 1000, "lbfgs_iters": 500}})
    test = make_dataset(cfg, "test_id", 1, with_outputs=False)
    from rebano.experiments import make_collocation, make_instance, pinn_config
    col, _ = make_collocation(cfg)
    basis = greedy_build([make_instance(cfg, test.inputs[0], col)], pinn_config(cfg), 1)
    rows = sweep_resolution(basis, cfg, [32, 64, 128, 256, 512, 1024], test=test, count=1)
    e = [r["e_mean"] for r in rows]
    assert max(e) - min(e) <= 1e-3


def test_ablation_table_shape(tmp_path):
    cfg = tiny_poisson_config()
    rows = ablate_greedy(cfg, [0, 1], n_max=2, cache_dir=tmp_path)
    assert len(rows) == 2 * 2 * 2
    for seed in (0, 1):
        g1 = [r for r in rows if r["seed"] == seed and r["n"] == 1]
        assert g1[0]["max_indicator"] == g1[1]["max_indicator"]
    med = ablation_medians(rows)
    assert set(med) == {"greedy", "random"} and set(med["greedy"]) == {1, 2}


# ---------------------------------------------------------------------- CLI
def _tiny_file(tmp_path, **over):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(tiny_poisson_config(**over)))
    return str(p)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # lr 1e200 diverges on purpose
def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["--preset", "nope", "gen-data"]) == 2
    assert cli.main(["inspect", str(tmp_path / "missing.bin")]) == 4
    bad = _tiny_file(tmp_path, training={"pinn": {"lr": 1e200, "epochs": 5, "lbfgs_iters": 0}})
    out = tmp_path / "data"
    assert cli.main(["gen-data", "--config", bad, "--out", str(out), "--split", "train", "--count", "2"]) == 0
    assert cli.main(["train-pinn", "--config", bad, "--dataset", str(out / "train"), "--out", str(tmp_path / "p")]) == 3


def test_cli_pipeline(tmp_path, capsys):
    cfgp = _tiny_file(tmp_path)
    data = tmp_path / "data"
    assert cli.main(["--config", cfgp, "--out", str(data), "gen-data"]) == 0
    assert cli.main(["build-rebano", "--config", cfgp, "--dataset", str(data / "train"), "--out",
                     str(tmp_path / "basis"), "--cache", str(tmp_path / "cache")]) == 0
    assert cli.main(["infer", "--basis", str(tmp_path / "basis"), "--dataset", str(data / "test_id"), "--out",
                     str(tmp_path / "pred")]) == 0
    assert (tmp_path / "pred" / "errors.csv").exists()
    capsys.readouterr()
    assert cli.main(["inspect", str(tmp_path / "basis")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["size"] == 2 and len(info["history"]) == 2
    assert cli.main(["inspect", str(tmp_path / "basis" / "neuron_000" / "precomp.bin")]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "precomp"
    assert cli.main(["inspect", str(data / "train" / "input_00000.bin")]) == 0
    assert json.loads(capsys.readouterr().out)["split"] == "train"
    assert cli.main(["sweep", "--config", cfgp, "--basis", str(tmp_path / "basis"), "--grids", "32", "64",
                     "--out", str(tmp_path / "sweep")]) == 0
    assert len(json.loads((tmp_path / "sweep" / "sweep.json").read_text())) == 2
