from types import SimpleNamespace

import numpy as np
import pytest

from rebano.baselines import (
    BaselineConfig, _coords, _deeponet_forward, load_baseline, pca_fit, pca_project, pca_reconstruct,
    predict_baseline, retained_energy, save_baseline, train_baseline,
)
from rebano.errors import CapabilityError, ContractViolation
from rebano.fields import Field, Grid
from rebano.grf import CovarianceSpec, sample
from rebano.nn import forward
from rebano.solvers import solve_poisson_1d

SPEC = CovarianceSpec(1, 1.0, 2.0, "dirichlet", n_modes=16)


def _snapshots(n=40, grid=Grid.unit(64), seed=0):
    rng = np.random.default_rng(seed)
    return [sample(SPEC, grid, rng) for _ in range(n)]


def _weighted_gram(basis):
    w = basis.grid.weights().ravel()
    return basis.modes.T @ (w[:, None] * basis.modes)


def test_pca_orthonormal_sorted_and_idempotent():
    snaps = _snapshots()
    b = pca_fit(snaps, 10)
    assert np.abs(_weighted_gram(b) - np.eye(10)).max() <= 1e-10
    assert np.all(np.diff(b.singular_values) <= 0)
    a = pca_project(b, snaps[3])
    assert np.abs(pca_project(b, pca_reconstruct(b, a)) - a).max() <= 1e-10


def test_pca_constant_snapshots_rank_zero(caplog):
    g = Grid.unit(16)
    snaps = [Field(g, np.ones(16)) for _ in range(5)]
    with caplog.at_level("WARNING"):
        b = pca_fit(snaps, 3)
    assert b.rank == 0 and "rank 0" in caplog.text
    assert np.allclose(pca_reconstruct(b, np.zeros(0)).values, 1.0)


def test_pca_two_dimensional_subspace():
    g = Grid.unit(50)
    x = g.axes()[0]
    p1, p2 = np.sin(np.pi * x), x * (1 - x) * np.exp(x)
    rng = np.random.default_rng(0)
    snaps = [Field(g, a * p1 + b * p2) for a, b in rng.standard_normal((20, 2))]
    b = pca_fit(snaps, 5)
    assert b.rank == 2
    for f in (p1, p2, 0.3 * p1 - 2 * p2):
        rec = pca_reconstruct(b, pca_project(b, Field(g, f))).values
        # mean lies in the span too, so the projection is exact
        assert np.abs(rec - f).max() <= 1e-10


def test_pca_full_rank_reconstruction_and_unit_modes():
    snaps = _snapshots(12)
    b = pca_fit(snaps, 12)
    for s in snaps:
        assert np.abs(pca_reconstruct(b, pca_project(b, s)).values - s.values).max() <= 1e-10
    mode = Field(b.grid, b.mean + b.modes[:, 2])
    assert np.abs(pca_project(b, mode) - np.eye(b.rank)[2]).max() <= 1e-10
    assert np.array_equal(pca_reconstruct(b, np.zeros(b.rank)).values.ravel(), b.mean)


def test_pca_tail_energy_bound():
    snaps = _snapshots(60)
    b = pca_fit(snaps, 5)
    full = pca_fit(snaps, 60)
    tail = float((full.singular_values[5:] ** 2).sum())
    w = b.grid.weights().ravel()
    err2 = sum(float(w @ (pca_reconstruct(b, pca_project(b, s)).values.ravel() - s.values.ravel()) ** 2)
               for s in snaps)
    assert abs(err2 - tail) <= 1e-10 * max(1.0, tail)
    assert retained_energy(b, snaps) <= 1.0


def test_pca_grid_mismatch():
    b = pca_fit(_snapshots(5), 3)
    with pytest.raises(ContractViolation):
        pca_project(b, _snapshots(1, Grid.unit(32))[0])


def _poisson_ds(n=30, grid=Grid.unit(64), seed=0):
    ins = _snapshots(n, grid, seed)
    return SimpleNamespace(inputs=ins, outputs=[solve_poisson_1d(f) for f in ins])


def test_pcanet_fits_linear_map():
    rng = np.random.default_rng(0)
    g = Grid.unit(64)
    spec = CovarianceSpec(1, 1.0, 2.0, "dirichlet", n_modes=4)
    ins = [sample(spec, g, rng) for _ in range(50)]
    pca = pca_fit(ins, 4)
    M = np.random.default_rng(1).standard_normal((4, 4))
    outs = [pca_reconstruct(pca, M @ pca_project(pca, f)) for f in ins]
    cfg = BaselineConfig("pcanet", hidden=(64, 64), n_modes_in=4, n_modes_out=4, lr=1e-2, halving_period=100)
    model, hist = train_baseline("pcanet", SimpleNamespace(inputs=ins, outputs=outs), cfg)
    assert len(hist) == 1001 and min(hist) <= 1e-3


@pytest.mark.parametrize("kind", ["pcanet", "deeponet"])
def test_zero_epochs_and_determinism(kind):
    ds = _poisson_ds(10)
    cfg = BaselineConfig(kind, hidden=(8,), branch_hidden=(8,), trunk_hidden=(8,), latent=5, n_modes_in=5,
                         n_modes_out=5, epochs=0, seed=3)
    m, h = train_baseline(kind, ds, cfg)
    assert len(h) == 1
    m2, _ = train_baseline(kind, ds, cfg)
    for k in m.nets:
        assert m.nets[k].flat().tobytes() == m2.nets[k].flat().tobytes()
    cfg20 = BaselineConfig(**{**cfg.__dict__, "epochs": 20})
    h1 = train_baseline(kind, ds, cfg20)[1]
    h2 = train_baseline(kind, ds, cfg20)[1]
    assert np.array(h1).tobytes() == np.array(h2).tobytes()


def test_memorize_single_sample():
    ds = _poisson_ds(1)
    ds.inputs = ds.inputs * 2
    ds.outputs = ds.outputs * 2
    cfg = BaselineConfig("deeponet", branch_hidden=(16,), trunk_hidden=(32, 32), latent=8, n_modes_in=1,
                         epochs=1500, lr=3e-3, halving_period=500, activation="tanh")
    m, h = train_baseline("deeponet", ds, cfg)
    p = predict_baseline(m, ds.inputs[0])
    t = ds.outputs[0].values
    assert np.linalg.norm(p.values - t) / np.linalg.norm(t) <= 1e-2


def test_pcanet_composition_and_grid_capability():
    ds = _poisson_ds(20)
    cfg = BaselineConfig("pcanet", hidden=(16, 16), n_modes_in=6, n_modes_out=6, epochs=50)
    m, _ = train_baseline("pcanet", ds, cfg)
    f = ds.inputs[4]
    a = pca_project(m.pca_in, f) / m.in_scale
    beta = forward(m.nets["net"], a[None, :])[0] * m.out_scale
    manual = pca_reconstruct(m.pca_out, beta).values
    assert np.abs(predict_baseline(m, f).values - manual).max() <= 1e-13
    with pytest.raises(CapabilityError):
        predict_baseline(m, f, Grid.unit(128))


def test_deeponet_refined_grid_and_branch_linearity():
    ds = _poisson_ds(20)
    cfg = BaselineConfig("deeponet", branch_hidden=(16,), trunk_hidden=(16,), latent=6, n_modes_in=6, epochs=30)
    m, _ = train_baseline("deeponet", ds, cfg)
    fine = predict_baseline(m, ds.inputs[0], Grid.unit(513))
    assert fine.values.shape == (513,) and np.all(np.isfinite(fine.values))
    A = np.stack([pca_project(m.pca_in, f) for f in ds.inputs[:2]]) / m.in_scale
    b, t, _, _ = _deeponet_forward(m, A, _coords(m.output_grid))
    pred = lambda bb: m.out_scale * (bb @ t.T)
    assert np.allclose(pred(2 * b[0] - b[1]), 2 * pred(b[0]) - pred(b[1]), atol=1e-13)


@pytest.mark.parametrize("kind", ["pcanet", "deeponet"])
def test_save_load_roundtrip(tmp_path, kind):
    ds = _poisson_ds(12)
    cfg = BaselineConfig(kind, hidden=(8,), branch_hidden=(8,), trunk_hidden=(8,), latent=4, n_modes_in=4,
                         n_modes_out=4, epochs=10)
    m, _ = train_baseline(kind, ds, cfg)
    save_baseline(m, tmp_path)
    raw = np.frombuffer((tmp_path / "pca.bin").read_bytes(), "<f8")
    assert np.array_equal(raw[:64], m.pca_in.mean)
    back = load_baseline(tmp_path)
    assert predict_baseline(back, ds.inputs[0]).values.tobytes() == predict_baseline(m, ds.inputs[0]).values.tobytes()
    assert back.parameter_count == m.parameter_count
