"""Data-driven baselines: PCA-Net and DeepONet.

Both are trained on paired (input, output) fields by full-batch Adam on the
mean relative L2 error.  Inner products are the grid-weighted discrete L2
products, so PCA modes are orthonormal in that product and the relative error
of PCA-Net can be evaluated in coefficient space.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapabilityError, ConfigurationError, ContractViolation, NumericalFailure
from .fields import Field, Grid
from .nn import NetworkParams, init_network, jet_and_pullback
from .optim import LRSchedule, adam_init, adam_step

log = logging.getLogger(__name__)


# --------------------------------------------------------------------- PCA
@dataclass
class PcaBasis:
    """Weighted PCA of snapshots on one grid.

    ``modes`` is ``(n_points, rank)`` with ``modes.T @ diag(w) @ modes = I``.
    """

    grid: Grid
    mean: np.ndarray
    modes: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.modes.shape[1]


def _values(f, grid: Grid | None = None) -> np.ndarray:
    if isinstance(f, Field):
        if grid is not None and f.grid != grid:
            raise ContractViolation(f"field on grid {f.grid.shape} but the basis lives on {grid.shape}")
        return f.values.ravel()
    return np.asarray(f, float).ravel()


def pca_fit(snapshots, n_modes: int, grid: Grid | None = None, tol: float = 1e-12) -> PcaBasis:
    """Centered weighted SVD; keeps at most ``n_modes`` modes above a relative singular-value floor."""
    if grid is None:
        grid = snapshots[0].grid
    X = np.stack([_values(s, grid) for s in snapshots], axis=1)
    if n_modes < 0:
        raise ConfigurationError("n_modes must be >= 0")
    w = grid.weights().ravel()
    sw = np.sqrt(w)
    mean = X.mean(axis=1)
    U, s, _ = np.linalg.svd(sw[:, None] * (X - mean[:, None]), full_matrices=False)
    rank = int(np.sum(s > tol * max(s[0] if s.size else 0.0, 1e-300))) if s.size and s[0] > 0 else 0
    if n_modes > rank:
        log.warning("requested %d PCA modes but the snapshots have rank %d; truncating", n_modes, rank)
    k = min(n_modes, rank)
    return PcaBasis(grid, mean, U[:, :k] / sw[:, None], s[:k])


def pca_project(basis: PcaBasis, f) -> np.ndarray:
    v = _values(f, basis.grid)
    if v.size != basis.mean.size:
        raise ContractViolation("field size does not match the PCA grid")
    return basis.modes.T @ (basis.grid.weights().ravel() * (v - basis.mean))


def pca_reconstruct(basis: PcaBasis, coefficients) -> Field:
    c = np.asarray(coefficients, float)
    return Field(basis.grid, basis.mean + basis.modes @ c)


def retained_energy(basis: PcaBasis, snapshots) -> float:
    """Fraction of centered snapshot energy captured by the basis."""
    w = basis.grid.weights().ravel()
    tot = 0.0
    for s in snapshots:
        r = _values(s, basis.grid) - basis.mean
        tot += float(w @ (r * r))
    return float((basis.singular_values ** 2).sum() / tot) if tot > 0 else 1.0


# ----------------------------------------------------------------- models
DEFAULT_ARCH = {
    # (pcanet hidden, deeponet branch hidden, deeponet trunk hidden, latent width, PCA modes)
    "poisson1d": ((64,) * 6, (60,) * 4, (60,) * 3, 60, 64),
    "darcy2d": ((200,) * 5, (200,) * 5, (200,) * 4, 200, 128),
    "ns2d": ((200,) * 4, (100,) * 4, (100,) * 3, 100, 64),
}


@dataclass
class BaselineConfig:
    kind: str = "pcanet"
    hidden: tuple = (64,) * 6
    branch_hidden: tuple = (60,) * 4
    trunk_hidden: tuple = (60,) * 3
    latent: int = 60
    n_modes_in: int = 64
    n_modes_out: int = 64
    activation: str = "relu"
    epochs: int = 1000
    lr: float = 1e-3
    halving_period: int | None = 100
    seed: int = 0

    @classmethod
    def for_equation(cls, kind: str, equation: str, **overrides) -> "BaselineConfig":
        h, b, t, p, m = DEFAULT_ARCH[equation]
        cfg = cls(kind, h, b, t, p, m, m)
        return cls(**{**cfg.__dict__, **overrides})

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("hidden", "branch_hidden", "trunk_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        d = dict(d)
        for k in ("hidden", "branch_hidden", "trunk_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class BaselineModel:
    kind: str
    pca_in: PcaBasis
    in_scale: np.ndarray
    nets: dict
    out_scale: np.ndarray | float
    pca_out: PcaBasis | None = None
    output_grid: Grid | None = None
    meta: dict = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return sum(n.parameter_count for n in self.nets.values())


def _coords(grid: Grid) -> np.ndarray:
    """Grid points mapped to ``[-1, 1]`` per axis."""
    X = grid.points()
    lo = np.array([d[0] for d in grid.domain])
    hi = np.array([d[1] for d in grid.domain])
    return 2.0 * (X - lo) / (hi - lo) - 1.0


def _input_scale(raw: np.ndarray) -> np.ndarray:
    """One common scale (the leading mode's standard deviation) for every input coefficient.

    Per-mode whitening would lift the noise-dominated tail modes to unit size
    and let the networks memorize through them.
    """
    if raw.shape[1] == 0:
        return np.ones(0)
    return np.full(raw.shape[1], max(float(raw.std(axis=0).max()), 1e-12))


def _encode_inputs(model_pca: PcaBasis, scale, inputs) -> np.ndarray:
    if model_pca.rank == 0:
        # degenerate (constant) inputs: a single zero feature keeps the network well formed
        for f in inputs:
            pca_project(model_pca, f)
        return np.zeros((len(inputs), 1))
    return np.stack([pca_project(model_pca, f) for f in inputs]) / scale


def _pad_rank(basis: PcaBasis) -> PcaBasis:
    """A rank-0 basis with one zero mode appended, so a network can still target it."""
    if basis.rank:
        return basis
    return PcaBasis(basis.grid, basis.mean, np.zeros((basis.mean.size, 1)), np.zeros(1))


def _net_apply(params: NetworkParams, X):
    (v, _, _), pb = jet_and_pullback(params, X, order=0)
    return v, pb


def _pcanet_forward(model: BaselineModel, A, want_grad=False):
    net = model.nets["net"]
    if not want_grad:
        return _net_apply(net, A)[0] * model.out_scale
    v, pb = _net_apply(net, A)
    return v * model.out_scale, pb


def _deeponet_forward(model: BaselineModel, A, X):
    b, pb_b = _net_apply(model.nets["branch"], A)
    t, pb_t = _net_apply(model.nets["trunk"], X)
    return b, t, pb_b, pb_t


def train_baseline(kind: str, dataset, config: BaselineConfig | None = None) -> tuple[BaselineModel, list]:
    """Fit PCA and train the coefficient network(s); returns ``(model, loss_history)``.

    ``dataset`` has ``inputs`` and ``outputs`` lists of :class:`Field`.
    """
    config = config or BaselineConfig(kind)
    if kind not in ("pcanet", "deeponet"):
        raise ConfigurationError(f"unknown baseline {kind!r}")
    inputs, outputs = list(dataset.inputs), list(dataset.outputs or [])
    if not outputs or len(outputs) != len(inputs):
        raise ConfigurationError("baselines need paired input/output fields")
    pca_in = pca_fit(inputs, config.n_modes_in)
    raw = np.stack([pca_project(pca_in, f) for f in inputs]) if pca_in.rank else np.zeros((len(inputs), 0))
    in_scale = _input_scale(raw)
    A = _encode_inputs(pca_in, in_scale, inputs)
    out_grid = outputs[0].grid
    w = out_grid.weights().ravel()
    U = np.stack([_values(u, out_grid) for u in outputs])
    unorm2 = U ** 2 @ w
    if np.any(unorm2 <= 0):
        raise ConfigurationError("an output field has zero norm; relative error undefined")
    rng_seeds = np.random.SeedSequence(config.seed).generate_state(2, np.uint64)

    if kind == "pcanet":
        pca_out = _pad_rank(pca_fit(outputs, config.n_modes_out))
        B = np.stack([pca_project(pca_out, u) for u in outputs])
        resid = U - pca_out.mean - B @ pca_out.modes.T
        tail = resid ** 2 @ w
        out_scale = np.maximum(B.std(axis=0), 1e-12)
        net = init_network([A.shape[1], *config.hidden, pca_out.rank], config.activation, int(rng_seeds[0]))
        model = BaselineModel(kind, pca_in, in_scale, {"net": net}, out_scale, pca_out, out_grid)

        def loss_grad(theta):
            p = net.with_flat(theta)
            v, pb = _net_apply(p, A)
            D = v * out_scale - B
            err2 = (D * D).sum(axis=1) + tail
            e = np.sqrt(err2 / unorm2)
            n = len(e)
            coef = 1.0 / (n * np.maximum(e, 1e-300) * unorm2)
            return float(e.mean()), pb(coef[:, None] * D * out_scale)

        thetas = {"net": net}
    else:
        X = _coords(out_grid)
        out_scale = float(np.sqrt((unorm2 / w.sum()).mean()))
        branch = init_network([A.shape[1], *config.branch_hidden, config.latent], config.activation, int(rng_seeds[0]))
        trunk = init_network([X.shape[1], *config.trunk_hidden, config.latent], config.activation, int(rng_seeds[1]))
        model = BaselineModel(kind, pca_in, in_scale, {"branch": branch, "trunk": trunk}, out_scale, None, out_grid)
        nb = branch.parameter_count

        def loss_grad(theta):
            pbr, ptr = branch.with_flat(theta[:nb]), trunk.with_flat(theta[nb:])
            b, pb_b = _net_apply(pbr, A)
            t, pb_t = _net_apply(ptr, X)
            E = out_scale * (b @ t.T) - U
            err2 = (E * E) @ w
            e = np.sqrt(err2 / unorm2)
            n = len(e)
            Ebar = (out_scale / (n * np.maximum(e, 1e-300) * unorm2))[:, None] * E * w
            return float(e.mean()), np.concatenate([pb_b(Ebar @ t), pb_t(Ebar.T @ b)])

        thetas = {"branch": branch, "trunk": trunk}

    theta = np.concatenate([p.flat() for p in thetas.values()])
    state = adam_init(theta.size, LRSchedule(config.lr, config.halving_period))
    best_theta, best = theta, np.inf
    history = []
    for epoch in range(config.epochs + 1):
        loss, g = loss_grad(theta)
        if not np.isfinite(loss):
            raise NumericalFailure(f"{kind} training loss non-finite at epoch {epoch}", loss)
        history.append(loss)
        if loss < best:
            best, best_theta = loss, theta
        if epoch == config.epochs:
            break
        state, theta = adam_step(state, theta, g)
    off = 0
    for name, p in thetas.items():
        k = p.parameter_count
        model.nets[name] = p.with_flat(best_theta[off:off + k])
        off += k
    model.meta = {"config": config.to_dict(), "train_loss": float(best),
                  "energy_in": retained_energy(pca_in, inputs) if pca_in.rank else 0.0}
    if model.pca_out is not None:
        model.meta["energy_out"] = retained_energy(model.pca_out, outputs)
    return model, history


def predict_baseline(model: BaselineModel, inputs, grid: Grid | None = None) -> list[Field]:
    """Predictions for a list of input fields (each on the training input grid)."""
    single = isinstance(inputs, Field)
    inputs = [inputs] if single else list(inputs)
    A = _encode_inputs(model.pca_in, model.in_scale, inputs)
    grid = grid or model.output_grid
    if model.kind == "pcanet":
        if grid != model.output_grid:
            raise CapabilityError("PCA-Net predicts only on its training output grid")
        beta = _pcanet_forward(model, A)
        out = [pca_reconstruct(model.pca_out, b) for b in beta]
    else:
        b, t, _, _ = _deeponet_forward(model, A, _coords(grid))
        V = model.out_scale * (b @ t.T)
        out = [Field(grid, v) for v in V]
    return out[0] if single else out


# ------------------------------------------------------------- persistence
def _write_pca(path: Path, basis: PcaBasis):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(basis.mean, "<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.modes.T, "<f8").tobytes())
    return {"grid": basis.grid.to_dict(), "n_points": int(basis.mean.size), "rank": basis.rank,
            "singular_values": basis.singular_values.tolist()}


def _read_pca(path: Path, meta: dict) -> PcaBasis:
    raw = np.frombuffer(path.read_bytes(), "<f8").astype(float)
    n, r = meta["n_points"], meta["rank"]
    if raw.size != n * (r + 1):
        raise ConfigurationError(f"{path}: expected {n * (r + 1)} values, found {raw.size}")
    return PcaBasis(Grid.from_dict(meta["grid"]), raw[:n].copy(), raw[n:].reshape(r, n).T.copy(),
                    np.array(meta["singular_values"]))


def save_baseline(model: BaselineModel, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    side = {"kind": model.kind, "meta": model.meta, "in_scale": np.asarray(model.in_scale).tolist(),
            "out_scale": np.asarray(model.out_scale).tolist(),
            "output_grid": model.output_grid.to_dict() if model.output_grid else None,
            "pca_in": _write_pca(d / "pca.bin", model.pca_in)}
    if model.pca_out is not None:
        side["pca_out"] = _write_pca(d / "pca_out.bin", model.pca_out)
    for name, net in model.nets.items():
        (d / f"{name}.json").write_text(net.to_json())
    side["nets"] = sorted(model.nets)
    (d / "pca.json").write_text(json.dumps(side, indent=1))
    return d


def load_baseline(directory) -> BaselineModel:
    d = Path(directory)
    side = json.loads((d / "pca.json").read_text())
    pca_in = _read_pca(d / "pca.bin", side["pca_in"])
    pca_out = _read_pca(d / "pca_out.bin", side["pca_out"]) if "pca_out" in side else None
    nets = {n: NetworkParams.from_json((d / f"{n}.json").read_text()) for n in side["nets"]}
    out_scale = np.array(side["out_scale"]) if isinstance(side["out_scale"], list) else float(side["out_scale"])
    grid = Grid.from_dict(side["output_grid"]) if side["output_grid"] else None
    return BaselineModel(side["kind"], pca_in, np.array(side["in_scale"]), nets, out_scale, pca_out, grid,
                         side["meta"])
