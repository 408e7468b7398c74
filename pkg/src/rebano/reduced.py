"""Reduced Basis Neural Operator.

A basis of ``n`` pre-trained networks ``u_1..u_n`` defines the decoder
``c -> sum_i c_i u_i``.  The encoder maps an input to ``c`` by minimizing the
physics loss of the combination; because the combination is linear in ``c``
the jets of every ``u_i`` on the collocation sets are tabulated once and the
online problem never touches the networks.  For linear PDEs the online problem
is an ordinary least-squares problem.  The basis is grown greedily: the next
neuron is trained at the candidate input with the largest online loss.
"""
from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, GreedySelectionError, NumericalFailure
from .nn import NetworkParams, forward
from .optim import LRSchedule, adam_init, adam_step, lbfgs_minimize
from .pinn import (
    CollocationSets, PinnConfig, ProblemInstance, TrainResult, loss_from_jets, network_jets, train_pinn,
)

log = logging.getLogger(__name__)

LINEAR_EQUATIONS = ("poisson1d", "darcy2d")
PRECOMP_MAGIC = b"RBNOPREC"
PRECOMP_VERSION = 1


# ----------------------------------------------------------------- neuron tables
@dataclass
class NeuronPrecomp:
    """Jets of one basis network on every collocation set.

    ``tables[set] = (value, grad, hess_diag)`` in the layout of
    :func:`rebano.pinn.network_jets`.
    """

    index: int
    tables: dict

    def table_items(self):
        """Flat ``(name, array)`` list in a fixed order (used for persistence)."""
        out = []
        for k in sorted(self.tables):
            for comp, arr in zip(("value", "grad", "hess"), self.tables[k]):
                if arr is not None:
                    out.append((f"{k}.{comp}", arr))
        return out


def precompute_neuron(net: NetworkParams, collocation: CollocationSets, index: int = 0) -> NeuronPrecomp:
    jets, _ = network_jets(net, collocation)
    for name, parts in jets.items():
        for arr in parts:
            if arr is not None and not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise NumericalFailure(f"non-finite jet of neuron {index} on set {name!r} at point {bad}", bad)
    return NeuronPrecomp(index, {k: tuple(None if a is None else np.array(a) for a in v) for k, v in jets.items()})


class StackedTables:
    """Neuron tables stacked along a leading basis axis, for fast combination."""

    def __init__(self, precomps: Sequence[NeuronPrecomp]):
        self.n = len(precomps)
        names = precomps[0].tables.keys() if precomps else ()
        self.stacks = {}
        for k in names:
            self.stacks[k] = tuple(
                None if precomps[0].tables[k][j] is None else np.stack([p.tables[k][j] for p in precomps])
                for j in range(3))

    def combine(self, c) -> dict:
        c = np.asarray(c, float)
        return {k: tuple(None if s is None else np.tensordot(c, s, axes=1) for s in v) for k, v in self.stacks.items()}

    def single(self, i: int) -> dict:
        return {k: tuple(None if s is None else s[i] for s in v) for k, v in self.stacks.items()}

    def pull(self, adj: dict) -> np.ndarray:
        """Gradient w.r.t. ``c`` from jet adjoints."""
        g = np.zeros(self.n)
        for k, parts in adj.items():
            for s, a in zip(self.stacks[k], parts):
                if a is not None:
                    g += np.tensordot(s, a, axes=a.ndim)
        return g


# ------------------------------------------------------------------ the basis
@dataclass
class ReducedBasis:
    equation: str
    collocation: CollocationSets
    networks: list = field(default_factory=list)
    precomps: list = field(default_factory=list)
    history: list = field(default_factory=list)
    scans: list = field(default_factory=list)
    assembly: object = None  # weak-form assembly (darcy2d)
    _stacked: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.networks)

    def add(self, net: NetworkParams, precomp: NeuronPrecomp, record: dict):
        self.networks.append(net)
        self.precomps.append(precomp)
        self.history.append(record)
        self._stacked.clear()

    def truncated(self, n: int) -> "ReducedBasis":
        """The basis made of the first ``n`` neurons (sharing tables)."""
        return ReducedBasis(self.equation, self.collocation, self.networks[:n], self.precomps[:n],
                            self.history[:n], self.scans[:n], self.assembly)

    def tables_for(self, collocation: CollocationSets) -> StackedTables:
        """Stacked tables on ``collocation``; tabulated live (and cached) for foreign point sets."""
        key = id(collocation)
        if key not in self._stacked:
            if collocation is self.collocation:
                pre = self.precomps
            else:
                pre = [precompute_neuron(net, collocation, i) for i, net in enumerate(self.networks)]
            self._stacked[key] = (collocation, StackedTables(pre))
        return self._stacked[key][1]

    @property
    def parameter_label(self) -> str:
        if not self.networks:
            return "0"
        return f"{self.size} + {self.networks[0].parameter_count}×{self.size}"


# ------------------------------------------------------------- residual vectors
def residual_vector(inst: ProblemInstance, jets: dict, linearize: bool = False) -> np.ndarray:
    """Weighted residual vector ``r`` with ``||r||^2`` equal to the physics loss.

    ``linearize`` drops the advection term of ``ns2d`` (used to initialize the
    nonlinear online solve).
    """
    eq = inst.equation
    if eq == "poisson1d":
        r = -jets["R"][2][:, 0, 0] - inst.data["f_R"]
        vB = jets["B"][0][:, 0]
        return np.concatenate([r / np.sqrt(r.size), vB / np.sqrt(vB.size)])
    if eq == "darcy2d":
        asm = inst.assembly
        g = jets["Q"][1]
        wa = asm.weights * inst.data["a_Q"]
        R = inst.data["ell"] - asm.dphi_x @ (wa * g[:, 0, 0]) - asm.dphi_y @ (wa * g[:, 0, 1])
        vB = jets["B"][0][:, 0]
        lam = inst.params.get("boundary_weight", 1.0)
        return np.concatenate([asm.whiten(R), vB * np.sqrt(lam / vB.size)])
    if eq == "ns2d":
        nu = inst.params["nu"]
        v, g, h = jets["R"]
        r1 = g[:, 0, 2] - nu * (h[:, 0, 0] + h[:, 0, 1]) - inst.data["fp_R"]
        if not linearize:
            r1 = r1 + g[:, 1, 1] * g[:, 0, 0] - g[:, 1, 0] * g[:, 0, 1]
        r2 = v[:, 0] + h[:, 1, 0] + h[:, 1, 1]
        n_time = inst.collocation.meta["n_time"]
        m = v[:, 1].reshape(n_time, -1).mean(axis=1)
        r0 = jets["I"][0][:, 0] - inst.data["w0_I"]
        parts = [r1 / np.sqrt(r1.size), r2 / np.sqrt(r2.size), m / np.sqrt(n_time), r0 / np.sqrt(r0.size)]
        for a, b in (("BX0", "BX1"), ("BY0", "BY1")):
            nb = jets[a][0].shape[0]
            parts.append((jets[a][0] - jets[b][0]).ravel() / np.sqrt(nb))
            parts.append((jets[a][1] - jets[b][1]).ravel() / np.sqrt(nb))
        return np.concatenate(parts)
    raise ConfigurationError(f"unknown equation {eq!r}")


def linear_system(tables: StackedTables, inst: ProblemInstance, linearize: bool = False):
    """``(A, b)`` with ``residual_vector(c) = A c - b`` (exact for linear residuals)."""
    r0 = residual_vector(inst, tables.combine(np.zeros(tables.n)), linearize)
    A = np.stack([residual_vector(inst, tables.single(i), linearize) - r0 for i in range(tables.n)], axis=1)
    return A, -r0


@dataclass
class OnlineResult:
    c: np.ndarray
    loss: float
    degenerate: bool = False
    checkpoints: list = field(default_factory=list)


@dataclass
class OnlineConfig:
    """Settings of the iterative online solves (ns2d, and the L-BFGS route for linear PDEs)."""

    epochs: int = 500
    lr: float = 5e-3
    checkpoint_every: int = 50
    lbfgs_iters: int = 100
    lbfgs_step: float = 1.0
    lbfgs_memory: int | None = None  # None: max(10, 2 * basis size)

    def to_dict(self):
        return dict(self.__dict__)


def table_loss(tables: StackedTables, inst: ProblemInstance, c) -> tuple[float, np.ndarray]:
    """Physics loss of ``sum_i c_i u_i`` from tables, and its gradient in ``c``."""
    loss, _, adj = loss_from_jets(inst, tables.combine(c))
    return loss, tables.pull(adj)


def zero_predictor_loss(inst: ProblemInstance) -> float:
    jets = {}
    d = inst.collocation.points
    m = 2 if inst.equation == "ns2d" else 1
    for k, X in d.items():
        N, dim = X.shape
        jets[k] = (np.zeros((N, m)), np.zeros((N, m, dim)), np.zeros((N, m, dim)))
    return loss_from_jets(inst, jets)[0]


def online_solve_linear(basis: ReducedBasis, inst: ProblemInstance, method: str = "lstsq",
                        config: OnlineConfig | None = None) -> OnlineResult:
    """Coefficients minimizing the physics loss for a linear PDE.

    ``method="lstsq"`` solves the least-squares problem exactly (minimum-norm
    solution and ``degenerate=True`` when rank deficient); ``method="lbfgs"``
    runs L-BFGS on the tabulated loss from ``c = 0``.
    """
    if inst.equation not in LINEAR_EQUATIONS:
        raise ConfigurationError(f"{inst.equation} is not linear; use online_solve_nonlinear")
    if basis.size == 0:
        raise ContractViolation("empty basis")
    tables = basis.tables_for(inst.collocation)
    if method == "lbfgs":
        config = config or OnlineConfig()
        # the reduced problem is tiny, so keep enough curvature pairs to capture its full spectrum
        m = config.lbfgs_memory or max(10, 2 * basis.size)
        res = lbfgs_minimize(lambda c: table_loss(tables, inst, c), np.zeros(basis.size),
                             max_iters=config.lbfgs_iters, m=m, tol=0.0, initial_step=config.lbfgs_step)
        return OnlineResult(res.x, res.fun, res.degraded)
    A, b = linear_system(tables, inst)
    c, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    r = A @ c - b
    return OnlineResult(c, float(r @ r), bool(rank < basis.size))


def online_solve_nonlinear(basis: ReducedBasis, inst: ProblemInstance, config: OnlineConfig | None = None,
                           c0=None) -> OnlineResult:
    """Adam on the tabulated ns2d loss, started from the linearized least-squares solution."""
    config = config or OnlineConfig()
    if basis.size == 0:
        raise ContractViolation("empty basis")
    tables = basis.tables_for(inst.collocation)
    if c0 is None:
        A, b = linear_system(tables, inst, linearize=True)
        c0 = np.linalg.lstsq(A, b, rcond=None)[0]
    c = np.array(c0, dtype=float)
    state = adam_init(c.size, LRSchedule(config.lr))
    best_c, best = c, np.inf
    checkpoints = []
    for epoch in range(config.epochs + 1):
        loss, g = table_loss(tables, inst, c)
        if not np.isfinite(loss):
            raise NumericalFailure(f"online loss non-finite at epoch {epoch}", loss)
        if loss < best:
            best, best_c = loss, c
        if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
            checkpoints.append((epoch, best))
        if epoch == config.epochs:
            break
        state, c = adam_step(state, c, g)
    return OnlineResult(best_c, float(best), False, checkpoints)


def encode(basis: ReducedBasis, inst: ProblemInstance, config: OnlineConfig | None = None) -> OnlineResult:
    if inst.equation in LINEAR_EQUATIONS:
        return online_solve_linear(basis, inst)
    return online_solve_nonlinear(basis, inst, config)


def indicator(basis: ReducedBasis, inst: ProblemInstance, config: OnlineConfig | None = None) -> float:
    """Minimal online loss; the zero-predictor loss for an empty basis."""
    if basis.size == 0:
        return zero_predictor_loss(inst)
    return encode(basis, inst, config).loss


def predict(basis: ReducedBasis, c, points, component: int = 0) -> np.ndarray:
    """``sum_i c_i u_i`` evaluated with the live networks at arbitrary points."""
    c = np.asarray(c, float)
    if c.shape != (basis.size,):
        raise ContractViolation(f"expected {basis.size} coefficients, got {c.shape}")
    X = np.atleast_2d(np.asarray(points, float))
    out = np.zeros(X.shape[0])
    for ci, net in zip(c, basis.networks):
        out += ci * forward(net, X)[:, component]
    return out


# ----------------------------------------------------------------- greedy loop
def derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed) % 2**63, *keys]).generate_state(1, np.uint64)[0] % 2**63)


Trainer = Callable[[ProblemInstance, PinnConfig, int], TrainResult]


def default_trainer(inst: ProblemInstance, config: PinnConfig, input_id: int) -> TrainResult:
    return train_pinn(inst, config)


def scan(basis: ReducedBasis, candidates: Sequence[ProblemInstance], config: OnlineConfig | None = None,
         threads: int = 1) -> np.ndarray:
    """Indicator of every candidate; order of the result follows ``candidates``."""
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return np.array(list(ex.map(lambda f: indicator(basis, f, config), candidates)))
    return np.array([indicator(basis, f, config) for f in candidates])


def greedy_build(
    candidates: Sequence[ProblemInstance],
    pinn_config: PinnConfig,
    n_max: int,
    tol: float = 1e-6,
    seed: int = 0,
    online_config: OnlineConfig | None = None,
    trainer: Trainer | None = None,
    threads: int = 1,
    final_scan: bool = False,
    first: int | None = None,
    policy: str = "greedy",
) -> ReducedBasis:
    """Grow a basis one neuron at a time at the worst-approximated candidate.

    The first input is drawn uniformly from ``candidates`` with ``seed`` unless
    ``first`` is given.  Stops at ``n_max`` neurons or when the largest
    indicator falls below ``tol``.  ``basis.scans[k]`` holds the indicators of
    all candidates for the basis of size ``k + 1``.

    ``policy="random"`` replaces the argmax by a uniform draw among unselected
    candidates (the ablation arm); scans are still recorded.  PINN seeds depend
    on the candidate index only, so both policies share trained networks.
    """
    if policy not in ("greedy", "random"):
        raise ConfigurationError(f"unknown selection policy {policy!r}")
    if not candidates:
        raise ConfigurationError("empty candidate set")
    if n_max < 1:
        raise ConfigurationError("n_max must be >= 1")
    trainer = trainer or default_trainer
    eq = candidates[0].equation
    basis = ReducedBasis(eq, candidates[0].collocation, assembly=candidates[0].assembly)
    rng = np.random.default_rng(seed)
    chosen = int(rng.integers(len(candidates))) if first is None else int(first)
    delta = zero_predictor_loss(candidates[chosen])
    selected = []
    while True:
        if chosen in selected:
            raise GreedySelectionError(f"candidate {chosen} selected twice; the online solve is inconsistent")
        cfg = replace(pinn_config, seed=derived_seed(seed, chosen))
        result = trainer(candidates[chosen], cfg, chosen)
        pre = precompute_neuron(result.params, basis.collocation, basis.size)
        basis.add(result.params, pre, {
            "neuron": basis.size, "input_id": chosen, "delta": float(delta),
            "pinn_loss": float(result.loss), "quality_warning": bool(result.quality_warning),
        })
        selected.append(chosen)
        log.info("neuron %d at candidate %d (indicator %.3e, PINN loss %.3e)",
                 basis.size, chosen, delta, result.loss)
        if basis.size >= n_max and not final_scan:
            break
        deltas = scan(basis, candidates, online_config, threads)
        basis.scans.append(deltas)
        if basis.size >= n_max:
            break
        if policy == "greedy":
            chosen = int(np.argmax(deltas))
            if deltas[chosen] < tol:
                break
        else:
            rest = [i for i in range(len(candidates)) if i not in selected]
            if not rest:
                break
            chosen = int(rest[rng.integers(len(rest))])
        delta = float(deltas[chosen])
    return basis


# ----------------------------------------------------------------- persistence
def _write_precomp(path: Path, pre: NeuronPrecomp):
    items = pre.table_items()
    with open(path, "wb") as fh:
        fh.write(PRECOMP_MAGIC + struct.pack("<II", PRECOMP_VERSION, len(items)))
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return [{"name": n, "shape": list(a.shape)} for n, a in items]


def _read_precomp(path: Path, layout: list, index: int) -> NeuronPrecomp:
    raw = path.read_bytes()
    if raw[:8] != PRECOMP_MAGIC:
        raise ConfigurationError(f"{path}: bad magic")
    version, count = struct.unpack("<II", raw[8:16])
    if version != PRECOMP_VERSION or count != len(layout):
        raise ConfigurationError(f"{path}: unsupported version {version} or table count {count}")
    off = 16
    tables = {}
    for item in layout:
        n = int(np.prod(item["shape"]))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(item["shape"]).astype(float)
        off += 8 * n
        set_name, comp = item["name"].split(".")
        parts = list(tables.get(set_name, (None, None, None)))
        parts[("value", "grad", "hess").index(comp)] = arr
        tables[set_name] = tuple(parts)
    return NeuronPrecomp(index, tables)


def save_basis(basis: ReducedBasis, directory, collocation_spec: dict | None = None) -> Path:
    """Write one directory per neuron (``network.json`` + ``precomp.bin``) and ``history.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    layout = None
    for i, (net, pre) in enumerate(zip(basis.networks, basis.precomps)):
        nd = d / f"neuron_{i:03d}"
        nd.mkdir(exist_ok=True)
        (nd / "network.json").write_text(net.to_json())
        layout = _write_precomp(nd / "precomp.bin", pre)
    (d / "history.json").write_text(json.dumps(basis.history, indent=1))
    meta = {"equation": basis.equation, "size": basis.size, "table_layout": layout,
            "collocation": collocation_spec or dict(basis.collocation.meta),
            "scans": [list(map(float, s)) for s in basis.scans]}
    (d / "basis.json").write_text(json.dumps(meta, indent=1))
    return d


def load_basis(directory, collocation: CollocationSets, assembly=None) -> ReducedBasis:
    d = Path(directory)
    meta = json.loads((d / "basis.json").read_text())
    history = json.loads((d / "history.json").read_text())
    basis = ReducedBasis(meta["equation"], collocation, assembly=assembly)
    for i in range(meta["size"]):
        nd = d / f"neuron_{i:03d}"
        net = NetworkParams.from_json((nd / "network.json").read_text())
        pre = _read_precomp(nd / "precomp.bin", meta["table_layout"], i)
        basis.add(net, pre, history[i])
    basis.scans = [np.array(s) for s in meta.get("scans", [])]
    return basis
