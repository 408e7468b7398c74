"""Physics-informed losses and full-order PINN training.

Every loss is written as a function of *jets*: for each named collocation set,
the tuple ``(value (N, m), grad (N, m, d), hess_diag (N, m, d))`` of the
predictor.  The loss returns the adjoints of those jets as well, so the same
code differentiates w.r.t. network weights (through
:func:`rebano.nn.jet_and_pullback`) and w.r.t. reduced-basis coefficients
(through precomputed neuron tables).

Equations
---------
``poisson1d``  ``-u'' = f`` on (0, 1), ``u(0) = u(1) = 0``; input ``(x,)``.
``darcy2d``    ``-div(a grad u) = f`` on the unit square, ``u = 0`` on the
               boundary; input ``(x, y)``; weak-form (robust variational) loss.
``ns2d``       vorticity/stream form on the ``[0, 2pi]^2`` torus; input
               ``(x, y, t)``, output ``(omega, psi)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.linalg as sla

from .errors import CapabilityError, ConfigurationError, NumericalFailure
from .fields import Field, Grid
from .grf import evaluate_at
from .nn import NetworkParams, init_network, jet_and_pullback
from .optim import LRSchedule, adam_init, adam_step, lbfgs_minimize

log = logging.getLogger(__name__)

EQUATIONS = ("poisson1d", "darcy2d", "ns2d")

# derivative order needed on every collocation set
SET_ORDERS = {
    "poisson1d": {"R": 2, "B": 0},
    "darcy2d": {"Q": 1, "B": 0},
    "ns2d": {"R": 2, "I": 0, "BX0": 1, "BX1": 1, "BY0": 1, "BY1": 1},
}


# ----------------------------------------------------------- weak-form assembly
@dataclass
class WeakFormAssembly:
    """Tensor-product Gauss quadrature and interior bilinear hat test functions.

    Test function ``n = i * (n_e - 1) + j`` is the hat at node ``(i+1, j+1) / n_e``.
    ``phi``, ``dphi_x``, ``dphi_y`` are ``(n_test, n_quad)`` values at the
    quadrature points; ``gram`` is the H1-seminorm Gram matrix.
    """

    n_elements: int
    n_gauss: int
    points: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    dphi_x: np.ndarray
    dphi_y: np.ndarray
    gram: np.ndarray
    gram_chol: np.ndarray

    @property
    def n_test(self) -> int:
        return self.phi.shape[0]

    def whiten(self, R: np.ndarray) -> np.ndarray:
        """``L^-1 R`` for the lower Cholesky factor ``L`` of the Gram matrix."""
        return sla.solve_triangular(self.gram_chol, R, lower=True)

    def dual_norm_sq(self, R: np.ndarray) -> float:
        z = self.whiten(R)
        return float(z @ z)


def _hat_1d(n_e: int, x: np.ndarray):
    """Values and derivatives of the ``n_e - 1`` interior 1-D hats at ``x``."""
    h = 1.0 / n_e
    nodes = np.arange(1, n_e) * h
    r = (x[None, :] - nodes[:, None]) / h
    val = np.clip(1.0 - np.abs(r), 0.0, None)
    der = np.where(np.abs(r) < 1.0, -np.sign(r) / h, 0.0)
    return val, der


def assemble_gram(n_elements: int, n_gauss: int = 4) -> WeakFormAssembly:
    if n_elements < 2:
        raise ConfigurationError("need at least 2 elements per side for interior test functions")
    if n_gauss < 2:
        raise ConfigurationError("Gauss order < 2 does not integrate the stiffness entries exactly")
    g, gw = np.polynomial.legendre.leggauss(n_gauss)
    h = 1.0 / n_elements
    x1 = ((np.arange(n_elements)[:, None] + (g[None, :] + 1) / 2) * h).ravel()
    w1 = np.tile(gw * h / 2, n_elements)
    V, D = _hat_1d(n_elements, x1)
    # quadrature points ordered with x slow, y fast (indexing='ij')
    X, Y = np.meshgrid(x1, x1, indexing="ij")
    points = np.stack([X.ravel(), Y.ravel()], axis=-1)
    weights = np.outer(w1, w1).ravel()
    nt = n_elements - 1
    phi = np.einsum("iq,jr->ijqr", V, V).reshape(nt * nt, -1)
    dx = np.einsum("iq,jr->ijqr", D, V).reshape(nt * nt, -1)
    dy = np.einsum("iq,jr->ijqr", V, D).reshape(nt * nt, -1)
    G = (dx * weights) @ dx.T + (dy * weights) @ dy.T
    G = 0.5 * (G + G.T)
    L = np.linalg.cholesky(G)
    return WeakFormAssembly(n_elements, n_gauss, points, weights, phi, dx, dy, G, L)


# ------------------------------------------------------------------ instances
@dataclass
class CollocationSets:
    """Named point sets; ``orders[name]`` is the jet order the loss needs there."""

    points: dict
    orders: dict
    meta: dict = field(default_factory=dict)

    def sizes(self) -> dict:
        return {k: len(v) for k, v in self.points.items()}


def poisson_collocation(s_R: int = 128) -> CollocationSets:
    return CollocationSets({"R": np.linspace(0.0, 1.0, s_R)[:, None], "B": np.array([[0.0], [1.0]])},
                           dict(SET_ORDERS["poisson1d"]), {"s_R": s_R})


def darcy_collocation(assembly: WeakFormAssembly, n_boundary: int = 40) -> CollocationSets:
    s = np.linspace(0.0, 1.0, n_boundary, endpoint=False)
    z, o = np.zeros_like(s), np.ones_like(s)
    B = np.concatenate([np.stack([s, z], 1), np.stack([o, s], 1), np.stack([1 - s, o], 1), np.stack([z, 1 - s], 1)])
    return CollocationSets({"Q": assembly.points, "B": B}, dict(SET_ORDERS["darcy2d"]),
                           {"n_elements": assembly.n_elements, "n_gauss": assembly.n_gauss, "n_boundary": n_boundary})


def ns_collocation(n_space: int = 16, n_time: int = 11, T: float = 1.0) -> CollocationSets:
    """Residual points on an ``n_space^2 x n_time`` space-time grid (slab-major)."""
    xs = Grid.torus(n_space).axes()[0]
    ts = np.linspace(0.0, T, n_time)
    Tt, Xx, Yy = np.meshgrid(ts, xs, xs, indexing="ij")
    R = np.stack([Xx.ravel(), Yy.ravel(), Tt.ravel()], axis=-1)
    Xi, Yi = np.meshgrid(xs, xs, indexing="ij")
    I = np.stack([Xi.ravel(), Yi.ravel(), np.zeros(Xi.size)], axis=-1)
    S, Tb = np.meshgrid(xs, ts, indexing="ij")
    s, tb = S.ravel(), Tb.ravel()
    zero, two_pi = np.zeros_like(s), np.full_like(s, 2 * np.pi)
    return CollocationSets(
        {"R": R, "I": I,
         "BX0": np.stack([zero, s, tb], 1), "BX1": np.stack([two_pi, s, tb], 1),
         "BY0": np.stack([s, zero, tb], 1), "BY1": np.stack([s, two_pi, tb], 1)},
        dict(SET_ORDERS["ns2d"]), {"n_space": n_space, "n_time": n_time, "T": T})


@dataclass
class ProblemInstance:
    """One PDE instance: equation tag, input data at collocation points, collocation sets."""

    equation: str
    collocation: CollocationSets
    data: dict
    params: dict = field(default_factory=dict)
    assembly: WeakFormAssembly | None = None
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigurationError(f"unknown equation {self.equation!r}")
        need = {"poisson1d": ("f_R",), "darcy2d": ("a_Q", "f_Q"), "ns2d": ("fp_R", "w0_I")}[self.equation]
        missing = [k for k in need if k not in self.data]
        if missing:
            raise ConfigurationError(f"{self.equation} instance is missing data {missing}")
        if self.equation == "darcy2d" and self.assembly is None:
            raise ConfigurationError("darcy2d instance needs a weak-form assembly")

    def scaled(self, gamma: float) -> "ProblemInstance":
        """Same instance with the source/forcing multiplied by ``gamma``."""
        key = {"poisson1d": "f_R", "darcy2d": "f_Q", "ns2d": "fp_R"}[self.equation]
        data = dict(self.data)
        data[key] = gamma * data[key]
        if "ell" in data:
            data["ell"] = gamma * data["ell"]
        return ProblemInstance(self.equation, self.collocation, data, self.params, self.assembly, self.inputs)


def _at(fld, points):
    if isinstance(fld, Field):
        return evaluate_at(fld, points)
    if callable(fld):
        return np.asarray(fld(points), float)
    return np.broadcast_to(np.asarray(fld, float), (len(points),)).copy()


def poisson_instance(f, collocation: CollocationSets | None = None) -> ProblemInstance:
    """``f`` is a Field with a series, a callable of ``(N, 1)`` points, or a constant."""
    col = collocation or poisson_collocation()
    return ProblemInstance("poisson1d", col, {"f_R": _at(f, col.points["R"])}, inputs={"f": f})


def darcy_instance(a, assembly: WeakFormAssembly, f=1.0, collocation: CollocationSets | None = None,
                   boundary_weight: float = 1.0) -> ProblemInstance:
    col = collocation or darcy_collocation(assembly)
    a_Q = _at(a, col.points["Q"])
    if np.any(a_Q <= 0):
        raise ConfigurationError("permeability must be positive at every quadrature point")
    f_Q = _at(f, col.points["Q"])
    ell = assembly.phi @ (assembly.weights * f_Q)
    return ProblemInstance("darcy2d", col, {"a_Q": a_Q, "f_Q": f_Q, "ell": ell}, assembly=assembly,
                           params={"boundary_weight": float(boundary_weight)}, inputs={"a": a, "f": f})


def ns_instance(f_prime, omega0, nu: float, collocation: CollocationSets | None = None) -> ProblemInstance:
    col = collocation or ns_collocation()
    fp = _at(f_prime, col.points["R"][:, :2])
    w0 = _at(omega0, col.points["I"][:, :2])
    return ProblemInstance("ns2d", col, {"fp_R": fp, "w0_I": w0},
                           params={"nu": float(nu), "T": float(col.meta.get("T", 1.0))},
                           inputs={"f_prime": f_prime, "omega0": omega0})


# ---------------------------------------------------------------------- losses
def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in loss term {name!r}", name)


def _poisson_loss(inst, jets):
    vR, gR, hR = jets["R"]
    vB = jets["B"][0]
    r = -hR[:, 0, 0] - inst.data["f_R"]
    _check("residual", r)
    _check("boundary", vB)
    nR, nB = r.size, vB.shape[0]
    terms = {"residual": float(r @ r) / nR, "boundary": float((vB * vB).sum()) / nB}
    hb = np.zeros_like(hR)
    hb[:, 0, 0] = -2.0 * r / nR
    adj = {"R": (None, None, hb), "B": (2.0 * vB / nB, None, None)}
    return terms, adj


def _darcy_loss(inst, jets):
    asm = inst.assembly
    g = jets["Q"][1]
    vB = jets["B"][0]
    a, w = inst.data["a_Q"], asm.weights
    R = inst.data["ell"] - asm.dphi_x @ (w * a * g[:, 0, 0]) - asm.dphi_y @ (w * a * g[:, 0, 1])
    _check("weak residual", R)
    _check("boundary", vB)
    z = asm.whiten(R)
    Rbar = 2.0 * sla.solve_triangular(asm.gram_chol.T, z, lower=False)
    gb = np.zeros_like(g)
    gb[:, 0, 0] = -w * a * (asm.dphi_x.T @ Rbar)
    gb[:, 0, 1] = -w * a * (asm.dphi_y.T @ Rbar)
    nB = vB.shape[0]
    lam = inst.params.get("boundary_weight", 1.0)
    terms = {"residual": float(z @ z), "boundary": lam * float((vB * vB).sum()) / nB}
    adj = {"Q": (None, gb, None), "B": (2.0 * lam * vB / nB, None, None)}
    return terms, adj


def _ns_loss(inst, jets):
    nu = inst.params["nu"]
    v, g, h = jets["R"]
    w_t, w_x, w_y = g[:, 0, 2], g[:, 0, 0], g[:, 0, 1]
    p_x, p_y = g[:, 1, 0], g[:, 1, 1]
    lap_w = h[:, 0, 0] + h[:, 0, 1]
    lap_p = h[:, 1, 0] + h[:, 1, 1]
    ux, uy = p_y, -p_x
    r1 = w_t + ux * w_x + uy * w_y - nu * lap_w - inst.data["fp_R"]
    r2 = v[:, 0] + lap_p
    n_time = inst.collocation.meta["n_time"]
    psi_slabs = v[:, 1].reshape(n_time, -1)
    slab_mean = psi_slabs.mean(axis=1)
    r0 = jets["I"][0][:, 0] - inst.data["w0_I"]
    for name, arr in (("vorticity", r1), ("stream coupling", r2), ("initial", r0)):
        _check(name, arr)
    N = r1.size
    terms = {
        "residual": float(r1 @ r1) / N,
        "coupling": float(r2 @ r2) / N,
        "mean_free": float(slab_mean @ slab_mean) / n_time,
        "initial": float(r0 @ r0) / r0.size,
    }
    vb, gb, hb = np.zeros_like(v), np.zeros_like(g), np.zeros_like(h)
    a1, a2 = 2.0 * r1 / N, 2.0 * r2 / N
    gb[:, 0, 2] = a1
    gb[:, 0, 0] = a1 * ux
    gb[:, 0, 1] = a1 * uy
    gb[:, 1, 1] = a1 * w_x
    gb[:, 1, 0] = -a1 * w_y
    hb[:, 0, 0] = hb[:, 0, 1] = -nu * a1
    vb[:, 0] = a2
    hb[:, 1, 0] = hb[:, 1, 1] = a2
    vb[:, 1] = np.repeat(2.0 * slab_mean / n_time / psi_slabs.shape[1], psi_slabs.shape[1])
    adj = {"R": (vb, gb, hb), "I": (np.stack([2.0 * r0 / r0.size, np.zeros_like(r0)], 1), None, None)}
    bterm = 0.0
    for a_name, b_name in (("BX0", "BX1"), ("BY0", "BY1")):
        dv = jets[a_name][0] - jets[b_name][0]
        dg = jets[a_name][1] - jets[b_name][1]
        _check("periodic boundary", dv)
        nb = dv.shape[0]
        bterm += (float((dv * dv).sum()) + float((dg * dg).sum())) / nb
        adj[a_name] = (2.0 * dv / nb, 2.0 * dg / nb, None)
        adj[b_name] = (-2.0 * dv / nb, -2.0 * dg / nb, None)
    terms["boundary"] = bterm
    return terms, adj


_LOSSES = {"poisson1d": _poisson_loss, "darcy2d": _darcy_loss, "ns2d": _ns_loss}


def loss_from_jets(inst: ProblemInstance, jets: dict):
    """``(total, terms, adjoints)`` of the instance's physics loss for given jets."""
    terms, adj = _LOSSES[inst.equation](inst, jets)
    return sum(terms.values()), terms, adj


def network_jets(params: NetworkParams, collocation: CollocationSets):
    """Jets of ``params`` on every set, computed in one batch at the highest order needed.

    Returns ``(jets, pullback)``; ``pullback(adjoints)`` gives the flat parameter gradient.
    """
    names = list(collocation.points)
    order = max(collocation.orders[k] for k in names)
    sizes = np.cumsum([0] + [len(collocation.points[k]) for k in names])
    X = np.concatenate([collocation.points[k] for k in names])
    (v, g, h), pull = jet_and_pullback(params, X, order=order, full=False)
    jets = {}
    for k, a, b in zip(names, sizes[:-1], sizes[1:]):
        jets[k] = (v[a:b], None if g is None else g[a:b], None if h is None else h[a:b])

    def pullback(adj):
        vb = np.zeros_like(v)
        gb = None if g is None else np.zeros_like(g)
        hb = None if h is None else np.zeros_like(h)
        for k, a, b in zip(names, sizes[:-1], sizes[1:]):
            if k not in adj:
                continue
            for full, part in zip((vb, gb, hb), adj[k]):
                if part is not None:
                    full[a:b] += part
        return pull(vb, gb, hb)

    return jets, pullback


class NetPredictor:
    """Adapter exposing a network through the predictor protocol."""

    def __init__(self, params: NetworkParams):
        self.params = params

    def jets(self, collocation: CollocationSets) -> dict:
        return network_jets(self.params, collocation)[0]


def as_predictor(obj):
    return NetPredictor(obj) if isinstance(obj, NetworkParams) else obj


def strong_loss(predictor, inst: ProblemInstance) -> float:
    """Mean-square strong-form residual plus boundary/initial mismatch."""
    if inst.equation == "darcy2d":
        raise CapabilityError("darcy2d uses the weak-form loss (rvpinn_loss)")
    return loss_from_jets(inst, as_predictor(predictor).jets(inst.collocation))[0]


def rvpinn_loss(predictor, inst: ProblemInstance) -> float:
    """``R^T G^-1 R`` plus mean-square boundary mismatch."""
    if inst.equation != "darcy2d":
        raise CapabilityError("the weak-form loss is implemented for darcy2d only")
    return loss_from_jets(inst, as_predictor(predictor).jets(inst.collocation))[0]


def physics_loss(predictor, inst: ProblemInstance) -> float:
    return loss_from_jets(inst, as_predictor(predictor).jets(inst.collocation))[0]


def loss_and_param_grad(params: NetworkParams, inst: ProblemInstance):
    jets, pullback = network_jets(params, inst.collocation)
    loss, terms, adj = loss_from_jets(inst, jets)
    return loss, pullback(adj)


# -------------------------------------------------------------------- training
@dataclass
class PinnConfig:
    widths: tuple = (1, 20, 20, 20, 1)
    activation: str = "tanh"
    epochs: int = 5000
    lr: float = 5e-4
    halving_period: int | None = None
    lbfgs_iters: int = 0
    seed: int = 0
    loss_ceiling: float = np.inf

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["widths"] = list(self.widths)
        d["loss_ceiling"] = None if not np.isfinite(self.loss_ceiling) else self.loss_ceiling
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PinnConfig":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", cls.widths))
        if d.get("loss_ceiling") is None:
            d["loss_ceiling"] = np.inf
        return cls(**d)


@dataclass
class TrainResult:
    params: NetworkParams
    loss: float
    history: list
    quality_warning: bool = False


def train_pinn(inst: ProblemInstance, config: PinnConfig) -> TrainResult:
    """Full-batch Adam (optionally followed by L-BFGS) on the instance's physics loss.

    Returns the lowest-loss iterate seen, not the last one.
    """
    params = init_network(config.widths, config.activation, config.seed)
    theta = params.flat()
    state = adam_init(theta.size, LRSchedule(config.lr, config.halving_period))
    best_theta, best_loss = theta, np.inf
    history = []
    for epoch in range(config.epochs + 1):
        loss, g = loss_and_param_grad(params.with_flat(theta), inst)
        if not np.isfinite(loss):
            raise NumericalFailure(f"PINN loss became non-finite at epoch {epoch}", loss)
        history.append(loss)
        if loss < best_loss:
            best_loss, best_theta = loss, theta
        if epoch == config.epochs:
            break
        state, theta = adam_step(state, theta, g)
    if config.lbfgs_iters > 0:
        def fun(th):
            return loss_and_param_grad(params.with_flat(th), inst)
        res = lbfgs_minimize(fun, best_theta, max_iters=config.lbfgs_iters, tol=0.0)
        history.extend(res.history[1:])
        if res.fun < best_loss:
            best_loss, best_theta = res.fun, res.x
    warn = bool(best_loss > config.loss_ceiling)
    if warn:
        log.warning("PINN terminal loss %.3e above ceiling %.3e", best_loss, config.loss_ceiling)
    return TrainResult(params.with_flat(best_theta), float(best_loss), history, warn)
