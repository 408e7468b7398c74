"""Dense feed-forward networks with exact input derivatives.

Networks are plain float64 weight/bias stacks.  Derivatives with respect to the
inputs (orders 0-2) are propagated layer by layer in forward mode; gradients
with respect to the parameters are obtained by a reverse sweep through the
same forward-mode computation, so a loss written in terms of ``u``, ``grad u``
and second derivatives of ``u`` can be differentiated w.r.t. the weights.

Array layout used internally for a batch of ``N`` points in ``d`` dimensions
and a layer of width ``w``:

    value   (N, w)
    grad    (N, d, w)       d/dx_j
    hess    (N, d, d, w)    full second derivatives, or
    hdiag   (N, d, w)       pure second derivatives d2/dx_j^2 only
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, ConfigurationError, ContractViolation, NumericalFailure

ACTIVATIONS = ("tanh", "sin", "cos", "relu")


def _act_derivs(name: str, z: np.ndarray, order: int):
    """Return [s(z), s'(z), ..., s^(order)(z)]."""
    if name == "tanh":
        t = np.tanh(z)
        out = [t]
        if order >= 1:
            s1 = 1.0 - t * t
            out.append(s1)
        if order >= 2:
            s2 = -2.0 * t * s1
            out.append(s2)
        if order >= 3:
            out.append(-2.0 * s1 * s1 - 2.0 * t * s2)
        return out
    if name == "sin":
        s, c = np.sin(z), np.cos(z)
        return [s, c, -s, -c][: order + 1]
    if name == "cos":
        s, c = np.sin(z), np.cos(z)
        return [c, -s, -c, s][: order + 1]
    if name == "relu":
        # second and higher derivatives are zero almost everywhere
        out = [np.maximum(z, 0.0)]
        if order >= 1:
            out.append((z > 0).astype(float))
        out.extend(np.zeros_like(z) for _ in range(order - 1))
        return out
    raise ConfigurationError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class NetworkParams:
    """Weights and biases of one dense network.

    ``weights[l]`` has shape ``(widths[l+1], widths[l])``; the last layer is
    affine with no activation.
    """

    widths: tuple
    activation: str
    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigurationError("a network needs at least an input and an output width")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[l + 1], self.widths[l]) or b.shape != (self.widths[l + 1],):
                raise ConfigurationError(f"layer {l} has inconsistent shapes {W.shape}, {b.shape}")
            W.setflags(write=False)
            b.setflags(write=False)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def parameter_count(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def flat(self) -> np.ndarray:
        """Parameters as one vector, ordered ``[W0, b0, W1, b1, ...]`` (row-major)."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.parameter_count,):
            raise ContractViolation(f"expected {self.parameter_count} parameters, got {theta.shape}")
        Ws, bs, k = [], [], 0
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            Ws.append(theta[k:k + n_in * n_out].reshape(n_out, n_in).copy())
            k += n_in * n_out
            bs.append(theta[k:k + n_out].copy())
            k += n_out
        return NetworkParams(self.widths, self.activation, tuple(Ws), tuple(bs))

    # -- serialization -------------------------------------------------------
    def to_json(self) -> str:
        w = np.concatenate([W.ravel() for W in self.weights]).astype("<f8")
        b = np.concatenate(list(self.biases)).astype("<f8")
        return json.dumps({
            "widths": list(self.widths),
            "activation": self.activation,
            "weights_b64": base64.b64encode(w.tobytes()).decode("ascii"),
            "biases_b64": base64.b64encode(b.tobytes()).decode("ascii"),
        })

    @classmethod
    def from_json(cls, text: str) -> "NetworkParams":
        doc = json.loads(text)
        widths = tuple(int(n) for n in doc["widths"])
        w = np.frombuffer(base64.b64decode(doc["weights_b64"]), dtype="<f8")
        b = np.frombuffer(base64.b64decode(doc["biases_b64"]), dtype="<f8")
        Ws, bs, kw, kb = [], [], 0, 0
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            Ws.append(w[kw:kw + n_in * n_out].reshape(n_out, n_in).astype(float))
            kw += n_in * n_out
            bs.append(b[kb:kb + n_out].astype(float))
            kb += n_out
        if kw != w.size or kb != b.size:
            raise ConfigurationError("serialized payload does not match widths")
        return cls(widths, doc["activation"], tuple(Ws), tuple(bs))


def init_network(widths: Sequence[int], activation: str = "tanh", seed: int = 0) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    widths = tuple(int(w) for w in widths)
    if len(widths) == 0:
        raise ConfigurationError("empty width list")
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigurationError(f"invalid widths {widths}")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    Ws, bs = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        Ws.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return NetworkParams(widths, activation, tuple(Ws), tuple(bs))


def _as_batch(params: NetworkParams, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ContractViolation(f"input dimension {X.shape[-1]} does not match network input {params.input_dim}")
    return X, single


def forward(params: NetworkParams, x) -> np.ndarray:
    """Evaluate the network at one point ``(d,)`` or a batch ``(N, d)``."""
    X, single = _as_batch(params, x)
    h = X
    L = params.n_layers
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        h = z if l == L - 1 else _act_derivs(params.activation, z, 0)[0]
    return h[0] if single else h


@dataclass
class DerivativeJet:
    """Output value and input derivatives of a network.

    For a single point: ``value (m,)``, ``grad_x (m, d)``, ``hess_x (m, d, d)``.
    Batched jets carry a leading point axis.  ``hess_diag`` holds the pure
    second derivatives; ``hess_x`` is only filled for full jets.
    """

    value: np.ndarray
    grad_x: np.ndarray | None = None
    hess_x: np.ndarray | None = None
    hess_diag: np.ndarray | None = None

    @property
    def laplacian(self) -> np.ndarray:
        if self.hess_diag is not None:
            return self.hess_diag.sum(axis=-1)
        return np.trace(self.hess_x, axis1=-2, axis2=-1)


def _forward_tape(params: NetworkParams, X: np.ndarray, order: int, full: bool):
    N, d = X.shape
    h = X
    dh = np.broadcast_to(np.eye(d), (N, d, d)) if order >= 1 else None
    H = None
    if order >= 2:
        H = np.zeros((N, d, d, d)) if full else np.zeros((N, d, d))
    tape = []
    L = params.n_layers
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        dz = dh @ W.T if order >= 1 else None
        Hz = H @ W.T if order >= 2 else None
        if l == L - 1:
            tape.append((h, dh, H, None, dz, Hz))
            return (z, dz, Hz), tape
        # s(z) and one extra derivative for the reverse sweep
        s = _act_derivs(params.activation, z, order + 1)
        tape.append((h, dh, H, s, dz, Hz))
        h = s[0]
        if order >= 1:
            dh = s[1][:, None, :] * dz
        if order >= 2:
            if full:
                H = s[2][:, None, None, :] * dz[:, :, None, :] * dz[:, None, :, :] + s[1][:, None, None, :] * Hz
            else:
                H = s[2][:, None, :] * dz * dz + s[1][:, None, :] * Hz
    raise AssertionError("unreachable")


def _reverse_sweep(params: NetworkParams, tape, adj, order: int, full: bool) -> np.ndarray:
    zb, dzb, Hzb = adj
    grads = []
    L = params.n_layers
    for l in range(L - 1, -1, -1):
        W = params.weights[l]
        h, dh, H, s, dz, Hz = tape[l]
        n_out = W.shape[0]
        if l < L - 1:
            # adjoints arriving at the activation output -> pre-activation adjoints
            hb, dhb, Hb = zb, dzb, Hzb
            zb = hb * s[1]
            if order >= 1:
                zb = zb + (dhb * dz).sum(axis=1) * s[2]
                dzb = dhb * s[1][:, None, :]
            if order >= 2:
                if full:
                    t = np.einsum("njkw,njw,nkw->nw", Hb, dz, dz)
                    zb = zb + t * s[3] + (Hb * Hz).sum(axis=(1, 2)) * s[2]
                    Hsym = Hb + Hb.transpose(0, 2, 1, 3)
                    dzb = dzb + s[2][:, None, :] * np.einsum("njkw,nkw->njw", Hsym, dz)
                    Hzb = Hb * s[1][:, None, None, :]
                else:
                    zb = zb + (Hb * dz * dz).sum(axis=1) * s[3] + (Hb * Hz).sum(axis=1) * s[2]
                    dzb = dzb + 2.0 * s[2][:, None, :] * Hb * dz
                    Hzb = Hb * s[1][:, None, :]
        Wb = zb.T @ h
        if order >= 1:
            Wb = Wb + dzb.reshape(-1, n_out).T @ np.reshape(dh, (-1, dh.shape[-1]))
        if order >= 2 and l > 0:
            Wb = Wb + Hzb.reshape(-1, n_out).T @ H.reshape(-1, H.shape[-1])
        bb = zb.sum(axis=0)
        grads.append((Wb, bb))
        if l > 0:
            zb = zb @ W
            if order >= 1:
                dzb = dzb @ W
            if order >= 2:
                Hzb = Hzb @ W
    parts = []
    for Wb, bb in reversed(grads):
        parts.append(Wb.ravel())
        parts.append(bb)
    return np.concatenate(parts)


def jet_and_pullback(params: NetworkParams, X, order: int = 2, full: bool = False):
    """Batched jet of the network plus a function mapping jet adjoints to a parameter gradient.

    Returns ``(value, grad, hess), pullback`` in user layout: ``value (N, m)``,
    ``grad (N, m, d)``, ``hess (N, m, d)`` (pure second derivatives) or
    ``(N, m, d, d)`` when ``full``.  ``pullback(value_bar, grad_bar, hess_bar)``
    accepts adjoints of the same shapes (``None`` for zero) and returns the flat
    gradient w.r.t. ``params.flat()``.
    """
    X, _ = _as_batch(params, X)
    if order not in (0, 1, 2):
        raise ConfigurationError("jet order must be 0, 1 or 2")
    if order == 2 and params.activation == "relu" and params.n_layers > 1:
        raise CapabilityError("second-order jets through relu are not supported")
    (z, dz, Hz), tape = _forward_tape(params, X, order, full)
    value = z
    grad = np.swapaxes(dz, 1, 2) if order >= 1 else None
    if order >= 2:
        hess = np.moveaxis(Hz, -1, 1)
    else:
        hess = None

    def pullback(value_bar=None, grad_bar=None, hess_bar=None):
        zb = np.zeros_like(z) if value_bar is None else np.asarray(value_bar, float)
        dzb = Hzb = None
        if order >= 1:
            dzb = np.zeros_like(dz) if grad_bar is None else np.swapaxes(grad_bar, 1, 2)
        if order >= 2:
            Hzb = np.zeros_like(Hz) if hess_bar is None else np.moveaxis(hess_bar, 1, -1)
        return _reverse_sweep(params, tape, (zb, dzb, Hzb), order, full)

    return (value, grad, hess), pullback


def jet(params: NetworkParams, x, order: int = 2, full: bool = True) -> DerivativeJet:
    """Exact value, input gradient and (full or diagonal) Hessian at ``x``."""
    X, single = _as_batch(params, x)
    (v, g, h), _ = jet_and_pullback(params, X, order=order, full=full)
    if single:
        v, g, h = v[0], (None if g is None else g[0]), (None if h is None else h[0])
    if full:
        return DerivativeJet(v, g, h, None if h is None else np.diagonal(h, axis1=-2, axis2=-1).copy())
    return DerivativeJet(v, g, None, h)


class Objective:
    """A scalar function of network parameters with an exact gradient."""

    def value_and_grad(self, params: NetworkParams) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def __call__(self, params: NetworkParams) -> float:
        return self.value_and_grad(params)[0]


@dataclass
class JetObjective(Objective):
    """Objective expressed through network jets on fixed point sets.

    ``loss_fn(jets)`` receives a dict ``name -> (value, grad, hess)`` and must
    return ``(loss, adjoints)`` with ``adjoints[name] = (value_bar, grad_bar,
    hess_bar)``.
    """

    points: dict
    loss_fn: Callable
    order: int = 2

    def value_and_grad(self, params):
        jets, pulls = {}, {}
        for name, X in self.points.items():
            jets[name], pulls[name] = jet_and_pullback(params, X, order=self.order, full=False)
        loss, adj = self.loss_fn(jets)
        g = np.zeros(params.parameter_count)
        for name, a in adj.items():
            g += pulls[name](*a)
        return float(loss), g


@dataclass
class FunctionObjective(Objective):
    """Wrap a plain ``theta -> (value, grad)`` function of the flat parameter vector."""

    fn: Callable = field(default=None)

    def value_and_grad(self, params):
        v, g = self.fn(params.flat())
        return float(v), np.asarray(g, dtype=float)


def param_gradient(objective: Objective, params: NetworkParams) -> np.ndarray:
    """Flat gradient of ``objective`` at ``params``; raises on non-finite values."""
    value, g = objective.value_and_grad(params)
    if not np.isfinite(value):
        raise NumericalFailure(f"objective is not finite: {value}", value)
    if g.shape != (params.parameter_count,):
        raise ContractViolation("gradient length does not match parameter count")
    if not np.all(np.isfinite(g)):
        raise NumericalFailure("gradient contains non-finite entries", value)
    return g
