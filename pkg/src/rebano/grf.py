"""Gaussian random fields from truncated Karhunen-Loeve expansions.

A sample of ``N(0, (-Laplacian + tau_sq)^(-alpha))`` is

    sum_k xi_k (lambda_k + tau_sq)^(-alpha/2) phi_k

with ``(lambda_k, phi_k)`` the eigenpairs of ``-Laplacian`` on the domain
(``[0,1]^d`` for Dirichlet/Neumann, ``[0,2pi]^d`` periodic), ``phi_k``
orthonormal in ``L2`` of the domain, and ``xi_k`` standard normals truncated
to ``|xi_k| <= clamp`` by rejection.  The constant periodic mode is dropped so
periodic samples have zero mean.
"""
from __future__ import annotations

import itertools
from functools import lru_cache
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CapabilityError, ConfigurationError
from .fields import Field, Grid

BOUNDARIES = ("dirichlet", "neumann", "periodic")


@dataclass(frozen=True)
class CovarianceSpec:
    dimension: int
    tau_sq: float
    alpha: float
    boundary: str
    n_modes: int | None = None
    clamp: float = 4.0

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigurationError("only 1-D and 2-D fields are supported")
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")
        if self.tau_sq <= 0:
            raise ConfigurationError("tau_sq must be positive")
        if self.alpha <= self.dimension / 2:
            raise ConfigurationError("alpha must exceed dimension/2 for a trace-class covariance")
        if self.n_modes is not None and self.n_modes < 1:
            raise ConfigurationError("n_modes must be >= 1")

    @property
    def modes_per_dim(self) -> int:
        if self.n_modes is not None:
            return self.n_modes
        return 64 if self.dimension == 1 else 32

    @property
    def domain(self) -> tuple:
        hi = 2 * np.pi if self.boundary == "periodic" else 1.0
        return tuple((0.0, hi) for _ in range(self.dimension))

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "tau_sq": self.tau_sq, "alpha": self.alpha,
                "boundary": self.boundary, "n_modes": self.n_modes, "clamp": self.clamp}

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceSpec":
        return cls(int(d["dimension"]), float(d["tau_sq"]), float(d["alpha"]), d["boundary"],
                   None if d.get("n_modes") is None else int(d["n_modes"]), float(d.get("clamp", 4.0)))


@dataclass(frozen=True)
class Mode:
    """One eigenpair of ``-Laplacian``.

    ``kind`` is ``"sin"``/``"cos"`` per axis for Dirichlet/Neumann products, or
    ``"pcos"``/``"psin"`` for periodic plane waves ``cos(k.x)``/``sin(k.x)``.
    """

    eigenvalue: float
    wavenumber: tuple
    kind: str
    norm: float

    def __call__(self, points) -> np.ndarray:
        return _eval_modes([self], np.atleast_2d(np.asarray(points, float)))[:, 0]


def eigenpairs(spec: CovarianceSpec) -> list[Mode]:
    """Eigenpairs in a fixed canonical order (the order of the coefficient vector)."""
    return list(_eigenpairs(spec))


@lru_cache(maxsize=64)
def _eigenpairs(spec: CovarianceSpec) -> tuple:
    n, d = spec.modes_per_dim, spec.dimension
    out = []
    if spec.boundary == "dirichlet":
        for k in itertools.product(range(1, n + 1), repeat=d):
            out.append(Mode(np.pi ** 2 * sum(i * i for i in k), k, "sin", np.sqrt(2.0) ** d))
    elif spec.boundary == "neumann":
        for k in itertools.product(range(n), repeat=d):
            norm = np.prod([1.0 if i == 0 else np.sqrt(2.0) for i in k])
            out.append(Mode(np.pi ** 2 * sum(i * i for i in k), k, "cos", float(norm)))
    else:
        K = max(n // 2, 1)
        if d == 1:
            waves = [(k,) for k in range(1, K + 1)]
        else:
            waves = [(kx, ky) for kx in range(0, K + 1) for ky in range(-K, K + 1)
                     if kx > 0 or ky > 0]
        # cos and sin of k.x over [0, 2pi]^d have squared L2 norm (2 pi)^d / 2
        norm = 1.0 / np.sqrt((2 * np.pi) ** d / 2)
        for k in waves:
            lam = float(sum(i * i for i in k))
            out.append(Mode(lam, k, "pcos", norm))
            out.append(Mode(lam, k, "psin", norm))
    return tuple(out)


def _mode_arrays(modes):
    k = np.array([m.wavenumber for m in modes], dtype=float)  # (M, d)
    norm = np.array([m.norm for m in modes])
    is_cos = np.array([m.kind == "pcos" for m in modes])
    return k, norm, is_cos, modes[0].kind


@lru_cache(maxsize=64)
def _spec_arrays(spec: CovarianceSpec):
    return _mode_arrays(_eigenpairs(spec))


def _eval_arrays(arrays, X: np.ndarray) -> np.ndarray:
    k, norm, is_cos, kind = arrays
    if kind in ("sin", "cos"):
        trig = np.sin if kind == "sin" else np.cos
        out = np.ones((X.shape[0], k.shape[0]))
        for j in range(X.shape[1]):
            out *= trig(np.pi * np.outer(X[:, j], k[:, j]))
        return out * norm
    phase = X @ k.T
    return np.where(is_cos, np.cos(phase), np.sin(phase)) * norm


def _eval_modes(modes, X: np.ndarray) -> np.ndarray:
    """Matrix ``(len(X), len(modes))`` of eigenfunction values."""
    return _eval_arrays(_mode_arrays(modes), X)


@dataclass
class SpectralSeries:
    """Coefficients of a field in the eigenbasis of ``spec``."""

    spec: CovarianceSpec
    coefficients: np.ndarray

    def __call__(self, points, chunk: int = 4096) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if X.shape[1] != self.spec.dimension:
            X = X.reshape(-1, self.spec.dimension)
        arrays = _spec_arrays(self.spec)
        out = np.empty(X.shape[0])
        for i in range(0, X.shape[0], chunk):
            out[i:i + chunk] = _eval_arrays(arrays, X[i:i + chunk]) @ self.coefficients
        return out


def mode_std(spec: CovarianceSpec) -> np.ndarray:
    """Standard deviation ``(lambda_k + tau_sq)^(-alpha/2)`` of each coefficient."""
    lam = np.array([m.eigenvalue for m in eigenpairs(spec)])
    return (lam + spec.tau_sq) ** (-spec.alpha / 2)


def clamped_normal(rng: np.random.Generator, size: int, clamp: float = 4.0) -> np.ndarray:
    """Standard normals conditioned on ``|xi| <= clamp`` (rejection and redraw)."""
    xi = rng.standard_normal(size)
    bad = np.abs(xi) > clamp
    while bad.any():
        xi[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(xi) > clamp
    return xi


def clamped_normal_variance(clamp: float = 4.0) -> float:
    """Closed-form variance of a standard normal truncated to ``[-clamp, clamp]``."""
    pdf = np.exp(-clamp ** 2 / 2) / np.sqrt(2 * np.pi)
    return float(1.0 - 2 * clamp * pdf / erf(clamp / np.sqrt(2)))


def grid_for(spec: CovarianceSpec, n: int) -> Grid:
    if spec.boundary == "periodic":
        return Grid.torus(*([n] * spec.dimension))
    return Grid.unit(*([n] * spec.dimension))


def sample(spec: CovarianceSpec, grid: Grid, rng: np.random.Generator, xi: np.ndarray | None = None) -> Field:
    """Draw one field and evaluate it on ``grid``.

    ``xi`` overrides the standard-normal coefficients (used for testing).
    """
    std = mode_std(spec)
    if xi is None:
        xi = clamped_normal(rng, std.size, spec.clamp)
    series = SpectralSeries(spec, np.asarray(xi, float) * std)
    return Field(grid, series(grid.points()), series=series)


def pushforward_T(field: Field, high: float = 12.0, low: float = 3.0) -> Field:
    """Pointwise two-valued map: ``high`` where the field is >= 0, else ``low``."""
    values = np.where(field.values >= 0, high, low)
    return Field(field.grid, values, series=field.series, transform="threshold", meta=dict(field.meta))


TRANSFORMS = {
    None: lambda v: v,
    "threshold": lambda v: np.where(v >= 0, 12.0, 3.0),
}


def evaluate_at(field: Field, points) -> np.ndarray:
    """Exact (series) evaluation of ``field`` at arbitrary points."""
    if field.series is None:
        raise CapabilityError("field carries no spectral coefficients")
    return TRANSFORMS[field.transform](field.series(points))


def project_to_series(spec: CovarianceSpec, grid: Grid, values) -> np.ndarray:
    """Discrete L2 projection of grid values onto the eigenbasis of ``spec``."""
    X = grid.points()
    w = grid.weights().ravel()
    Phi = _eval_arrays(_spec_arrays(spec), X)
    return Phi.T @ (w * np.asarray(values, float).ravel())
