"""Tensor grids and sampled fields."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid.

    Closed grids include both endpoints of every axis; periodic grids drop the
    right endpoint.  Values on a grid are stored with ``indexing='ij'``.
    """

    shape: tuple
    domain: tuple  # ((lo, hi), ...) per axis
    periodic: bool = False

    @classmethod
    def unit(cls, *shape: int) -> "Grid":
        return cls(tuple(shape), tuple((0.0, 1.0) for _ in shape))

    @classmethod
    def torus(cls, *shape: int) -> "Grid":
        return cls(tuple(shape), tuple((0.0, 2 * np.pi) for _ in shape), periodic=True)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list:
        out = []
        for n, (lo, hi) in zip(self.shape, self.domain):
            if self.periodic:
                out.append(lo + (hi - lo) * np.arange(n) / n)
            else:
                out.append(np.linspace(lo, hi, n))
        return out

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def weights(self) -> np.ndarray:
        """Quadrature weights (trapezoid on closed axes, uniform on periodic axes)."""
        w = np.ones(1)
        for n, (lo, hi) in zip(self.shape, self.domain):
            if self.periodic:
                wa = np.full(n, (hi - lo) / n)
            else:
                h = (hi - lo) / (n - 1)
                wa = np.full(n, h)
                wa[0] = wa[-1] = h / 2
            w = np.multiply.outer(w, wa)
        return w.reshape(self.shape)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "domain": [list(d) for d in self.domain], "periodic": self.periodic}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["shape"]), tuple(tuple(x) for x in d["domain"]), bool(d.get("periodic", False)))


@dataclass
class Field:
    """Values of a function on a grid, optionally with the spectral series it came from.

    ``series`` (a :class:`rebano.grf.SpectralSeries`) allows exact re-evaluation
    anywhere; ``transform`` names a pointwise map applied after the series.
    """

    grid: Grid
    values: np.ndarray
    series: Any = None
    transform: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
