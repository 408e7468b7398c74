"""Reference solvers for the three benchmark problems.

* 1-D Poisson ``-u'' = f`` with ``u(0) = u(1) = 0``: exact, in the Dirichlet sine basis.
* 2-D Darcy ``-div(a grad u) = f`` on the unit square with ``u = 0`` on the boundary:
  vertex-centred 5-point finite volumes with harmonic-mean face coefficients,
  solved by Jacobi-preconditioned conjugate gradients.
* 2-D incompressible Navier-Stokes in vorticity form on the ``[0, 2pi]^2`` torus:
  pseudo-spectral, 2/3-rule dealiasing, integrating-factor Heun time stepping.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapabilityError, ConfigurationError, DomainError, NumericalFailure
from .fields import Field, Grid
from .grf import SpectralSeries, eigenpairs, evaluate_at


# ---------------------------------------------------------------- Poisson 1-D
def solve_poisson_1d(f: Field) -> Field:
    """Exact solution of ``-u'' = f`` for a sine-series source."""
    if f.series is None:
        raise CapabilityError("Poisson solve needs the spectral coefficients of f")
    spec = f.series.spec
    if spec.boundary != "dirichlet" or spec.dimension != 1 or f.transform is not None:
        raise CapabilityError("Poisson solve expects a 1-D Dirichlet sine series")
    lam = np.array([m.eigenvalue for m in eigenpairs(spec)])
    series = SpectralSeries(spec, f.series.coefficients / lam)
    return Field(f.grid, series(f.grid.points()), series=series)


# ------------------------------------------------------------------ Darcy 2-D
def assemble_darcy(a_nodes: np.ndarray) -> sp.csr_matrix:
    """Finite-volume matrix on interior nodes of an ``n x n`` closed unit grid.

    ``a_nodes`` holds the coefficient at all ``n x n`` nodes (boundary included).
    Rows are scaled so that ``A u = f`` at interior nodes.
    """
    n = a_nodes.shape[0]
    h = 1.0 / (n - 1)
    m = n - 2
    idx = -np.ones((n, n), dtype=int)
    idx[1:-1, 1:-1] = np.arange(m * m).reshape(m, m)

    def face(a1, a2):
        return 2.0 * a1 * a2 / (a1 + a2)

    rows, cols, vals = [], [], []
    diag = np.zeros((n, n))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        P = (slice(1, n - 1), slice(1, n - 1))
        Q = (slice(1 + di, n - 1 + di), slice(1 + dj, n - 1 + dj))
        c = face(a_nodes[P], a_nodes[Q]) / h ** 2
        diag[P] += c
        nb = idx[Q]
        inside = nb >= 0
        rows.append(idx[P][inside])
        cols.append(nb[inside])
        vals.append(-c[inside])
    rows.append(idx[1:-1, 1:-1].ravel())
    cols.append(idx[1:-1, 1:-1].ravel())
    vals.append(diag[1:-1, 1:-1].ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m))


def solve_darcy_2d(a, f=1.0, n: int | None = None, rtol: float = 1e-10, return_info: bool = False):
    """Solve ``-div(a grad u) = f`` with homogeneous Dirichlet data.

    ``a`` is a :class:`Field` (re-evaluated exactly on an ``n x n`` grid when it
    carries a series) or an ``(n, n)`` array of nodal values.  ``f`` is a scalar,
    an ``(n, n)`` array, or a callable of the ``(N, 2)`` node coordinates.
    """
    if isinstance(a, Field):
        n = n or a.grid.shape[0]
        grid = Grid.unit(n, n)
        if a.grid.shape == grid.shape and a.grid == grid:
            a_nodes = a.values
        elif a.series is not None:
            a_nodes = evaluate_at(a, grid.points()).reshape(n, n)
        else:
            raise CapabilityError("coefficient field lives on a different grid and has no series")
    else:
        a_nodes = np.asarray(a, float)
        n = a_nodes.shape[0]
        grid = Grid.unit(n, n)
    if n < 3:
        raise ConfigurationError("Darcy grid needs at least 3 nodes per side")
    if not np.all(a_nodes > 0):
        raise DomainError("permeability must be strictly positive")
    if callable(f):
        f_nodes = np.asarray(f(grid.points()), float).reshape(n, n)
    else:
        f_nodes = np.broadcast_to(np.asarray(f, float), (n, n))
    A = assemble_darcy(a_nodes)
    b = np.ascontiguousarray(f_nodes[1:-1, 1:-1]).ravel()
    M = sp.diags(1.0 / A.diagonal())
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=20 * A.shape[0], M=M)
    res = float(np.linalg.norm(A @ x - b))
    if info != 0 or res > 1e3 * rtol * np.linalg.norm(b):
        raise NumericalFailure(f"CG did not converge (info={info}, residual={res:.3e})", res)
    u = np.zeros((n, n))
    u[1:-1, 1:-1] = x.reshape(n - 2, n - 2)
    out = Field(grid, u)
    if return_info:
        return out, {"matrix": A, "rhs": b, "residual": res}
    return out


# ------------------------------------------------------------ Navier-Stokes 2-D
class SpectralTorus:
    """Wavenumbers and transforms for an ``n x n`` grid on ``[0, 2pi]^2``."""

    def __init__(self, n: int):
        self.n = n
        self.kx = np.fft.fftfreq(n, 1.0 / n)[:, None]
        self.ky = np.fft.rfftfreq(n, 1.0 / n)[None, :]
        self.k2 = self.kx ** 2 + self.ky ** 2
        self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        kmax = n / 3.0
        self.dealias = (np.abs(self.kx) < kmax) & (np.abs(self.ky) < kmax)

    def fft(self, v):
        return np.fft.rfft2(v)

    def ifft(self, vh):
        return np.fft.irfft2(vh, s=(self.n, self.n))

    def stream(self, w_hat):
        """Mean-free stream function solving ``-Laplacian psi = omega``."""
        return w_hat * self.inv_k2

    def velocity(self, w_hat):
        psi = self.stream(w_hat)
        return self.ifft(1j * self.ky * psi), self.ifft(-1j * self.kx * psi)

    def divergence(self, u, v):
        return self.ifft(1j * self.kx * self.fft(u) + 1j * self.ky * self.fft(v))

    def advection_hat(self, w_hat):
        u, v = self.velocity(w_hat)
        wx = self.ifft(1j * self.kx * w_hat)
        wy = self.ifft(1j * self.ky * w_hat)
        return self.fft(u * wx + v * wy) * self.dealias


def _torus_values(fld, n):
    if isinstance(fld, Field):
        grid = Grid.torus(n, n)
        if fld.grid == grid:
            return fld.values
        if fld.series is None:
            raise CapabilityError("periodic field lives on a different grid and has no series")
        return evaluate_at(fld, grid.points()).reshape(n, n)
    arr = np.asarray(fld, float)
    if arr.ndim == 0:
        return np.full((n, n), float(arr))
    return arr


def solve_ns_2d(f_prime, omega0, nu: float, T: float, dt: float, n: int, callback=None) -> Field:
    """Vorticity at time ``T``; ``callback(step, w_hat, torus)`` is called after every step."""
    torus = SpectralTorus(n)
    f_hat = torus.fft(_torus_values(f_prime, n))
    w_hat = torus.fft(_torus_values(omega0, n))
    n_steps = int(round(T / dt))
    if n_steps < 0 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigurationError("T must be a multiple of dt")
    E = np.exp(-nu * torus.k2 * dt)

    def rhs(wh):
        return f_hat - torus.advection_hat(wh)

    for step in range(1, n_steps + 1):
        N0 = rhs(w_hat)
        w1 = E * (w_hat + dt * N0)
        w_hat = E * w_hat + 0.5 * dt * (E * N0 + rhs(w1))
        if callback is not None:
            callback(step, w_hat, torus)
        if step % 100 == 0 and not np.all(np.isfinite(w_hat)):
            raise NumericalFailure(f"non-finite vorticity at step {step}", step)
    if not np.all(np.isfinite(w_hat)):
        raise NumericalFailure(f"non-finite vorticity at step {n_steps}", n_steps)
    return Field(Grid.torus(n, n), torus.ifft(w_hat))
