import numpy as np
import pytest

from rebano.errors import CapabilityError, ConfigurationError
from rebano.grf import CovarianceSpec, sample
from rebano.fields import Grid
from rebano.nn import init_network, jet
from rebano.pinn import (
    PinnConfig, WeakFormAssembly, _hat_1d, assemble_gram, darcy_collocation, darcy_instance, loss_and_param_grad,
    ns_collocation, ns_instance, physics_loss, poisson_collocation, poisson_instance, rvpinn_loss, strong_loss,
    train_pinn,
)


class FnPredictor:
    """Predictor from analytic callables: fn(X) -> (v, g, hdiag) with shapes (N,o), (N,o,d), (N,o,d)."""

    def __init__(self, fn):
        self.fn = fn

    def jets(self, col):
        return {k: self.fn(X) for k, X in col.points.items()}


def _sine_jets(X):
    x = X[:, 0]
    v = (np.sin(np.pi * x) / np.pi ** 2)[:, None]
    g = (np.cos(np.pi * x) / np.pi)[:, None, None]
    h = (-np.sin(np.pi * x))[:, None, None]
    return v, g, h


def _zero_jets(X, out=1):
    n, d = X.shape
    return np.zeros((n, out)), np.zeros((n, out, d)), np.zeros((n, out, d))


def _sine_source(x):
    return np.sin(np.pi * x[:, 0])


def test_poisson_exact_solution_zero_loss():
    inst = poisson_instance(_sine_source)
    assert strong_loss(FnPredictor(_sine_jets), inst) <= 1e-20


def test_poisson_zero_predictor():
    col = poisson_collocation(50)
    inst = poisson_instance(_sine_source, col)
    x = col.points["R"][:, 0]
    assert abs(strong_loss(FnPredictor(_zero_jets), inst) - np.mean(np.sin(np.pi * x) ** 2)) < 1e-15


def test_poisson_loss_double_entry():
    net = init_network([1, 8, 8, 1], "tanh", 4)
    col = poisson_collocation(37)
    f = sample(CovarianceSpec(1, 1.0, 2.0, "dirichlet"), Grid.unit(37), np.random.default_rng(0))
    inst = poisson_instance(f, col)
    res = 0.0
    for x, fx in zip(col.points["R"][:, 0], inst.data["f_R"]):
        j = jet(net, [x])
        res += (-j.hess_x[0, 0, 0] - fx) ** 2
    bnd = sum(float(jet(net, [b]).value[0]) ** 2 for b in (0.0, 1.0))
    ref = res / 37 + bnd / 2
    assert abs(strong_loss(net, inst) - ref) <= 1e-12 * max(1, ref)


def test_gram_1d_entries():
    n_e, q = 4, 3
    g, gw = np.polynomial.legendre.leggauss(q)
    h = 1 / n_e
    x = ((np.arange(n_e)[:, None] + (g + 1) / 2) * h).ravel()
    w = np.tile(gw * h / 2, n_e)
    V, D = _hat_1d(n_e, x)
    G1 = (D * w) @ D.T
    M1 = (V * w) @ V.T
    assert np.allclose(np.diag(G1), 8.0, atol=1e-12)
    assert np.allclose(np.diag(G1, 1), -4.0, atol=1e-12)
    assert np.allclose(np.diag(M1), 2 * h / 3, atol=1e-14)
    assert np.allclose(np.diag(M1, 1), h / 6, atol=1e-14)


def test_gram_kronecker_identity():
    n_e = 5
    asm = assemble_gram(n_e, 3)
    h = 1 / n_e
    m = n_e - 1
    G1 = (2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)) / h
    M1 = h / 6 * (4 * np.eye(m) + np.eye(m, k=1) + np.eye(m, k=-1))
    assert np.abs(asm.gram - (np.kron(G1, M1) + np.kron(M1, G1))).max() <= 1e-12
    assert np.abs(asm.gram - asm.gram.T).max() <= 1e-14
    with pytest.raises(ConfigurationError):
        assemble_gram(1)
    with pytest.raises(ConfigurationError):
        assemble_gram(4, 1)


def _darcy(n_e=4, q=3, a=None, f=1.0, bw=1.0):
    asm = assemble_gram(n_e, q)
    if a is None:
        def a(X):
            return 1.0 + X[:, 0] * X[:, 1] + np.sin(3 * X[:, 1]) ** 2
    return asm, darcy_instance(a, asm, f, darcy_collocation(asm, 8), boundary_weight=bw)


def test_rvpinn_zero_predictor_dense_oracle():
    asm, inst = _darcy()
    R = np.full(asm.n_test, (1 / asm.n_elements) ** 2)
    ref = R @ np.linalg.solve(asm.gram, R)
    zero = FnPredictor(_zero_jets)
    assert abs(rvpinn_loss(zero, inst) - ref) <= 1e-12 * ref
    _, inst2 = _darcy(f=2.0)
    assert abs(rvpinn_loss(zero, inst2) - 4 * ref) <= 1e-12 * ref


def test_rvpinn_galerkin_orthogonality():
    asm, inst = _darcy()
    a, w = inst.data["a_Q"], asm.weights
    A = (asm.dphi_x * w * a) @ asm.dphi_x.T + (asm.dphi_y * w * a) @ asm.dphi_y.T
    u = np.linalg.solve(A, inst.data["ell"])
    gQ = np.stack([asm.dphi_x.T @ u, asm.dphi_y.T @ u], axis=-1)

    class Galerkin:
        def jets(self, col):
            B = col.points["B"]
            return {"Q": (asm.phi.T @ u[:, None], gQ[:, None, :], None),
                    "B": (np.zeros((len(B), 1)), None, None)}

    assert rvpinn_loss(Galerkin(), inst) <= 1e-24


def test_rvpinn_permutation_invariance():
    asm, inst = _darcy()
    net = init_network([2, 10, 1], "sin", 3)
    base = rvpinn_loss(net, inst)
    p = np.random.default_rng(0).permutation(asm.n_test)
    G = asm.gram[np.ix_(p, p)]
    perm = WeakFormAssembly(asm.n_elements, asm.n_gauss, asm.points, asm.weights, asm.phi[p], asm.dphi_x[p],
                            asm.dphi_y[p], G, np.linalg.cholesky(G))
    inst_p = darcy_instance(inst.inputs["a"], perm, 1.0, inst.collocation)
    assert abs(rvpinn_loss(net, inst_p) - base) <= 1e-12 * base


def test_loss_kind_guards():
    _, inst = _darcy()
    with pytest.raises(CapabilityError):
        strong_loss(init_network([2, 3, 1], "sin", 0), inst)
    with pytest.raises(CapabilityError):
        rvpinn_loss(init_network([1, 3, 1], "tanh", 0), poisson_instance(_sine_source))


def _taylor_green(nu):
    def fn(X):
        x, y, t = X[:, 0], X[:, 1], X[:, 2]
        e = np.exp(-2 * nu * t)
        sx, cx, sy, cy = np.sin(x), np.cos(x), np.sin(y), np.cos(y)
        psi = e * sx * sy
        w = 2 * psi
        v = np.stack([w, psi], 1)
        gp = np.stack([e * cx * sy, e * sx * cy, -2 * nu * psi], 1)
        g = np.stack([2 * gp, gp], 1)
        h = np.stack([np.stack([-w, -w, 0 * w], 1), np.stack([-psi, -psi, 0 * w], 1)], 1)
        return v, g, h
    return fn


def test_ns_taylor_green_zero_loss():
    nu = 0.025
    col = ns_collocation(8, 4, 1.0)

    def w0(X):
        return 2 * np.sin(X[:, 0]) * np.sin(X[:, 1])

    inst = ns_instance(0.0, w0, nu, col)
    assert strong_loss(FnPredictor(_taylor_green(nu)), inst) <= 1e-25


def _fd_check(net, inst, n=12, eps=1e-6, rtol=1e-5):
    loss, g = loss_and_param_grad(net, inst)
    th = net.flat()
    rng = np.random.default_rng(0)
    for i in rng.choice(th.size, n, replace=False):
        e = np.zeros_like(th)
        e[i] = eps
        fd = (physics_loss(net.with_flat(th + e), inst) - physics_loss(net.with_flat(th - e), inst)) / (2 * eps)
        assert abs(fd - g[i]) <= rtol * max(abs(fd), 1e-3 * abs(loss))


def test_param_gradient_poisson():
    f = sample(CovarianceSpec(1, 1.0, 2.0, "dirichlet"), Grid.unit(16), np.random.default_rng(1))
    _fd_check(init_network([1, 6, 6, 1], "tanh", 2), poisson_instance(f, poisson_collocation(16)))


def test_param_gradient_darcy():
    _, inst = _darcy(bw=100.0)
    _fd_check(init_network([2, 6, 6, 1], "sin", 5), inst)


def test_param_gradient_ns():
    spec = CovarianceSpec(2, 9.0, 4.0, "periodic", n_modes=4)
    rng = np.random.default_rng(2)
    fp = sample(spec, Grid.torus(8, 8), rng)
    w0 = sample(spec, Grid.torus(8, 8), rng)
    inst = ns_instance(fp, w0, 0.025, ns_collocation(5, 3, 1.0))
    _fd_check(init_network([3, 6, 6, 2], "cos", 7), inst)


def test_train_zero_epochs_returns_init():
    inst = poisson_instance(_sine_source, poisson_collocation(32))
    cfg = PinnConfig(epochs=0, seed=3)
    res = train_pinn(inst, cfg)
    init = init_network(cfg.widths, cfg.activation, 3)
    assert res.params.flat().tobytes() == init.flat().tobytes()
    assert res.loss == strong_loss(init, inst) and len(res.history) == 1


def test_train_deterministic_and_quality_flag():
    inst = poisson_instance(_sine_source, poisson_collocation(32))
    cfg = PinnConfig(epochs=30, lr=1e-3, seed=1, loss_ceiling=0.0)
    a, b = train_pinn(inst, cfg), train_pinn(inst, cfg)
    assert np.array(a.history).tobytes() == np.array(b.history).tobytes()
    assert a.quality_warning
    assert a.loss == min(a.history)


def test_train_poisson_sine_desk():
    from rebano.config import preset
    inst = poisson_instance(_sine_source, poisson_collocation(128))
    res = train_pinn(inst, PinnConfig.from_dict(preset("poisson-desk")["training"]["pinn"]))
    x = np.linspace(0, 1, 1001)[:, None]
    from rebano.nn import forward
    u = forward(res.params, x)[:, 0]
    exact = np.sin(np.pi * x[:, 0]) / np.pi ** 2
    assert res.loss <= 1e-6
    assert np.linalg.norm(u - exact) / np.linalg.norm(exact) <= 1e-2
