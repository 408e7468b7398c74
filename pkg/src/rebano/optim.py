"""Adam with a step-halving schedule, and L-BFGS with Armijo backtracking."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class LRSchedule:
    """Learning rate ``initial_lr * 0.5 ** (epoch // halving_period)``."""

    initial_lr: float
    halving_period: int | None = None

    def __call__(self, epoch: int) -> float:
        if not self.halving_period:
            return self.initial_lr
        return self.initial_lr * 0.5 ** (epoch // self.halving_period)


@dataclass(frozen=True)
class AdamState:
    schedule: LRSchedule
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"


def adam_init(n_params: int, schedule: LRSchedule | float) -> AdamState:
    if not isinstance(schedule, LRSchedule):
        schedule = LRSchedule(float(schedule))
    return AdamState(schedule, np.zeros(n_params), np.zeros(n_params))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; the learning rate is read at ``state.step_count``."""
    if params.shape != grad.shape or grad.shape != state.m.shape:
        raise ContractViolation(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    lr = state.schedule(state.step_count)
    new_params = params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, m=m, v=v, step_count=t), new_params


@dataclass
class LBFGSResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iters: int
    converged: bool
    # line search gave up before the tolerance was met
    degraded: bool = False
    history: list = field(default_factory=list)


def lbfgs_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    max_iters: int = 100,
    m: int = 10,
    tol: float = 1e-10,
    c1: float = 1e-4,
    shrink: float = 0.5,
    max_halvings: int = 30,
    initial_step: float = 1.0,
) -> LBFGSResult:
    """Minimize ``fun`` (returning value and gradient) by limited-memory BFGS.

    Directions come from the two-loop recursion over at most ``m`` curvature
    pairs; step lengths from Armijo backtracking.  ``initial_step`` is the trial
    step of the first iteration only (later iterations start at 1, the natural
    quasi-Newton step).  Stops when the gradient norm drops below ``tol`` or
    after ``max_iters`` iterations.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    S, Y = [], []
    history = [f]
    degraded = False
    it = 0
    while it < max_iters:
        gnorm = np.linalg.norm(g)
        if gnorm < tol:
            break
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        slope = g @ d
        if slope >= 0:
            # not a descent direction: restart from steepest descent
            S.clear()
            Y.clear()
            d = -g
            slope = -(g @ g)
        step = initial_step if it == 0 else 1.0
        for _ in range(max_halvings + 1):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                break
            step *= shrink
        else:
            degraded = True
            break
        s, y = x_new - x, g_new - g
        if s @ y > 1e-16 * (s @ s):
            S.append(s)
            Y.append(y)
            if len(S) > m:
                S.pop(0)
                Y.pop(0)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        it += 1
    gnorm = float(np.linalg.norm(g))
    return LBFGSResult(x, float(f), gnorm, it, gnorm < tol, degraded, history)
