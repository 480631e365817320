"""Brute-force reference values.

Everything here works from the indirect utility ``u(x, q)`` returned by
``solve_primal`` (or, for the dual, from the martingale-measure polytope
directly) and shares nothing else with :mod:`imp_pricing.pricing`.

Marginal prices come from the defining first-order condition
``p_i = (du/dq_i) / (du/dx)``; the sensitivities ``p'(x)`` and
``D_ij = dp_i/dq_j`` are central differences of those prices.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize_scalar

from .market import Claim, MarketModel, _emm_equalities, check_no_arbitrage
from .solver import GRAD_TOL, solve_primal
from .utility import UtilityFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleConfig:
    x_step: float = 1e-3        # relative to x
    q_step: float = 1e-3        # relative to x / max|f_i|
    richardson: int = 1
    grad_tol: float = GRAD_TOL

    def __post_init__(self):
        for name in ("x_step", "q_step"):
            v = getattr(self, name)
            if not 1e-7 < v < 1e-2:
                raise ValueError(f"{name} must lie in (1e-7, 1e-2), got {v}")
        if self.richardson < 0:
            raise ValueError("richardson depth must be nonnegative")


def central_difference(fn: Callable[[float], np.ndarray], h: float, depth: int = 1) -> np.ndarray:
    """Derivative at 0 of ``fn`` by central differences, Richardson extrapolated ``depth`` times."""
    table = []
    for k in range(depth + 1):
        hk = h / 2 ** k
        table.append((np.asarray(fn(hk)) - np.asarray(fn(-hk))) / (2 * hk))
    for level in range(1, depth + 1):
        factor = 4 ** level
        table = [(factor * table[k + 1] - table[k]) / (factor - 1) for k in range(len(table) - 1)]
    return table[0]


def _steps(model: MarketModel, x: float, claims: Sequence[Claim], cfg: OracleConfig):
    scale = [max(float(np.max(np.abs(c.payoffs))), 1e-12) for c in claims]
    return cfg.x_step * x, np.array([cfg.q_step * x / s for s in scale])


def marginal_price(model: MarketModel, u: UtilityFunction, x: float, q=None,
                   claims: Sequence[Claim] | None = None,
                   cfg: OracleConfig | None = None) -> np.ndarray:
    """Marginal utility-based price at ``(x, q)`` from finite differences of ``u``."""
    cfg = cfg or OracleConfig()
    claims = model.claims if claims is None else tuple(claims)
    m = len(claims)
    q = np.zeros(m) if q is None else np.asarray(q, dtype=float)
    hx, hq = _steps(model, x, claims, cfg)

    def value(dx: float, dq: np.ndarray) -> float:
        return solve_primal(model, u, x + dx, q + dq, claims, grad_tol=cfg.grad_tol).value

    zero = np.zeros(m)
    ux = central_difference(lambda t: value(t, zero), hx, cfg.richardson)
    uq = np.empty(m)
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        uq[i] = central_difference(lambda t: value(0.0, t * e), hq[i], cfg.richardson)
    return uq / ux


def sensitivity_fd(model: MarketModel, u: UtilityFunction, x: float,
                   claims: Sequence[Claim] | None = None,
                   cfg: OracleConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(p'(x), D(x))`` at ``q = 0`` by differencing :func:`marginal_price`."""
    cfg = cfg or OracleConfig()
    claims = model.claims if claims is None else tuple(claims)
    m = len(claims)
    hx, hq = _steps(model, x, claims, cfg)
    p_prime = central_difference(
        lambda t: marginal_price(model, u, x + t, None, claims, cfg), hx, cfg.richardson)
    D = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        D[:, j] = central_difference(
            lambda t: marginal_price(model, u, x, t * e, claims, cfg), hq[j], cfg.richardson)
    return np.atleast_1d(p_prime), D


@dataclass(frozen=True)
class StepRobustness:
    steps: tuple[float, float]
    D_coarse: np.ndarray
    D_fine: np.ndarray
    relative_gap: float
    passed: bool


def step_robustness(model: MarketModel, u: UtilityFunction, x: float,
                    claims: Sequence[Claim] | None = None,
                    steps: tuple[float, float] = (1e-3, 1e-4), tol: float = 1e-4) -> StepRobustness:
    """Compare oracle ``D`` at two step sizes before trusting it."""
    Ds = [sensitivity_fd(model, u, x, claims, OracleConfig(x_step=s, q_step=s))[1] for s in steps]
    gap = float(np.max(np.abs(Ds[0] - Ds[1]), initial=0.0))
    rel = gap / max(1e-300, float(np.max(np.abs(Ds[0]), initial=0.0)))
    scale = max(1e-8, float(np.max(np.abs(Ds[0]), initial=0.0)))
    return StepRobustness(tuple(steps), Ds[0], Ds[1], rel, gap <= tol * scale)


def check_indifference(model: MarketModel, u: UtilityFunction, x: float, q, price,
                       claims: Sequence[Claim] | None = None, n_samples: int = 20,
                       radius: float = 1e-2, seed: int = 0, tol: float = 1e-8) -> bool:
    """``u(x, q) >= u(x + <q - q', p>, q')`` for random ``q'`` near ``q``."""
    claims = model.claims if claims is None else tuple(claims)
    q = np.asarray(q, dtype=float)
    p = np.asarray(price, dtype=float)
    base = solve_primal(model, u, x, q, claims).value
    rng = np.random.default_rng(seed)
    for _ in range(n_samples):
        q2 = q + radius * rng.uniform(-1, 1, size=q.shape)
        alt = solve_primal(model, u, x + float((q - q2) @ p), q2, claims).value
        if alt > base + tol:
            return False
    return True


# ---------------------------------------------------------------------------
# dual problem, straight from the polytope
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirectDual:
    y: float
    value: float
    density: np.ndarray
    measure: np.ndarray
    iterations: int


def dual_direct(model: MarketModel, u: UtilityFunction, y: float,
                tol: float = 1e-14, max_iter: int = 200) -> DirectDual:
    """Minimize ``E[V(y dQ/dP)]`` over martingale measures by Newton on the polytope's affine hull.

    ``V'(0+) = -inf`` keeps the minimizer in the interior, so only the
    equality constraints matter; positivity is enforced by the line search.
    """
    p = model.tree.leaf_probabilities
    A, b = _emm_equalities(model)
    start = check_no_arbitrage(model)
    if not start.arbitrage_free:
        raise ValueError("model admits arbitrage")
    q = start.witness.leaf_probabilities.copy()
    basis = null_space(A)

    def phi(q):
        return float(p @ u.V(y * q / p))

    val = phi(q)
    it = 0
    for it in range(1, max_iter + 1):
        if not basis.shape[1]:
            break
        z = y * q / p
        grad = basis.T @ (y * u.dV(z))
        if np.max(np.abs(grad)) < tol * max(1.0, abs(val)):
            break
        hess = (basis.T * (y * y * u.d2V(z) / p)) @ basis
        step = -basis @ np.linalg.solve(hess, grad)
        slope = float((y * u.dV(z)) @ step)
        t = 1.0
        while True:
            trial = q + t * step
            if np.all(trial > 0):
                tv = phi(trial)
                if tv <= val + 1e-4 * t * slope + 1e-15 * max(1.0, abs(val)):
                    break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            break
        q, val = trial, tv
    return DirectDual(y, val, q / p, q, it)


def conjugate_by_maximization(model: MarketModel, u: UtilityFunction, y: float,
                              bracket: tuple[float, float] = (-12.0, 12.0)) -> tuple[float, float]:
    """``sup_x {u(x) - x y}`` by scalar maximization over ``log x``; returns ``(value, argmax)``."""
    def neg(s):
        x = math.exp(s)
        return -(solve_primal(model, u, x).value - x * y)

    res = minimize_scalar(neg, bounds=bracket, method="bounded",
                          options={"xatol": 1e-10, "maxiter": 500})
    return -float(res.fun), math.exp(res.x)
