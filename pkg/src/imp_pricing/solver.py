"""Optimal investment on an event tree.

``solve_primal`` maximizes ``E[U(X_T + <q, f>)]`` over holdings at every
internal node with a damped Newton iteration.  The objective is smooth and
concave in the holdings; the Inada condition makes nonpositive terminal
wealth infeasible, and the line search backs off until wealth stays
positive.  The dual minimizer is read off the first-order condition
``U'(X_T + <q, f>) = y dQ/dP``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, linprog

from .market import (Claim, MarketModel, Measure, WealthProcess, _HIGHS_OPTIONS,
                     ArbitrageError, check_no_arbitrage)
from .utility import UtilityFunction

logger = logging.getLogger(__name__)

GRAD_TOL = 1e-10
MAX_ITER = 500
FOC_TOL = 1e-8


class SolverError(RuntimeError):
    pass


class InfeasibleError(SolverError):
    """``(x, q)`` lies outside the cone of admissible positions."""


class ConvergenceError(SolverError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (gradient sup-norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


@dataclass(frozen=True, eq=False)
class SolveResult:
    x: float
    q: np.ndarray
    value: float
    wealth: WealthProcess
    terminal: np.ndarray          # X_T + <q, f> at the leaves
    y: float                      # E[U'(terminal)] = du/dx
    density: np.ndarray           # dQ/dP at the leaves
    pricing_measure: Measure
    iterations: int
    grad_norm: float

    @property
    def holdings(self) -> np.ndarray:
        return self.wealth.strategy.holdings


def _endowment(model: MarketModel, q, claims: Sequence[Claim] | None) -> tuple[np.ndarray, np.ndarray]:
    claims = model.claims if claims is None else tuple(claims)
    n = model.tree.n_leaves
    if q is None:
        return np.zeros(0), np.zeros(n)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if len(q) != len(claims):
        raise ValueError(f"got {len(q)} quantities for {len(claims)} claims")
    if not len(q):
        return q, np.zeros(n)
    F = np.column_stack([c.payoffs for c in claims])
    return q, F @ q


def feasible_start(model: MarketModel, x: float, endowment: np.ndarray) -> np.ndarray:
    """Holdings maximizing the smallest terminal wealth; raises if that is not positive."""
    G = model.gains_matrix
    base = x + endowment
    if np.all(base > 0):
        return np.zeros(G.shape[1])
    n, k = G.shape
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-G, np.ones((n, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=base, bounds=[(None, None)] * (k + 1),
                  method="highs", options=_HIGHS_OPTIONS)
    if res.status != 0 or -res.fun <= 0:
        raise InfeasibleError(f"no strategy keeps terminal wealth positive (x={x})")
    return res.x[:k]


def solve_primal(model: MarketModel, u: UtilityFunction, x: float, q=None,
                 claims: Sequence[Claim] | None = None, *, grad_tol: float = GRAD_TOL,
                 max_iter: int = MAX_ITER, check_arbitrage: bool = False) -> SolveResult:
    """Maximize expected utility of terminal wealth plus the claim endowment.

    ``q`` defaults to no claims.  ``claims`` defaults to the model's claims.
    Arbitrage is not re-checked unless ``check_arbitrage`` is set; on an
    arbitrage model the iteration diverges and ``ConvergenceError`` results.
    """
    if not x > 0 and q is None:
        raise InfeasibleError("initial capital must be positive")
    if check_arbitrage and not check_no_arbitrage(model).arbitrage_free:
        raise ArbitrageError("model admits arbitrage")
    qv, endow = _endowment(model, q, claims)
    G = model.gains_matrix
    p = model.tree.leaf_probabilities
    h = feasible_start(model, x, endow)

    def objective(h):
        w = x + endow + G @ h
        if np.any(w <= 0):
            return -np.inf, w
        return float(p @ u.U(w)), w

    val, w = objective(h)
    it = 0
    grad_norm = np.inf
    polished = False
    while True:
        mu = p * u.dU(w)
        grad = G.T @ mu
        grad_norm = float(np.max(np.abs(grad), initial=0.0))
        if grad_norm < grad_tol * max(1.0, abs(val)):
            if polished or not G.shape[1]:
                break
            polished = True
        if it >= max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} iterations", grad_norm)
        it += 1
        hess = (G.T * (p * u.d2U(w))) @ G
        step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if slope <= 0:
            step, slope = grad, float(grad @ grad)
        t = 1.0
        slack = 1e-14 * max(1.0, abs(val))
        while True:
            new_val, new_w = objective(h + t * step)
            if new_val >= val + 1e-4 * t * slope - slack:
                break
            t *= 0.5
            if t < 1e-20:
                if polished:
                    new_val, new_w = val, w
                    t = 0.0
                    break
                raise ConvergenceError("line search failed", grad_norm)
        if t == 0.0:
            break
        h = h + t * step
        val, w = new_val, new_w

    y = float(p @ u.dU(w))
    density = u.dU(w) / y
    qhat = p * density
    qhat = qhat / qhat.sum()
    mart = model.martingale_error(qhat)
    if mart > FOC_TOL * max(1.0, float(np.max(np.abs(G), initial=0.0))):
        raise SolverError(f"dual density is not a martingale density (error {mart:.3e})")
    wealth = model.wealth_process(x, h)
    logger.debug("solve_primal x=%g q=%s: u=%.15g after %d iterations", x, qv, val, it)
    return SolveResult(float(x), qv, val, wealth, w, y, density, Measure(qhat), it, grad_norm)


@dataclass(frozen=True, eq=False)
class DualResult:
    y: float
    value: float
    density: np.ndarray
    x: float                 # -v'(y)
    measure: Measure
    primal: SolveResult


def solve_dual(model: MarketModel, u: UtilityFunction, y: float) -> DualResult:
    """Dual value ``v(y) = E[V(y dQ/dP)]`` at the minimizing martingale density.

    The minimizer is recovered from the primal first-order condition: find
    ``x`` with ``u'(x) = y`` and take ``Y_T = U'(X_T(x))``.
    """
    if not y > 0:
        raise ValueError("y must be positive")

    cache: dict[float, SolveResult] = {}

    def gap(s: float) -> float:
        res = solve_primal(model, u, math.exp(s))
        cache[s] = res
        return math.log(res.y) - math.log(y)

    lo, hi = -1.0, 1.0
    glo, ghi = gap(lo), gap(hi)
    for _ in range(200):
        if glo >= 0 >= ghi:
            break
        if glo < 0:
            lo, hi, ghi = lo - 2.0 * (hi - lo), lo, glo
            glo = gap(lo)
        else:
            lo, hi, glo = hi, hi + 2.0 * (hi - lo), ghi
            ghi = gap(hi)
    else:
        raise SolverError(f"cannot bracket u'(x) = {y}")
    s = brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    res = cache.get(s) or solve_primal(model, u, math.exp(s))
    p = model.tree.leaf_probabilities
    value = float(p @ u.V(y * res.density))
    x = float(p @ (res.density * -u.dV(y * res.density)))
    return DualResult(y, value, res.density, x, res.pricing_measure, res)


def value_derivatives(model: MarketModel, u: UtilityFunction, x: float,
                      rel_step: float = 1e-4) -> tuple[float, float]:
    """``(u'(x), u''(x))`` by central differences with one Richardson step."""
    h = rel_step * x
    val = {k: solve_primal(model, u, x + k * h / 2).value for k in (-2, -1, 0, 1, 2)}
    d1_h = (val[2] - val[-2]) / (2 * h)
    d1_h2 = (val[1] - val[-1]) / h
    d2_h = (val[2] - 2 * val[0] + val[-2]) / h ** 2
    d2_h2 = (val[1] - 2 * val[0] + val[-1]) / (h / 2) ** 2
    return (4 * d1_h2 - d1_h) / 3, (4 * d2_h2 - d2_h) / 3
