"""Utility-based prices and their first-order corrections.

The pipeline at initial capital ``x``:

1. solve the investment problem; the dual density gives the pricing measure
   ``Qhat`` and the Davis price ``p(x) = E_Qhat[f]``;
2. replicate the risk-tolerance payoff ``-U'(X_T)/U''(X_T)``; when it is
   attainable its wealth process ``R`` is the numeraire of the measure
   ``dQ^R/dP = R_T dQhat/dP / R_0``;
3. project the ``R``-discounted claim price onto the ``R``-discounted traded
   assets node by node; the residual martingale ``N`` gives
   ``D = u''/u' E_{Q^R}[N N^T]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .market import Claim, MarketModel, Measure, WealthProcess, is_replicable, superreplication_bounds
from .solver import SolveResult, solve_primal, value_derivatives
from .utility import UtilityFunction

logger = logging.getLogger(__name__)

TERMINAL_TOL = 1e-8
DENSITY_TOL = 1e-10
PINV_RCOND = 1e-12


class RiskToleranceUnavailable(RuntimeError):
    """The risk-tolerance wealth process does not exist for this model/utility.

    Use ``oracle.sensitivity_fd`` (or ``sensitivity(..., method="formula")``,
    which falls back to it automatically) instead of the closed formula.
    """


def _claims(model: MarketModel, claims: Sequence[Claim] | None) -> tuple[Claim, ...]:
    return model.claims if claims is None else tuple(claims)


def _payoff_matrix(claims: Sequence[Claim], n_leaves: int) -> np.ndarray:
    if not claims:
        return np.zeros((n_leaves, 0))
    return np.column_stack([c.payoffs for c in claims])


def davis_price(model: MarketModel, u: UtilityFunction, x: float,
                claims: Sequence[Claim] | None = None, solve: SolveResult | None = None) -> np.ndarray:
    """Marginal utility-based prices at zero claim holdings, ``E_Qhat[f]``."""
    claims = _claims(model, claims)
    solve = solve or solve_primal(model, u, x)
    return solve.pricing_measure.expectation(_payoff_matrix(claims, model.tree.n_leaves))


@dataclass(frozen=True, eq=False)
class RiskToleranceResult:
    exists: bool
    target: np.ndarray                 # -U'/U'' at the optimal terminal wealth
    process: WealthProcess | None
    R0: float | None
    measure: Measure | None            # Q^R
    residual: float
    solve: SolveResult
    R_T: np.ndarray | None = None


def risk_tolerance(model: MarketModel, u: UtilityFunction, x: float,
                   solve: SolveResult | None = None) -> RiskToleranceResult:
    """Build the risk-tolerance wealth process, or report that it does not exist."""
    tree = model.tree
    solve = solve or solve_primal(model, u, x)
    rho = np.asarray(u.risk_tolerance(solve.terminal), dtype=float)
    ok, _ = is_replicable(model, rho)
    if not ok:
        lo, hi = superreplication_bounds(model, rho)
        logger.info("risk-tolerance payoff not replicable (price gap %.3e)", hi - lo)
        return RiskToleranceResult(False, rho, None, None, None, hi - lo, solve)

    qhat = solve.pricing_measure.leaf_probabilities
    R = tree.node_expectation(qhat, rho)
    H = np.zeros((len(tree.internal), model.n_assets))
    worst = 0.0
    for n in tree.internal:
        kids = list(tree.children[n])
        dS = model.increments(n)
        dR = R[kids] - R[n]
        h, *_ = np.linalg.lstsq(dS, dR, rcond=None)
        worst = max(worst, float(np.max(np.abs(dS @ h - dR))))
        H[model.internal_pos[int(n)]] = h
    wp = model.wealth_process(R[0], H)
    scale = max(1.0, float(np.max(np.abs(rho))))
    term_err = float(np.max(np.abs(wp.values[tree.leaves] - rho)))
    if term_err > TERMINAL_TOL * scale or model.self_financing_error(wp) > 1e-10 * scale:
        raise RuntimeError(f"risk-tolerance hedge does not replicate its target (error {term_err:.3e})")
    R0 = float(R[0])
    dens = wp.values[tree.leaves] * solve.density / R0
    qR = tree.leaf_probabilities * dens
    if abs(qR.sum() - 1.0) > DENSITY_TOL:
        raise RuntimeError(f"Q^R density integrates to {qR.sum()!r}")
    return RiskToleranceResult(True, rho, wp, R0, Measure(qR / qR.sum()), max(worst, term_err),
                               solve, wp.values[tree.leaves])


@dataclass(frozen=True, eq=False)
class KWDecomposition:
    """Orthogonal split ``P^R = M + N`` of one discounted claim price (node arrays)."""

    label: str
    discounted_payoff: np.ndarray
    price: np.ndarray
    hedge_part: np.ndarray
    residual: np.ndarray
    strategy: np.ndarray          # per internal node: (bond, assets) quantities in R-units
    orthogonality_error: float
    leaves: np.ndarray = field(repr=False)

    @property
    def M_T(self) -> np.ndarray:
        return self.hedge_part[self.leaves]

    @property
    def N_T(self) -> np.ndarray:
        return self.residual[self.leaves]


def kw_decomposition(model: MarketModel, rt: RiskToleranceResult,
                     claims: Sequence[Claim] | None = None) -> list[KWDecomposition]:
    if not rt.exists:
        raise RiskToleranceUnavailable(
            "risk-tolerance wealth process does not exist; use the finite-difference oracle")
    tree = model.tree
    claims = _claims(model, claims)
    R = rt.process.values
    units = rt.R0 / R
    # traded assets (bond first) in units of R/R0
    assets = np.column_stack([units, model.prices * units[:, None]])
    qR = rt.measure.leaf_probabilities
    cond = rt.measure.conditional(tree)

    out = []
    for c in claims:
        fR = c.payoffs * units[tree.leaves]
        P = tree.node_expectation(qR, fR)
        M = np.zeros(tree.n_nodes)
        N = np.zeros(tree.n_nodes)
        M[0] = P[0]
        beta_all = np.zeros((len(tree.internal), assets.shape[1]))
        orth = 0.0
        for n in tree.internal:
            kids = list(tree.children[n])
            w = cond[kids]
            dX = assets[kids] - assets[n]
            dP = P[kids] - P[n]
            gram = dX.T @ (w[:, None] * dX)
            beta = np.linalg.pinv(gram, rcond=PINV_RCOND) @ (dX.T @ (w * dP))
            dM = dX @ beta
            dN = dP - dM
            orth = max(orth, float(np.max(np.abs(dX.T @ (w * dN)))))
            M[kids] = M[n] + dM
            N[kids] = N[n] + dN
            beta_all[model.internal_pos[int(n)]] = beta
        out.append(KWDecomposition(c.label, fR, P, M, N, beta_all, orth, tree.leaves))
    return out


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    labels: tuple[str, ...]
    method: str                        # "formula" or "oracle"
    davis_price: np.ndarray
    p_prime: np.ndarray
    D: np.ndarray
    hedge_terminal: np.ndarray | None  # (m, leaves): M_T per claim
    residual_terminal: np.ndarray | None
    u_prime: float
    u_second: float
    risk_tolerance: RiskToleranceResult
    fallback: bool = False

    @property
    def symmetry_gap(self) -> float:
        return float(np.max(np.abs(self.D - self.D.T), initial=0.0))

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh((self.D + self.D.T) / 2) if self.D.size else np.zeros(0)

    @property
    def min_eigenvalue(self) -> float:
        ev = self.eigenvalues
        return float(ev.min()) if ev.size else 0.0

    @property
    def max_eigenvalue(self) -> float:
        ev = self.eigenvalues
        return float(ev.max()) if ev.size else 0.0


def price_derivative(model: MarketModel, u: UtilityFunction, x: float,
                     claims: Sequence[Claim] | None = None, rel_step: float = 1e-4) -> np.ndarray:
    """``p'(x)`` by central differences of the Davis price, Richardson refined."""
    h = rel_step * x
    p = {k: davis_price(model, u, x + k * h / 2, claims) for k in (-2, -1, 1, 2)}
    coarse = (p[2] - p[-2]) / (2 * h)
    fine = (p[1] - p[-1]) / h
    return (4 * fine - coarse) / 3


def sensitivity(model: MarketModel, u: UtilityFunction, x: float,
                claims: Sequence[Claim] | None = None, *, oracle_config=None,
                rel_step: float = 1e-4) -> SensitivityReport:
    """Davis prices, ``p'(x)`` and ``D(x)`` via the risk-tolerance formula.

    When the risk-tolerance process does not exist the whole report comes
    from the finite-difference oracle and is flagged ``fallback``.
    """
    claims = _claims(model, claims)
    labels = tuple(c.label for c in claims)
    solve = solve_primal(model, u, x)
    rt = risk_tolerance(model, u, x, solve)
    prices = davis_price(model, u, x, claims, solve)
    if not rt.exists:
        from . import oracle
        cfg = oracle_config or oracle.OracleConfig()
        p_prime, D = oracle.sensitivity_fd(model, u, x, claims, cfg)
        d1, d2 = value_derivatives(model, u, x, rel_step)
        logger.warning("risk-tolerance process missing; sensitivity from finite differences")
        return SensitivityReport(labels, "oracle", prices, p_prime, D, None, None, d1, d2, rt,
                                 fallback=True)

    kw = kw_decomposition(model, rt, claims)
    d1, d2 = value_derivatives(model, u, x, rel_step)
    qR = rt.measure.leaf_probabilities
    N = np.array([k.N_T for k in kw]).reshape(len(claims), model.tree.n_leaves)
    M = np.array([k.M_T for k in kw]).reshape(len(claims), model.tree.n_leaves)
    D = (d2 / d1) * (N * qR) @ N.T
    p_prime = price_derivative(model, u, x, claims, rel_step)
    return SensitivityReport(labels, "formula", prices, p_prime, D, M, N, d1, d2, rt)


@dataclass(frozen=True)
class TaylorReport:
    steps: tuple[float, ...]
    gaps: tuple[float, ...]                 # u(x+dx) - E[U(X_T + dx Phi)]
    gap_ratio: float
    roundoff_floor: float
    scaling_ok: bool
    quad_coefficient: float                 # E_Qhat[Phi^2 / R_T]
    competitor_coefficients: tuple[float, ...]
    minimum_ok: bool
    competitor_excess: tuple[float, ...]    # best competitor minus Phi, per step
    competitors_ok: bool


def taylor_check(model: MarketModel, u: UtilityFunction, x: float,
                 steps: Sequence[float] = (1e-2, 1e-3), n_competitors: int = 20,
                 seed: int = 0, rt: RiskToleranceResult | None = None) -> TaylorReport:
    """Check that ``Phi = R_T/R_0`` is the best use of an extra ``dx`` to second order."""
    rt = rt or risk_tolerance(model, u, x)
    if not rt.exists:
        raise RiskToleranceUnavailable("taylor_check needs the risk-tolerance process")
    tree = model.tree
    p = tree.leaf_probabilities
    XT = rt.solve.terminal
    RT = rt.R_T
    phi = RT / rt.R0
    qhat = rt.solve.pricing_measure.leaf_probabilities
    floor = 64 * np.finfo(float).eps * max(1.0, abs(rt.solve.value))

    def expected_u(w):
        if np.any(w <= 0):
            raise ValueError("step too large: terminal wealth not positive")
        return float(p @ u.U(w))

    base = [expected_u(XT + dx * phi) for dx in steps]
    gaps = tuple(solve_primal(model, u, x + dx).value - b for dx, b in zip(steps, base))
    ratio = gaps[0] / gaps[-1] if gaps[-1] != 0 else np.inf
    small = all(abs(g) <= floor for g in gaps)
    scaling_ok = all(g >= -floor for g in gaps) and (small or gaps[-1] <= gaps[0] / 8)

    rng = np.random.default_rng(seed)
    G = model.gains_matrix
    spread = max(float(np.max(np.abs(G), initial=0.0)), 1e-12)
    comps = []
    while len(comps) < n_competitors:
        alt = 1.0 + G @ (rng.standard_normal(G.shape[1]) / spread)
        if all(np.all(XT + dx * alt > 0) for dx in steps):
            comps.append(alt)
    quad = float(qhat @ (phi ** 2 / RT))
    quad_c = tuple(float(qhat @ (c ** 2 / RT)) for c in comps)
    minimum_ok = all(v >= quad - 1e-10 for v in quad_c)
    excess = tuple(max(expected_u(XT + dx * c) for c in comps) - b for dx, b in zip(steps, base))
    competitors_ok = all(e <= g + floor for e, g in zip(excess, gaps))
    return TaylorReport(tuple(steps), gaps, float(ratio), floor, scaling_ok, quad, quad_c,
                        minimum_ok, excess, competitors_ok)


@dataclass(frozen=True)
class EquilibriumResult:
    q: np.ndarray
    least_norm: bool
    residual: float
    unbounded_direction: np.ndarray | None


def linearized_equilibrium(report: SensitivityReport, x: float, p_trade,
                           allow_least_norm: bool = True, rank_tol: float = 1e-9) -> EquilibriumResult:
    """Solve ``p_trade = p + p' (-<p_trade, q>) + D q`` for the static position ``q``.

    If the system is singular the least-norm solution is returned and
    flagged.  When it is also inconsistent, first-order prices leave some
    trade direction with zero impact and positive value; that direction is
    returned as ``unbounded_direction``.
    """
    pt = np.atleast_1d(np.asarray(p_trade, dtype=float))
    p = np.atleast_1d(report.davis_price)
    if pt.shape != p.shape:
        raise ValueError("p_trade must have one entry per claim")
    A = report.D - np.outer(report.p_prime, pt)
    b = pt - p
    U_, s, Vt = np.linalg.svd(A)
    cutoff = rank_tol * max(1.0, float(s.max(initial=0.0)))
    rank = int(np.sum(s > cutoff))
    if rank == len(b):
        q = np.linalg.solve(A, b)
        return EquilibriumResult(q, False, float(np.max(np.abs(A @ q - b))), None)
    if not allow_least_norm:
        raise np.linalg.LinAlgError(f"singular equilibrium system (rank {rank} < {len(b)})")
    q = np.linalg.pinv(A, rcond=cutoff / max(float(s.max(initial=0.0)), 1e-300)) @ b
    res = float(np.max(np.abs(A @ q - b)))
    direction = None
    if res > cutoff:
        null = Vt[rank:].T
        v = -null @ (null.T @ b)
        if np.linalg.norm(v) > cutoff:
            direction = v / np.linalg.norm(v)
    logger.warning("equilibrium system has rank %d < %d; returning least-norm solution", rank, len(b))
    return EquilibriumResult(q, True, res, direction)
