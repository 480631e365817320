"""Second-order stochastic dominance between martingale densities.

``f`` dominates ``g`` when ``E[min(f, t)] >= E[min(g, t)]`` for all ``t >= 0``.
Both sides are concave and piecewise linear in ``t`` with kinks at the
values taken by ``f`` and ``g``, so checking the kinks is exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .market import MarketModel, Measure, VertexLimitExceeded, emm_vertices
from .solver import solve_primal
from .utility import LogUtility, PowerUtility, UtilityFunction

logger = logging.getLogger(__name__)

UNIVERSAL = "universal"
NOT_UNIVERSAL = "not-universal"
INCONCLUSIVE = "inconclusive"


def sosd_deficit(f, g, probs=None) -> tuple[float, float]:
    """Largest ``E[min(g,t)] - E[min(f,t)]`` over the kink set, and the ``t`` attaining it."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError("f and g must live on the same leaves")
    if np.any(f < 0) or np.any(g < 0):
        raise ValueError("sosd is defined for nonnegative random variables")
    p = np.full(len(f), 1.0 / len(f)) if probs is None else np.asarray(probs, dtype=float)
    kinks = np.unique(np.concatenate([f, g]))
    gap = (np.minimum(g[None, :], kinks[:, None]) - np.minimum(f[None, :], kinks[:, None])) @ p
    k = int(np.argmax(gap))
    return float(gap[k]), float(kinks[k])


def sosd(f, g, probs=None, tol: float = 1e-12) -> bool:
    """True iff ``f`` second-order stochastically dominates ``g`` under ``probs``."""
    deficit, _ = sosd_deficit(f, g, probs)
    scale = max(1.0, float(np.max(np.abs(f), initial=0)), float(np.max(np.abs(g), initial=0)))
    return deficit <= tol * scale


@dataclass(frozen=True, eq=False)
class DominanceReport:
    candidate: Measure
    n_vertices: int
    n_samples: int
    verdict: str
    violating_measure: Measure | None = None
    violating_t: float | None = None
    notes: tuple[str, ...] = field(default=())


def check_universal_minimal(model: MarketModel, candidate: Measure, n_samples: int = 200,
                            seed: int = 0, vertex_limit: int = 20000,
                            tol: float = 1e-12) -> DominanceReport:
    """Test whether ``dcandidate/dP`` dominates the densities of other martingale measures.

    Comparisons run against every vertex of the martingale-measure polytope
    and ``n_samples`` random interior points.  The minimum of
    ``E[min(dQ/dP, t)]`` over the polytope need not sit at a vertex, so a
    "universal" verdict is evidence, not proof.
    """
    q = candidate.leaf_probabilities
    if not model.is_martingale_measure(q, tol=1e-8):
        raise ValueError("candidate is not a martingale measure of the model")
    p = model.tree.leaf_probabilities
    dens = q / p
    notes = ["sampled check: vertices plus interior points, not a proof over the polytope"]
    try:
        vertices = emm_vertices(model, vertex_limit)
        truncated = False
    except VertexLimitExceeded:
        vertices, truncated = [], True
        notes.append(f"vertex enumeration stopped at {vertex_limit}; interior samples only")

    rng = np.random.default_rng(seed)
    comparisons: list[np.ndarray] = list(vertices)
    if vertices:
        for _ in range(n_samples):
            k = min(len(vertices), 3)
            pick = rng.choice(len(vertices), size=k, replace=False)
            w = rng.dirichlet(np.ones(k))
            comparisons.append(sum(wi * vertices[j] for wi, j in zip(w, pick)))

    for other in comparisons:
        deficit, t = sosd_deficit(dens, other / p, p)
        scale = max(1.0, float(dens.max()), float((other / p).max()))
        if deficit > tol * scale:
            return DominanceReport(candidate, len(vertices), n_samples, NOT_UNIVERSAL,
                                   Measure(other / other.sum()), t, tuple(notes))
    verdict = INCONCLUSIVE if truncated else UNIVERSAL
    return DominanceReport(candidate, len(vertices), n_samples, verdict, notes=tuple(notes))


@dataclass(frozen=True, eq=False)
class CrossUtilityResult:
    consistent: bool
    measures: dict[str, np.ndarray]
    max_gap: float

    def __bool__(self) -> bool:
        return self.consistent


DEFAULT_UTILITIES: tuple[UtilityFunction, ...] = (LogUtility(), PowerUtility(-1.0), PowerUtility(0.5))


def cross_utility_consistency(model: MarketModel, x: float,
                              utilities: Sequence[UtilityFunction] = DEFAULT_UTILITIES,
                              tol: float = 1e-7) -> CrossUtilityResult:
    """Do different utilities share the same dual-optimal pricing measure at ``x``?"""
    measures = {}
    for u in utilities:
        spec = u.spec()
        key = spec["kind"] if "gamma" not in spec else f"power({spec['gamma']:g})"
        measures[key] = solve_primal(model, u, x).pricing_measure.leaf_probabilities
    ref = next(iter(measures.values()))
    gap = max(float(np.max(np.abs(m - ref))) for m in measures.values())
    return CrossUtilityResult(gap <= tol, measures, gap)
