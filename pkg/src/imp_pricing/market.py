"""Finite event-tree market models.

A model is a non-recombining tree of market states.  Each node carries the
prices of ``d`` risky assets; the bond is the numeraire and is identically 1.
Probabilities are stored per edge (conditional on the parent) and the leaf
measure is derived from them.

Nodes are kept in depth-first preorder, so the leaves below any node form a
contiguous block of the leaf ordering.  Most linear algebra in the package
goes through the gains matrix ``G``: row ``l`` holds, for every internal
node ``n`` on the path to leaf ``l``, the price increment of the edge leaving
``n`` towards ``l``.  Terminal wealth of holdings ``h`` is ``x + G @ h`` and
the martingale conditions on a leaf measure ``q`` read ``G.T @ q == 0``.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
SELF_FINANCING_TOL = 1e-10
MARTINGALE_TOL = 1e-10
REPLICATION_TOL = 1e-9
INTERIOR_MARGIN = 1e-9

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class ModelError(ValueError):
    """Malformed or invalid model input."""


class ModelParseError(ModelError):
    pass


class ModelValidationError(ModelError):
    def __init__(self, message: str, node: str | None = None):
        super().__init__(message if node is None else f"node {node!r}: {message}")
        self.node = node


class ArbitrageError(ValueError):
    """Raised when an operation needs an arbitrage-free model."""


def _number(value: Any, what: str) -> float:
    if isinstance(value, bool):
        raise ModelParseError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ModelParseError(f"{what}: cannot parse {value!r}") from exc
    raise ModelParseError(f"{what}: expected a number, got {value!r}")


@dataclass(frozen=True, eq=False)
class EventTree:
    """Filtration of a finite probability space as a rooted tree.

    ``parent[i]`` is -1 for the root; ``cond_prob[i]`` is the probability of
    node ``i`` given its parent (1 for the root).
    """

    ids: tuple[str, ...]
    parent: np.ndarray
    cond_prob: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        prob = np.asarray(self.cond_prob, dtype=float)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "cond_prob", prob)
        parent.setflags(write=False)
        prob.setflags(write=False)
        n = len(self.ids)
        if parent.shape != (n,) or prob.shape != (n,):
            raise ModelValidationError("tree arrays have inconsistent lengths")
        roots = np.flatnonzero(parent < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise ModelValidationError("tree must have exactly one root, stored first")
        for i in range(1, n):
            if not 0 <= parent[i] < i:
                raise ModelValidationError("nodes must be in preorder", self.ids[i])
        depth = self.depth
        periods = int(depth[self.leaves].max()) if n > 1 else 0
        for i in range(n):
            kids = self.children[i]
            if kids and len(kids) < 2:
                raise ModelValidationError("internal node needs at least two children", self.ids[i])
            if not kids and depth[i] != periods:
                raise ModelValidationError(
                    f"leaf at depth {depth[i]}, expected {periods}", self.ids[i])
            if kids:
                p = prob[list(kids)]
                if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p > 1.0):
                    raise ModelValidationError(
                        "child probabilities must lie in (0, 1]", self.ids[i])
                if abs(p.sum() - 1.0) > PROB_TOL:
                    raise ModelValidationError(
                        f"child probabilities sum to {p.sum()!r}, not 1", self.ids[i])

    @cached_property
    def n_nodes(self) -> int:
        return len(self.ids)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.ids]
        for i, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(i)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def depth(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(1, self.n_nodes):
            d[i] = d[self.parent[i]] + 1
        return d

    @cached_property
    def periods(self) -> int:
        return int(self.depth.max())

    @cached_property
    def leaves(self) -> np.ndarray:
        return np.array([i for i in range(self.n_nodes) if not self.children[i]], dtype=int)

    @cached_property
    def internal(self) -> np.ndarray:
        return np.array([i for i in range(self.n_nodes) if self.children[i]], dtype=int)

    @cached_property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @cached_property
    def leaf_range(self) -> np.ndarray:
        """``[start, stop)`` of the leaves below each node, in leaf order."""
        rng = np.zeros((self.n_nodes, 2), dtype=int)
        pos = {node: k for k, node in enumerate(self.leaves)}
        for i in reversed(range(self.n_nodes)):
            kids = self.children[i]
            if not kids:
                rng[i] = pos[i], pos[i] + 1
            else:
                rng[i] = rng[kids[0], 0], rng[kids[-1], 1]
        return rng

    @cached_property
    def leaf_probabilities(self) -> np.ndarray:
        node_prob = np.ones(self.n_nodes)
        for i in range(1, self.n_nodes):
            node_prob[i] = node_prob[self.parent[i]] * self.cond_prob[i]
        return node_prob[self.leaves]

    def index(self, node_id: str) -> int:
        try:
            return self.ids.index(node_id)
        except ValueError:
            raise KeyError(node_id) from None

    def node_expectation(self, leaf_measure: np.ndarray, leaf_values: np.ndarray) -> np.ndarray:
        """Conditional expectations ``E[v | node]`` for every node.

        ``leaf_values`` may carry trailing dimensions.  Nodes of zero measure
        get the plain average over their leaves (never used downstream).
        """
        q = np.asarray(leaf_measure, dtype=float)
        v = np.asarray(leaf_values, dtype=float)
        out = np.empty((self.n_nodes,) + v.shape[1:])
        for i in range(self.n_nodes):
            a, b = self.leaf_range[i]
            mass = q[a:b].sum()
            if mass > 0:
                out[i] = np.tensordot(q[a:b], v[a:b], axes=1) / mass
            else:
                out[i] = v[a:b].mean(axis=0)
        return out


@dataclass(frozen=True, eq=False)
class Claim:
    """European claim paying ``payoffs[k]`` at the ``k``-th leaf."""

    label: str
    payoffs: np.ndarray

    def __post_init__(self):
        f = np.array(self.payoffs, dtype=float)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ModelValidationError(f"claim {self.label!r}: payoffs must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "payoffs", f)


@dataclass(frozen=True, eq=False)
class Measure:
    """Probability measure on the leaves of a tree."""

    leaf_probabilities: np.ndarray

    def __post_init__(self):
        q = np.array(self.leaf_probabilities, dtype=float)
        if q.ndim != 1 or np.any(q < 0) or abs(q.sum() - 1.0) > PROB_TOL * max(1, len(q)):
            raise ValueError("leaf probabilities must be nonnegative and sum to 1")
        q.setflags(write=False)
        object.__setattr__(self, "leaf_probabilities", q)

    @property
    def is_equivalent(self) -> bool:
        return bool(np.all(self.leaf_probabilities > 0))

    def expectation(self, leaf_values) -> np.ndarray | float:
        return np.tensordot(self.leaf_probabilities, np.asarray(leaf_values, float), axes=1)

    def conditional(self, tree: EventTree) -> np.ndarray:
        """Per-node probability given the parent (1 at the root, 0 below null nodes)."""
        q = self.leaf_probabilities
        mass = np.array([q[a:b].sum() for a, b in tree.leaf_range])
        out = np.ones(tree.n_nodes)
        for i in range(1, tree.n_nodes):
            pm = mass[tree.parent[i]]
            out[i] = mass[i] / pm if pm > 0 else 0.0
        return out

    def density(self, tree: EventTree) -> np.ndarray:
        return self.leaf_probabilities / tree.leaf_probabilities


@dataclass(frozen=True, eq=False)
class Strategy:
    """Asset holdings chosen at each internal node (rows follow ``tree.internal``)."""

    holdings: np.ndarray


@dataclass(frozen=True, eq=False)
class WealthProcess:
    initial_capital: float
    strategy: Strategy
    values: np.ndarray

    def terminal(self, tree: EventTree) -> np.ndarray:
        return self.values[tree.leaves]


@dataclass(frozen=True, eq=False)
class MarketModel:
    tree: EventTree
    asset_names: tuple[str, ...]
    prices: np.ndarray
    claims: tuple[Claim, ...] = field(default=())

    def __post_init__(self):
        s = np.array(self.prices, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape != (self.tree.n_nodes, len(self.asset_names)):
            raise ModelValidationError(
                f"prices have shape {s.shape}, expected "
                f"({self.tree.n_nodes}, {len(self.asset_names)})")
        for i in range(self.tree.n_nodes):
            if not np.all(np.isfinite(s[i])) or np.any(s[i] <= 0):
                raise ModelValidationError("prices must be finite and positive", self.tree.ids[i])
        s.setflags(write=False)
        object.__setattr__(self, "prices", s)
        for c in self.claims:
            if c.payoffs.shape != (self.tree.n_leaves,):
                raise ModelValidationError(f"claim {c.label!r} has wrong number of payoffs")

    @property
    def n_assets(self) -> int:
        return len(self.asset_names)

    @cached_property
    def internal_pos(self) -> dict[int, int]:
        return {int(n): k for k, n in enumerate(self.tree.internal)}

    def increments(self, node: int) -> np.ndarray:
        """Price increments ``S_child - S_node`` for each child (rows)."""
        kids = list(self.tree.children[node])
        return self.prices[kids] - self.prices[node]

    @cached_property
    def gains_matrix(self) -> np.ndarray:
        tree, d = self.tree, self.n_assets
        G = np.zeros((tree.n_leaves, len(tree.internal) * d))
        for n in tree.internal:
            k = self.internal_pos[int(n)]
            for c in tree.children[n]:
                a, b = tree.leaf_range[c]
                G[a:b, k * d:(k + 1) * d] = self.prices[c] - self.prices[n]
        G.setflags(write=False)
        return G

    def wealth_process(self, x: float, holdings: np.ndarray) -> WealthProcess:
        """Wealth of the self-financing strategy ``holdings`` started at ``x``."""
        H = np.asarray(holdings, dtype=float).reshape(len(self.tree.internal), self.n_assets)
        vals = np.empty(self.tree.n_nodes)
        vals[0] = x
        for i in range(1, self.tree.n_nodes):
            p = self.tree.parent[i]
            vals[i] = vals[p] + H[self.internal_pos[p]] @ (self.prices[i] - self.prices[p])
        return WealthProcess(float(x), Strategy(H), vals)

    def self_financing_error(self, wp: WealthProcess) -> float:
        """Largest violation of ``X_child = X_node + H_node . dS`` over all edges."""
        err = 0.0
        H = wp.strategy.holdings
        for i in range(1, self.tree.n_nodes):
            p = self.tree.parent[i]
            gain = H[self.internal_pos[p]] @ (self.prices[i] - self.prices[p])
            err = max(err, abs(wp.values[i] - wp.values[p] - gain))
        return err

    def claim(self, label: str) -> Claim:
        for c in self.claims:
            if c.label == label:
                return c
        raise KeyError(label)

    def martingale_error(self, leaf_measure: np.ndarray) -> float:
        """Sup-norm of ``E_Q[dS | node]`` weighted by node mass (``G.T q``)."""
        return float(np.max(np.abs(self.gains_matrix.T @ leaf_measure), initial=0.0))

    def is_martingale_measure(self, leaf_measure: np.ndarray, tol: float = MARTINGALE_TOL) -> bool:
        q = np.asarray(leaf_measure, float)
        return bool(np.all(q >= -tol) and abs(q.sum() - 1) <= tol
                    and self.martingale_error(q) <= tol)

    def to_dict(self) -> dict:
        tree = self.tree
        nodes = []
        for i in range(tree.n_nodes):
            nodes.append({
                "id": tree.ids[i],
                "parent": None if i == 0 else tree.ids[tree.parent[i]],
                "probability": float(tree.cond_prob[i]),
                "prices": [float(v) for v in self.prices[i]],
            })
        leaf_ids = [tree.ids[i] for i in tree.leaves]
        claims = [{"label": c.label,
                   "payoffs": {lid: float(v) for lid, v in zip(leaf_ids, c.payoffs)}}
                  for c in self.claims]
        return {"periods": tree.periods, "assets": list(self.asset_names),
                "nodes": nodes, "claims": claims}


# ---------------------------------------------------------------------------
# construction / IO
# ---------------------------------------------------------------------------

def model_from_dict(doc: Mapping[str, Any]) -> MarketModel:
    """Build and validate a model from the JSON document layout."""
    if not isinstance(doc, Mapping):
        raise ModelParseError("model document must be a JSON object")
    for key in ("periods", "assets", "nodes"):
        if key not in doc:
            raise ModelParseError(f"missing field {key!r}")
    assets = doc["assets"]
    if not isinstance(assets, list) or not assets or not all(isinstance(a, str) for a in assets):
        raise ModelParseError("'assets' must be a non-empty list of names")
    periods = doc["periods"]
    if isinstance(periods, bool) or not isinstance(periods, int) or periods < 1:
        raise ModelParseError("'periods' must be a positive integer")
    raw_nodes = doc["nodes"]
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ModelParseError("'nodes' must be a non-empty list")

    by_id: dict[str, dict] = {}
    order: list[str] = []
    for k, raw in enumerate(raw_nodes):
        if not isinstance(raw, Mapping) or "id" not in raw or "prices" not in raw:
            raise ModelParseError(f"node #{k}: needs 'id' and 'prices'")
        nid = str(raw["id"])
        if nid in by_id:
            raise ModelValidationError("duplicate node id", nid)
        prices = raw["prices"]
        if not isinstance(prices, list) or len(prices) != len(assets):
            raise ModelParseError(f"node {nid!r}: 'prices' must list {len(assets)} values")
        parent = raw.get("parent")
        prob = raw.get("probability", 1.0 if parent is None else None)
        if prob is None:
            raise ModelParseError(f"node {nid!r}: missing 'probability'")
        if "bond" in raw and _number(raw["bond"], f"node {nid!r} bond") != 1.0:
            raise ModelValidationError("bond must be identically 1 (discounted units)", nid)
        by_id[nid] = {
            "parent": None if parent is None else str(parent),
            "prob": _number(prob, f"node {nid!r} probability"),
            "prices": [_number(v, f"node {nid!r} price") for v in prices],
        }
        order.append(nid)

    roots = [nid for nid in order if by_id[nid]["parent"] is None]
    if len(roots) != 1:
        raise ModelValidationError(f"expected exactly one root, found {len(roots)}")
    kids: dict[str, list[str]] = {nid: [] for nid in order}
    for nid in order:
        par = by_id[nid]["parent"]
        if par is None:
            continue
        if par not in by_id:
            raise ModelValidationError(f"unknown parent {par!r}", nid)
        kids[par].append(nid)

    preorder: list[str] = []
    stack = [roots[0]]
    while stack:
        nid = stack.pop()
        preorder.append(nid)
        stack.extend(reversed(kids[nid]))
    if len(preorder) != len(order):
        raise ModelValidationError("nodes unreachable from the root (cycle?)")
    pos = {nid: i for i, nid in enumerate(preorder)}

    depth = {roots[0]: 0}
    for nid in preorder[1:]:
        depth[nid] = depth[by_id[nid]["parent"]] + 1
    for nid in preorder:
        if not kids[nid] and depth[nid] != periods:
            raise ModelValidationError(f"leaf at depth {depth[nid]}, expected {periods}", nid)
        if by_id[nid]["prob"] <= 0 or by_id[nid]["prob"] > 1:
            raise ModelValidationError("probability must lie in (0, 1]", nid)
    for nid in preorder:
        if kids[nid]:
            total = sum(by_id[c]["prob"] for c in kids[nid])
            if abs(total - 1.0) > PROB_TOL:
                raise ModelValidationError(f"child probabilities sum to {total!r}, not 1", nid)

    tree = EventTree(
        ids=tuple(preorder),
        parent=np.array([-1 if by_id[n]["parent"] is None else pos[by_id[n]["parent"]]
                         for n in preorder]),
        cond_prob=np.array([1.0 if by_id[n]["parent"] is None else by_id[n]["prob"]
                            for n in preorder]),
    )
    prices = np.array([by_id[n]["prices"] for n in preorder])
    leaf_ids = [tree.ids[i] for i in tree.leaves]

    claims = []
    for k, raw in enumerate(doc.get("claims", []) or []):
        if not isinstance(raw, Mapping) or "payoffs" not in raw:
            raise ModelParseError(f"claim #{k}: needs 'payoffs'")
        label = str(raw.get("label", f"claim{k}"))
        pay = raw["payoffs"]
        if isinstance(pay, Mapping):
            missing = set(leaf_ids) - set(map(str, pay))
            extra = set(map(str, pay)) - set(leaf_ids)
            if missing or extra:
                raise ModelValidationError(
                    f"claim {label!r}: payoffs must cover exactly the leaves "
                    f"(missing {sorted(missing)}, unknown {sorted(extra)})")
            vals = [_number(pay[lid], f"claim {label!r} payoff") for lid in leaf_ids]
        else:
            raise ModelParseError(f"claim {label!r}: 'payoffs' must map leaf id to value")
        claims.append(Claim(label, np.array(vals)))

    return MarketModel(tree, tuple(assets), prices, tuple(claims))


def load_model(path: str | Path) -> MarketModel:
    """Read a model file; raises ``ModelParseError`` / ``ModelValidationError``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc)


def build_model(parent: Sequence[int], cond_prob: Sequence[float], prices,
                claims: Sequence[Claim] = (), asset_names: Sequence[str] | None = None,
                ids: Sequence[str] | None = None) -> MarketModel:
    """Programmatic constructor; nodes must already be in preorder."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    ids = tuple(ids) if ids is not None else tuple(f"n{i}" for i in range(len(parent)))
    names = tuple(asset_names) if asset_names else tuple(f"S{k + 1}" for k in range(prices.shape[1]))
    tree = EventTree(ids, np.asarray(parent), np.asarray(cond_prob, dtype=float))
    return MarketModel(tree, names, prices, tuple(claims))


# ---------------------------------------------------------------------------
# linear programming: no-arbitrage, price bounds, replication
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArbitrageCheck:
    arbitrage_free: bool
    witness: Measure | None
    min_probability: float
    strategy: np.ndarray | None = None


def _emm_equalities(model: MarketModel) -> tuple[np.ndarray, np.ndarray]:
    G = model.gains_matrix
    A = np.vstack([G.T, np.ones((1, G.shape[0]))])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    return A, b


def _polish(A: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Least-norm projection of ``q`` back onto ``A q = b``."""
    r = A @ q - b
    return q - np.linalg.lstsq(A, r, rcond=None)[0]


def arbitrage_strategy(model: MarketModel) -> np.ndarray | None:
    """Holdings with nonnegative gains everywhere and positive expected gain, if any."""
    G = model.gains_matrix
    n = G.shape[1]
    res = linprog(-G.sum(axis=0), A_ub=-G, b_ub=np.zeros(G.shape[0]),
                  bounds=[(-1, 1)] * n, method="highs", options=_HIGHS_OPTIONS)
    if res.status != 0 or -res.fun <= 1e-9:
        return None
    return res.x.reshape(len(model.tree.internal), model.n_assets)


def check_no_arbitrage(model: MarketModel) -> ArbitrageCheck:
    """Look for a strictly positive martingale measure.

    Solves ``max t`` subject to ``G.T q = 0``, ``sum q = 1``, ``q >= t``.  A
    best margin below ``INTERIOR_MARGIN`` is treated as arbitrage.
    """
    A, b = _emm_equalities(model)
    n = model.tree.n_leaves
    # variables (q, t)
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b,
                  bounds=[(0, None)] * n + [(None, 1.0)], method="highs",
                  options=_HIGHS_OPTIONS)
    if res.status != 0:
        logger.debug("interior EMM LP status %s: %s", res.status, res.message)
        return ArbitrageCheck(False, None, 0.0, arbitrage_strategy(model))
    q = _polish(A, b, res.x[:n])
    margin = float(q.min())
    if margin < INTERIOR_MARGIN:
        return ArbitrageCheck(False, None, margin, arbitrage_strategy(model))
    q = q / q.sum()
    return ArbitrageCheck(True, Measure(q), margin)


def _require_no_arbitrage(model: MarketModel) -> None:
    if not check_no_arbitrage(model).arbitrage_free:
        raise ArbitrageError("model admits arbitrage")


def superreplication_bounds(model: MarketModel, payoff) -> tuple[float, float]:
    """``(inf, sup)`` of ``E_Q[f]`` over the closed martingale-measure polytope."""
    _require_no_arbitrage(model)
    f = np.asarray(getattr(payoff, "payoffs", payoff), dtype=float)
    A, b = _emm_equalities(model)
    bounds = [(0, None)] * len(f)
    lo = linprog(f, A_eq=A, b_eq=b, bounds=bounds, method="highs", options=_HIGHS_OPTIONS)
    hi = linprog(-f, A_eq=A, b_eq=b, bounds=bounds, method="highs", options=_HIGHS_OPTIONS)
    if lo.status != 0 or hi.status != 0:
        raise RuntimeError(f"price-bound LP failed: {lo.message} / {hi.message}")
    return float(lo.fun), float(-hi.fun)


def replicate(model: MarketModel, payoff) -> tuple[WealthProcess, float]:
    """Backward induction hedge of a terminal payoff.

    Returns the wealth process and the largest per-node least-squares
    residual; the residual is ~0 exactly when the payoff is attainable.
    """
    tree = model.tree
    f = np.asarray(getattr(payoff, "payoffs", payoff), dtype=float)
    vals = np.zeros(tree.n_nodes)
    vals[tree.leaves] = f
    H = np.zeros((len(tree.internal), model.n_assets))
    worst = 0.0
    for n in reversed(tree.internal):
        kids = list(tree.children[n])
        A = np.hstack([np.ones((len(kids), 1)), model.increments(n)])
        sol, *_ = np.linalg.lstsq(A, vals[kids], rcond=None)
        worst = max(worst, float(np.max(np.abs(A @ sol - vals[kids]))))
        vals[n] = sol[0]
        H[model.internal_pos[int(n)]] = sol[1:]
    wp = model.wealth_process(vals[0], H)
    return wp, worst


def is_replicable(model: MarketModel, payoff) -> tuple[bool, WealthProcess | None]:
    """Replicable iff the price bounds coincide to ``REPLICATION_TOL``."""
    lo, hi = superreplication_bounds(model, payoff)
    if hi - lo > REPLICATION_TOL:
        return False, None
    wp, _ = replicate(model, payoff)
    return True, wp


# ---------------------------------------------------------------------------
# vertices of the martingale-measure polytope
# ---------------------------------------------------------------------------

def node_kernel_vertices(increments: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    """Extreme one-step martingale kernels for a node with the given increments.

    A vertex is supported on a set of children whose columns ``(1, dS_j)``
    are linearly independent, so the support has at most ``d + 1`` elements.
    """
    k, d = increments.shape
    cols = np.hstack([np.ones((k, 1)), increments]).T  # (d+1, k)
    rhs = np.zeros(d + 1)
    rhs[0] = 1.0
    found: list[np.ndarray] = []
    for size in range(1, min(k, d + 1) + 1):
        for support in itertools.combinations(range(k), size):
            sub = cols[:, support]
            if np.linalg.matrix_rank(sub, tol=1e-10) < size:
                continue
            w, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
            if np.max(np.abs(sub @ w - rhs)) > 1e-10 or np.any(w <= tol):
                continue
            pi = np.zeros(k)
            pi[list(support)] = w
            if not any(np.allclose(pi, v, atol=1e-12) for v in found):
                found.append(pi)
    return found


class VertexLimitExceeded(RuntimeError):
    pass


def emm_vertices(model: MarketModel, limit: int = 20000) -> list[np.ndarray]:
    """Extreme points of the closed martingale-measure polytope, as leaf measures.

    Extreme martingale measures on a tree are those whose one-step kernel is
    extreme at every node they charge, so vertices are assembled from the
    per-node kernel vertices bottom-up.
    """
    tree = model.tree

    def build(node: int) -> list[np.ndarray]:
        a, b = tree.leaf_range[node]
        kids = tree.children[node]
        if not kids:
            return [np.ones(1)]
        sub = [build(c) for c in kids]
        out: list[np.ndarray] = []
        for pi in node_kernel_vertices(model.increments(node)):
            charged = [j for j in range(len(kids)) if pi[j] > 0]
            for combo in itertools.product(*(sub[j] for j in charged)):
                q = np.zeros(b - a)
                for j, part in zip(charged, combo):
                    ca, cb = tree.leaf_range[kids[j]]
                    q[ca - a:cb - a] = pi[j] * part
                out.append(q)
                if len(out) > limit:
                    raise VertexLimitExceeded(f"more than {limit} vertices")
        return out

    return build(0)
