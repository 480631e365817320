"""Utility functions on (0, inf) with constant relative risk aversion.

Two kinds are provided: power ``U(x) = x**g / g`` (``g < 1``, ``g != 0``) and
``U(x) = log(x)``.  Each exposes ``U``, its first two derivatives, the inverse
of ``U'`` and the convex conjugate ``V(y) = sup_x {U(x) - x y}`` with
derivatives.  Other utilities can be plugged in by subclassing
:class:`UtilityFunction`; the numerical conjugate fallback then applies.
"""
from __future__ import annotations

import math
from typing import Any, Mapping

import numpy as np
from scipy.optimize import brentq


def _positive(z, name: str):
    arr = np.asarray(z, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"{name} must be strictly positive")
    return arr


class UtilityFunction:
    """Interface; subclasses implement ``U``, ``dU`` and ``d2U``."""

    kind = "custom"

    def U(self, x):
        raise NotImplementedError

    def dU(self, x):
        raise NotImplementedError

    def d2U(self, x):
        raise NotImplementedError

    def risk_aversion(self, x):
        """Relative risk aversion ``-x U''(x) / U'(x)``."""
        x = _positive(x, "x")
        return -x * self.d2U(x) / self.dU(x)

    def risk_tolerance(self, x):
        """Absolute risk tolerance ``-U'(x) / U''(x)``."""
        x = _positive(x, "x")
        return -self.dU(x) / self.d2U(x)

    def inverse_marginal(self, y):
        y = _positive(y, "y")
        flat = [brentq(lambda s, t=t: math.log(self.dU(math.exp(s))) - math.log(t), -200, 200,
                       xtol=1e-15) for t in np.ravel(y)]
        return np.exp(np.reshape(flat, np.shape(y)))

    def V(self, y):
        x = self.inverse_marginal(y)
        return self.U(x) - x * y

    def dV(self, y):
        return -self.inverse_marginal(y)

    def d2V(self, y):
        return -1.0 / self.d2U(self.inverse_marginal(y))

    def spec(self) -> dict:
        return {"kind": self.kind}


class PowerUtility(UtilityFunction):
    kind = "power"

    def __init__(self, gamma: float):
        gamma = float(gamma)
        if not gamma < 1 or gamma == 0 or not math.isfinite(gamma):
            raise ValueError(f"power utility needs gamma < 1, gamma != 0 (got {gamma})")
        self.gamma = gamma

    def __repr__(self):
        return f"PowerUtility(gamma={self.gamma!r})"

    def __eq__(self, other):
        return isinstance(other, PowerUtility) and other.gamma == self.gamma

    def __hash__(self):
        return hash(("power", self.gamma))

    def U(self, x):
        return np.power(x, self.gamma) / self.gamma

    def dU(self, x):
        return np.power(x, self.gamma - 1.0)

    def d2U(self, x):
        return (self.gamma - 1.0) * np.power(x, self.gamma - 2.0)

    def inverse_marginal(self, y):
        return np.power(_positive(y, "y"), 1.0 / (self.gamma - 1.0))

    def V(self, y):
        g = self.gamma
        return (1.0 - g) / g * np.power(_positive(y, "y"), g / (g - 1.0))

    def dV(self, y):
        return -self.inverse_marginal(y)

    def d2V(self, y):
        g = self.gamma
        return np.power(_positive(y, "y"), (2.0 - g) / (g - 1.0)) / (1.0 - g)

    def spec(self) -> dict:
        return {"kind": "power", "gamma": self.gamma}


class LogUtility(UtilityFunction):
    kind = "log"

    def __repr__(self):
        return "LogUtility()"

    def __eq__(self, other):
        return isinstance(other, LogUtility)

    def __hash__(self):
        return hash("log")

    def U(self, x):
        return np.log(x)

    def dU(self, x):
        return 1.0 / np.asarray(x, dtype=float)

    def d2U(self, x):
        return -1.0 / np.square(np.asarray(x, dtype=float))

    def inverse_marginal(self, y):
        return 1.0 / _positive(y, "y")

    def V(self, y):
        return -np.log(_positive(y, "y")) - 1.0

    def dV(self, y):
        return -1.0 / _positive(y, "y")

    def d2V(self, y):
        return 1.0 / np.square(_positive(y, "y"))


def utility_from_spec(spec: Mapping[str, Any] | str) -> UtilityFunction:
    """Parse ``{"kind": "power", "gamma": 0.5}`` or ``{"kind": "log"}`` (dict or JSON text)."""
    if isinstance(spec, str):
        import json
        spec = json.loads(spec)
    if not isinstance(spec, Mapping) or "kind" not in spec:
        raise ValueError("utility spec needs a 'kind'")
    kind = spec["kind"]
    if kind == "log":
        return LogUtility()
    if kind == "power":
        if "gamma" not in spec:
            raise ValueError("power utility needs 'gamma'")
        return PowerUtility(spec["gamma"])
    raise ValueError(f"unsupported utility kind {kind!r}")


def risk_aversion(u: UtilityFunction, x: float) -> float:
    if not x > 0:
        raise ValueError("x must be positive")
    return float(u.risk_aversion(x))


def conjugate(u: UtilityFunction, y: float) -> tuple[float, float]:
    """``(V(y), V'(y))`` with ``V'(y) = -(U')^{-1}(y)``."""
    if not y > 0:
        raise ValueError("y must be positive")
    return float(u.V(y)), float(u.dV(y))
