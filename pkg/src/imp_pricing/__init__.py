"""Utility-based pricing of non-traded claims in finite incomplete markets."""
from .market import (ArbitrageError, Claim, EventTree, MarketModel, Measure, ModelError,
                     ModelParseError, ModelValidationError, Strategy, WealthProcess,
                     build_model, check_no_arbitrage, emm_vertices, is_replicable, load_model,
                     model_from_dict, replicate, superreplication_bounds)
from .utility import LogUtility, PowerUtility, UtilityFunction, conjugate, risk_aversion, utility_from_spec
from .solver import SolveResult, solve_dual, solve_primal, value_derivatives
from .pricing import (RiskToleranceResult, SensitivityReport, davis_price, kw_decomposition,
                      linearized_equilibrium, risk_tolerance, sensitivity, taylor_check)

__version__ = "0.1.0"
