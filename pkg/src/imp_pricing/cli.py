"""Command-line interface.

Subcommands: validate, price, sensitivity, equilibrium, dominance, report.
Every command builds a JSON document first; the optional table output is
rendered from that document.

Exit codes:
    0  success
    1  unreadable or invalid model / bad arguments
    2  model admits arbitrage
    3  numerical failure (solver did not converge, infeasible position, ...)
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from typing import Any, Sequence

import numpy as np

from . import dominance, oracle, pricing
from .market import (MarketModel, ModelError, check_no_arbitrage, is_replicable, load_model)
from .solver import SolverError, solve_primal
from .utility import utility_from_spec

logger = logging.getLogger("imp_pricing")

EXIT_OK, EXIT_INPUT, EXIT_ARBITRAGE, EXIT_NUMERIC = 0, 1, 2, 3
FORMULA, ORACLE = "formula", "oracle"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def canonical(obj: Any) -> Any:
    """Plain JSON types with floats fixed to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return str(v)
        v = float("%.12g" % v)
        return 0.0 if v == 0 else v
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(canonical(doc), indent=2) + "\n"


def tagged(value, method: str) -> dict:
    return {"value": value, "method": method}


def model_digest(model: MarketModel) -> str:
    blob = json.dumps(canonical(model.to_dict()), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def render_table(doc: dict, indent: int = 0) -> str:
    lines = []
    pad = "  " * indent
    for key, val in doc.items():
        if isinstance(val, dict) and set(val) == {"value", "method"}:
            lines.append(f"{pad}{key:<28} {_short(val['value'])}  [{val['method']}]")
        elif isinstance(val, dict):
            lines.append(f"{pad}{key}:")
            lines.append(render_table(val, indent + 1))
        else:
            lines.append(f"{pad}{key:<28} {_short(val)}")
    return "\n".join(line for line in lines if line)


def _short(v) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    if isinstance(v, float):
        return "%.8g" % v
    return str(v)


@contextmanager
def _timed(timings: dict, key: str):
    t0 = time.perf_counter()
    yield
    timings[key] = time.perf_counter() - t0


# ---------------------------------------------------------------------------
# pipeline pieces shared by commands
# ---------------------------------------------------------------------------

def _load(path: str, require_na: bool = True) -> MarketModel:
    try:
        model = load_model(path)
    except ModelError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    if require_na and not check_no_arbitrage(model).arbitrage_free:
        raise CliError("model admits arbitrage (run `validate` for a witness)", EXIT_ARBITRAGE)
    return model


def _utility(text: str):
    try:
        return utility_from_spec(text)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad --utility: {exc}", EXIT_INPUT) from exc


def _header(command: str, model: MarketModel, u, x: float) -> dict:
    return {
        "command": command,
        "model_digest": model_digest(model),
        "utility": u.spec(),
        "x": x,
        "claims": [c.label for c in model.claims],
        "leaves": [model.tree.ids[i] for i in model.tree.leaves],
    }


def _price_section(model, u, x) -> dict:
    solve = solve_primal(model, u, x)
    prices = pricing.davis_price(model, u, x, solve=solve)
    return {
        "davis_price": tagged(prices, FORMULA),
        "pricing_measure": tagged(solve.pricing_measure.leaf_probabilities, FORMULA),
        "optimal_terminal_wealth": tagged(solve.terminal, FORMULA),
        "value": tagged(solve.value, FORMULA),
        "marginal_utility": tagged(solve.y, FORMULA),
    }


def _sensitivity_section(model, u, x, method: str, cfg: oracle.OracleConfig, seed: int,
                         timings: dict) -> tuple[dict, pricing.SensitivityReport | None, np.ndarray | None]:
    out: dict = {}
    report = None
    oracle_D = None
    if method in (FORMULA, "both"):
        with _timed(timings, "formula"):
            report = pricing.sensitivity(model, u, x, oracle_config=cfg)
        rt = report.risk_tolerance
        out["risk_tolerance"] = {
            "exists": rt.exists,
            "R0": tagged(rt.R0, FORMULA),
            "replication_residual": tagged(rt.residual, FORMULA),
            "R_over_R0": tagged(None if not rt.exists else rt.R_T / rt.R0, FORMULA),
            "R0_identity_gap": tagged(
                None if not rt.exists else abs(rt.R0 + report.u_prime / report.u_second) / rt.R0,
                FORMULA),
        }
        out["relative_risk_aversion"] = tagged(-x * report.u_second / report.u_prime, FORMULA)
        if report.fallback:
            out["formula"] = {"available": False,
                              "reason": "risk-tolerance wealth process does not exist"}
            oracle_D = report.D
            out["oracle"] = {"p_prime": tagged(report.p_prime, ORACLE),
                             "D": tagged(report.D, ORACLE)}
        else:
            out["formula"] = {
                "available": True,
                "davis_price": tagged(report.davis_price, FORMULA),
                "p_prime": tagged(report.p_prime, FORMULA),
                "D": tagged(report.D, FORMULA),
                "N_T": tagged(report.residual_terminal, FORMULA),
                "M_T": tagged(report.hedge_terminal, FORMULA),
                "symmetry_gap": tagged(report.symmetry_gap, FORMULA),
                "min_eigenvalue": tagged(report.min_eigenvalue, FORMULA),
                "max_eigenvalue": tagged(report.max_eigenvalue, FORMULA),
            }
    if method in (ORACLE, "both") and oracle_D is None:
        with _timed(timings, "oracle"):
            p_prime, oracle_D = oracle.sensitivity_fd(model, u, x, cfg=cfg)
            prices = oracle.marginal_price(model, u, x, cfg=cfg)
            indiff = oracle.check_indifference(model, u, x, np.zeros(len(model.claims)), prices,
                                               seed=seed) if model.claims else True
        out["oracle"] = {
            "marginal_price": tagged(prices, ORACLE),
            "p_prime": tagged(p_prime, ORACLE),
            "D": tagged(oracle_D, ORACLE),
            "indifference_check": indiff,
            "fd_step": cfg.q_step,
        }
    if method == "both" and report is not None and not report.fallback:
        delta = float(np.max(np.abs(report.D - oracle_D), initial=0.0))
        tol = 1e-5 * max(1.0, float(np.max(np.abs(report.D), initial=0.0)))
        out["oracle_delta"] = {"D_max_abs": tagged(delta, "formula-vs-oracle"),
                               "tolerance": tol, "pass": delta <= tol}
    return out, report, oracle_D


def _write_d_csv(path: str, labels, D_formula, D_oracle) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["claim_i", "claim_j", "D_formula", "D_oracle"])
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                row = [a, b]
                for D in (D_formula, D_oracle):
                    row.append("" if D is None else "%.12g" % D[i, j])
                w.writerow(row)


def _write_curve_csv(path: str, model, u, x, report, cfg, n_points: int = 11) -> None:
    """Linear vs. finite-difference price correction along each claim axis."""
    labels = [c.label for c in model.claims]
    m = len(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["claim", "q", "linear_correction", "oracle_correction"])
        for i, lab in enumerate(labels):
            qmax = 0.1 * x / max(float(np.max(np.abs(model.claims[i].payoffs))), 1e-12)
            for qi in np.linspace(-qmax, qmax, n_points):
                q = np.zeros(m)
                q[i] = qi
                lin = float(report.D[i] @ q)
                exact = float(oracle.marginal_price(model, u, x, q, cfg=cfg)[i] - report.davis_price[i])
                w.writerow([lab, "%.12g" % qi, "%.12g" % lin, "%.12g" % exact])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> tuple[dict, int]:
    try:
        model = load_model(args.model)
    except ModelError as exc:
        return {"command": "validate", "valid": False, "error": str(exc)}, EXIT_INPUT
    check = check_no_arbitrage(model)
    doc = {
        "command": "validate",
        "valid": True,
        "model_digest": model_digest(model),
        "periods": model.tree.periods,
        "nodes": model.tree.n_nodes,
        "assets": list(model.asset_names),
        "claims": [c.label for c in model.claims],
        "arbitrage_free": check.arbitrage_free,
    }
    if check.arbitrage_free:
        doc["witness_measure"] = tagged(check.witness.leaf_probabilities, FORMULA)
        doc["replicable"] = {c.label: is_replicable(model, c)[0] for c in model.claims}
        return doc, EXIT_OK
    if check.strategy is not None:
        ids = [model.tree.ids[n] for n in model.tree.internal]
        doc["witness_strategy"] = {nid: h for nid, h in zip(ids, check.strategy)}
        doc["witness_gains"] = model.gains_matrix @ check.strategy.ravel()
    return doc, EXIT_ARBITRAGE


def cmd_price(args) -> tuple[dict, int]:
    model = _load(args.model)
    u = _utility(args.utility)
    doc = _header("price", model, u, args.x)
    doc.update(_price_section(model, u, args.x))
    return doc, EXIT_OK


def cmd_sensitivity(args) -> tuple[dict, int]:
    model = _load(args.model)
    u = _utility(args.utility)
    cfg = oracle.OracleConfig(x_step=args.fd_step, q_step=args.fd_step)
    timings: dict = {}
    doc = _header("sensitivity", model, u, args.x)
    doc["method"] = args.method
    doc["seed"] = args.seed
    doc.update(_price_section(model, u, args.x))
    section, report, oracle_D = _sensitivity_section(model, u, args.x, args.method, cfg,
                                                     args.seed, timings)
    doc.update(section)
    if args.csv:
        labels = [c.label for c in model.claims]
        formula_D = report.D if report is not None and not report.fallback else None
        _write_d_csv(args.csv, labels, formula_D, oracle_D)
    if args.timings:
        doc["timings"] = timings
    return doc, EXIT_OK


def cmd_equilibrium(args) -> tuple[dict, int]:
    model = _load(args.model)
    u = _utility(args.utility)
    if len(args.p_trade) != len(model.claims):
        raise CliError(f"need {len(model.claims)} --p-trade values", EXIT_INPUT)
    report = pricing.sensitivity(model, u, args.x)
    eq = pricing.linearized_equilibrium(report, args.x, args.p_trade)
    method = ORACLE if report.fallback else FORMULA
    doc = _header("equilibrium", model, u, args.x)
    doc.update({
        "p_trade": args.p_trade,
        "davis_price": tagged(report.davis_price, FORMULA),
        "D": tagged(report.D, method),
        "q": tagged(eq.q, method),
        "least_norm": eq.least_norm,
        "residual": tagged(eq.residual, method),
    })
    if eq.least_norm:
        doc["warning"] = "sensitivity system is singular; least-norm position returned"
    if eq.unbounded_direction is not None:
        doc["unbounded_direction"] = tagged(eq.unbounded_direction, method)
    return doc, EXIT_OK


def _dominance_section(model, u, x, seed: int) -> dict:
    solve = solve_primal(model, u, x)
    rep = dominance.check_universal_minimal(model, solve.pricing_measure, seed=seed)
    cross = dominance.cross_utility_consistency(model, x)
    out = {
        "candidate": tagged(solve.pricing_measure.leaf_probabilities, FORMULA),
        "verdict": rep.verdict,
        "vertices": rep.n_vertices,
        "interior_samples": rep.n_samples,
        "notes": list(rep.notes),
        "cross_utility": {"consistent": cross.consistent,
                          "max_gap": tagged(cross.max_gap, FORMULA),
                          "measures": {k: tagged(v, FORMULA) for k, v in cross.measures.items()}},
    }
    if rep.violating_measure is not None:
        out["violation"] = {"t": rep.violating_t,
                            "measure": tagged(rep.violating_measure.leaf_probabilities, FORMULA)}
    return out


def cmd_dominance(args) -> tuple[dict, int]:
    model = _load(args.model)
    u = _utility(args.utility)
    doc = _header("dominance", model, u, args.x)
    doc["seed"] = args.seed
    doc.update(_dominance_section(model, u, args.x, args.seed))
    return doc, EXIT_OK


def cmd_report(args) -> tuple[dict, int]:
    model = _load(args.model)
    u = _utility(args.utility)
    cfg = oracle.OracleConfig(x_step=args.fd_step, q_step=args.fd_step)
    timings: dict = {}
    doc = _header("report", model, u, args.x)
    doc["seed"] = args.seed
    with _timed(timings, "price"):
        doc.update(_price_section(model, u, args.x))
    section, report, oracle_D = _sensitivity_section(model, u, args.x, args.method, cfg,
                                                     args.seed, timings)
    doc.update(section)
    if report is not None:
        rt = report.risk_tolerance
        doc["ingredients"] = {
            "pricing_measure": doc["pricing_measure"],
            "relative_risk_aversion": tagged(-args.x * report.u_second / report.u_prime, FORMULA),
            "extra_dollar_investment": tagged(None if not rt.exists else rt.R_T / rt.R0, FORMULA),
        }
        if rt.exists:
            with _timed(timings, "taylor"):
                tay = pricing.taylor_check(model, u, args.x, seed=args.seed, rt=rt)
            doc["taylor_check"] = {
                "steps": list(tay.steps),
                "gaps": tagged(list(tay.gaps), FORMULA),
                "scaling_ok": tay.scaling_ok,
                "quad_coefficient": tagged(tay.quad_coefficient, FORMULA),
                "min_competitor_coefficient": tagged(min(tay.competitor_coefficients), FORMULA),
                "minimum_ok": tay.minimum_ok,
                "competitors_ok": tay.competitors_ok,
            }
    with _timed(timings, "dominance"):
        doc["dominance"] = _dominance_section(model, u, args.x, args.seed)
    if args.curve_csv and report is not None and model.claims:
        _write_curve_csv(args.curve_csv, model, u, args.x, report, cfg)
    if args.timings:
        doc["timings"] = timings
    return doc, EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "price": cmd_price,
    "sensitivity": cmd_sensitivity,
    "equilibrium": cmd_equilibrium,
    "dominance": cmd_dominance,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, metavar="PATH", help="model JSON file")
    common.add_argument("--out", metavar="PATH", help="write JSON here instead of stdout")
    common.add_argument("--format", choices=("json", "table"), default="json")

    econ = argparse.ArgumentParser(add_help=False)
    econ.add_argument("--utility", default='{"kind": "log"}', metavar="JSON",
                      help='e.g. \'{"kind": "power", "gamma": 0.5}\'')
    econ.add_argument("--x", type=float, default=1.0, help="initial liquid wealth")
    econ.add_argument("--seed", type=int, default=0, help="seed for sampled checks")

    fd = argparse.ArgumentParser(add_help=False)
    fd.add_argument("--fd-step", type=float, default=1e-3, help="relative oracle step")
    fd.add_argument("--method", choices=(FORMULA, ORACLE, "both"), default=FORMULA)
    fd.add_argument("--timings", action="store_true",
                    help="include wall-clock timings (output no longer reproducible)")

    parser = argparse.ArgumentParser(prog="imp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="schema and no-arbitrage check")
    sub.add_parser("price", parents=[common, econ], help="Davis prices")
    p = sub.add_parser("sensitivity", parents=[common, econ, fd], help="p'(x) and D(x)")
    p.add_argument("--csv", metavar="PATH", help="write D entries as CSV")
    p = sub.add_parser("equilibrium", parents=[common, econ], help="linearized static position")
    p.add_argument("--p-trade", type=float, nargs="+", required=True)
    sub.add_parser("dominance", parents=[common, econ], help="universal minimal measure check")
    p = sub.add_parser("report", parents=[common, econ, fd], help="full report")
    p.add_argument("--curve-csv", metavar="PATH", help="q vs. price-correction data")
    p.set_defaults(method="both")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("IMP_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2, which is reserved for arbitrage here
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if hasattr(args, "x") and not args.x > 0:
        print("error: --x must be positive", file=sys.stderr)
        return EXIT_INPUT
    if hasattr(args, "fd_step") and not 1e-7 < args.fd_step < 1e-2:
        print("error: --fd-step must lie in (1e-7, 1e-2)", file=sys.stderr)
        return EXIT_INPUT
    try:
        doc, code = COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SolverError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = dumps(doc) if args.format == "json" else render_table(canonical(doc)) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
