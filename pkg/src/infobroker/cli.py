"""Command-line entry point: solve, verify, sweep and repro."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from typing import Optional

import numpy as np

from . import analytic, lp_oracle, repro, simplex, welfare
from .files import (ResultFile, fmt, is_result_file, load_scenario, mechanism_from_record,
                    mechanism_record, read_result, scenario_from_record, scenario_hash, sig)
from .lp_oracle import ScenarioSpec
from .model import (InvalidInput, Mechanism, Population, audit_mechanism, broker_revenue,
                    x_lower)

EXIT_OK, EXIT_SOLVER, EXIT_INPUT, EXIT_CHECK = 0, 1, 2, 3
ENGINES = ("analytic", "lp", "both")
SWEEP_PARAMS = ("H", "L", "t", "V", "N")
SWEEP_COLUMNS = ("param", "value", "x_lower", "x_star", "x_double_star", "rev_no_privacy",
                 "rev_duopoly", "rev_no_obedience", "rent_total_duopoly", "rent_total_no_obedience",
                 "eff_loss_duopoly", "eff_loss_no_obedience")


def _audit_tol(sc: ScenarioSpec) -> float:
    return lp_oracle.AUDIT_TOL * max(1.0, abs(sc.params.V1))


def _gap_tol(sc: ScenarioSpec, tol: Optional[float]) -> float:
    return tol if tol is not None else 1e-3 * sc.params.t


# -- engines -------------------------------------------------------------------------

def _welfare_record(mech, sc: ScenarioSpec) -> dict:
    rep = welfare.report(mech, sc)
    return {**rep.as_row(), "first_best": rep.first_best, "first_best_kind": rep.first_best_kind,
            "information_rent_by_type": rep.information_rent_by_type}


def run_lp(sc: ScenarioSpec, debug_lp: bool = False) -> tuple[dict, lp_oracle.SolveResult]:
    if debug_lp:
        print(lp_oracle.build_program(sc).dump(), file=sys.stderr)
    res = lp_oracle.solve(sc)
    stats = {k: v for k, v in res.solver_stats.items() if k != "seconds"}
    section = {
        "revenue": res.revenue,
        "mechanism": mechanism_record(res.types, res.mechanism),
        "consumer_payoffs": res.consumer_payoffs,
        "seller_payoffs": list(res.seller_payoffs),
        "binding": lp_oracle.binding_report(res),
        "solver": stats,
        "welfare": _welfare_record(res.mechanism, sc),
    }
    return section, res


def run_analytic(sc: ScenarioSpec) -> tuple[dict, Population, Mechanism]:
    """Closed form for the scenario, on the same types the LP sees."""
    p, pop = sc.params, sc.population
    types = sc.types()
    extra: dict = {}
    if p.is_asymmetric and not sc.consumer_ic:
        mech = analytic.solve_no_privacy(p, types)
        extra = {"kind": "full_extraction"}
        if pop.uniform:
            extra["revenue_continuum"] = analytic.solve_no_privacy(p, pop).revenue()
    elif p.is_asymmetric and pop.uniform:
        tm = (analytic.solve_privacy_duopoly(p) if sc.obedience else analytic.solve_no_obedience(p))
        types, mech = tm.on_population(types, _cell_edges(types))
        extra = {"kind": "threshold", "threshold": tm.x_star, "x_lower": tm.x_lower,
                 "x_star": analytic.optimal_threshold_x_star(p),
                 "x_star_reported_formula": analytic.reported_threshold_x_star(p),
                 "x_double_star": analytic.threshold_x_double_star(p),
                 "revenue_continuum": tm.revenue()}
    elif p.is_asymmetric and sc.obedience and pop.size == 3:
        sol = analytic.solve_three_consumers(p, *pop.locations, pop.masses)
        mech = sol.mechanism
        extra = {"kind": "three_consumer", "branch": sol.binding_case, "binding_ir": sol.binding_ir,
                 "y2": sol.y2, "y3": sol.y3}
    elif not p.is_asymmetric and not sc.obedience and sc.consumer_ic and pop.size == 2:
        mech = analytic.solve_symmetric_two_consumer_no_obedience(p, *pop.locations, pop.masses)
        extra = {"kind": "symmetric_two_consumer"}
    else:
        raise InvalidInput("no closed form covers this scenario; use --engine lp")
    section = {**extra, "revenue": broker_revenue(mech, types),
               "mechanism": mechanism_record(types, mech),
               "welfare": _welfare_record(mech, sc.replace(population=types))}
    return section, types, mech


def _cell_edges(types: Population) -> np.ndarray:
    edges = np.concatenate([[0.0], np.cumsum(types.masses)])
    edges[-1] = 1.0
    return edges


def _structure_applies(sc: ScenarioSpec) -> bool:
    return (sc.params.is_asymmetric and sc.population.uniform and sc.consumer_ic and sc.obedience)


def _structure_record(rep: analytic.StructureReport) -> dict:
    return {k: {"passed": ok, "detail": d} for k, (ok, d) in rep.checks.items()}


# -- commands ------------------------------------------------------------------------

def cmd_solve(scenario: str, engine: str = "lp", out: Optional[str] = None,
              grid: Optional[int] = None, tol: Optional[float] = None,
              debug_lp: bool = False) -> int:
    sc = load_scenario(scenario, grid)
    sections: dict = {}
    failures = []
    if engine in ("lp", "both"):
        sections["lp"], res = run_lp(sc, debug_lp)
    if engine in ("analytic", "both"):
        sections["analytic"], types, mech = run_analytic(sc)
    if engine == "both":
        gap = sections["lp"]["revenue"] - sections["analytic"]["revenue"]
        limit = _gap_tol(sc, tol)
        sections["gap"] = {"lp_minus_analytic": gap, "tolerance": limit,
                           "within": abs(gap) <= limit}
        if abs(gap) > limit:
            failures.append(f"revenue gap {fmt(gap)} exceeds {fmt(limit)}")
        if _structure_applies(sc):
            rep_lp = analytic.check_structure(res, tol=1e-6)
            tm = analytic.solve_privacy_duopoly(sc.params)
            rep_an = analytic.analytic_structure(tm, sc.grid)
            sections["structure"] = {"lp": _structure_record(rep_lp),
                                     "analytic": _structure_record(rep_an)}
            for label, rep in (("lp", rep_lp), ("analytic", rep_an)):
                failures += [f"{label} structure {k}" for k, (ok, _) in rep.checks.items() if not ok]
    text = ResultFile(sc, engine, sections).dumps()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_CHECK if failures else EXIT_OK


def _verify_result(path: str) -> list[str]:
    doc = read_result(path)
    sc = scenario_from_record(doc["scenario"], source=path)
    failures = []
    if doc.get("provenance", {}).get("scenario_sha256") != scenario_hash(sc):
        failures.append("provenance: scenario hash does not match the embedded scenario")
    types = sc.types()
    tol = _audit_tol(sc)
    for label in ("lp", "analytic"):
        if label not in doc:
            continue
        sec = doc[label]
        stored_types, mech = mechanism_from_record(sec["mechanism"])
        if stored_types.size != types.size or np.max(np.abs(stored_types.locations - types.locations)) > 1e-8:
            failures.append(f"{label}: types differ from the scenario's")
            continue
        if sec.get("kind") == "threshold":
            thr = float(sec["threshold"])
            if thr < x_lower(sc.params) - 1e-12 or thr > 1.0 + 1e-12:
                failures.append(f"{label}: threshold {fmt(thr)} outside [x_lower, 1]")
                continue
            rebuilt = analytic.threshold_mechanism(sc.params, thr)
            _, ref = rebuilt.on_population(types, _cell_edges(types))
            drift = max(float(np.max(np.abs(ref.scheme - mech.scheme))),
                        float(np.max(np.abs(ref.consumer_fees - mech.consumer_fees))) / max(1.0, sc.params.V1))
            if drift > 1e-6:
                failures.append(f"{label}: stored mechanism disagrees with threshold {fmt(thr)}")
            mech = ref
        audit = audit_mechanism(mech, types, sc.params, consumer_ic=sc.consumer_ic,
                                obedience=sc.obedience, fee_nonneg=sc.fee_nonneg, tol=tol)
        failures += [f"{label}: {v.family} {v.label} slack {fmt(v.slack)}" for v in audit.violations]
        rev = broker_revenue(mech, types)
        if abs(rev - float(sec["revenue"])) > 1e-6 * max(1.0, abs(rev)):
            failures.append(f"{label}: stored revenue {fmt(sec['revenue'])} but mechanism yields {fmt(rev)}")
    if "gap" in doc and not doc["gap"].get("within", True):
        failures.append("gap: recorded revenue gap exceeds its tolerance")
    return failures


def verify_scenario(sc: ScenarioSpec, tol: Optional[float] = None) -> list[str]:
    """Feasibility audits, structure checks and scenario orderings for one instance."""
    failures = []
    scale = max(1.0, abs(sc.params.V1))
    res = lp_oracle.solve(sc)     # audits its own optimum; raises on failure
    variants = {"no_ic": sc.replace(consumer_ic=False, obedience=False),
                "ic_only": sc.replace(consumer_ic=True, obedience=False),
                "ic_obedience": sc.replace(consumer_ic=True, obedience=True)}
    revs = {k: lp_oracle.solve(v).revenue for k, v in variants.items()}
    eps = 1e-9 * scale
    if not revs["no_ic"] >= revs["ic_only"] - eps:
        failures.append(f"ordering: no-IC revenue {fmt(revs['no_ic'])} below IC-only {fmt(revs['ic_only'])}")
    if not revs["ic_only"] >= revs["ic_obedience"] - eps:
        failures.append(f"ordering: IC-only revenue below IC+obedience")

    full = lp_oracle.solve(variants["no_ic"])
    fb = welfare.first_best_surplus(variants["no_ic"].replace(population=full.types))
    if np.max(np.abs(full.consumer_payoffs)) > eps or max(map(abs, full.seller_payoffs)) > eps:
        failures.append("full extraction: positive payoffs remain with IC off")
    if abs(full.revenue - fb) > eps:
        failures.append(f"full extraction: revenue {fmt(full.revenue)} vs first best {fmt(fb)}")

    rep = welfare.report(res.mechanism, sc.replace(population=res.types))
    if abs(rep.accounting_gap()) > 1e-9 * scale:
        failures.append(f"welfare: accounting gap {fmt(rep.accounting_gap())}")

    if sc.params.is_asymmetric and sc.population.uniform:
        p = sc.params
        xl, xss, xs = x_lower(p), analytic.threshold_x_double_star(p), analytic.optimal_threshold_x_star(p)
        if not xl - 1e-12 <= xss <= xs + 1e-12:
            failures.append("thresholds: x_lower <= x** <= x* fails")
        try:
            section, _, _ = run_analytic(sc)
            gap = res.revenue - section["revenue"]
            if sc.obedience or not sc.consumer_ic:
                if abs(gap) > _gap_tol(sc, tol):
                    failures.append(f"gap: LP minus analytic {fmt(gap)}")
            elif not -eps <= gap <= p.t / sc.grid:
                failures.append(f"gap: LP minus no-obedience analytic {fmt(gap)} outside [0, t/N]")
        except InvalidInput as exc:
            failures.append(f"analytic: {exc}")
        try:
            reports = [welfare.report(analytic.solve_no_privacy(p, sc.population), sc),
                       welfare.report(analytic.solve_privacy_duopoly(p), sc),
                       welfare.report(analytic.solve_no_obedience(p), sc)]
            welfare.compare(["no_privacy", "duopoly", "no_obedience"], reports, tol=1e-9)
        except welfare.OrderingViolation as exc:
            failures.append(f"welfare ordering: {exc}")
        if _structure_applies(sc):
            for k, (ok, d) in analytic.check_structure(res, tol=1e-6).checks.items():
                if not ok:
                    failures.append(f"structure {k}: {d}")
    return failures


def cmd_verify(scenario: str, grid: Optional[int] = None, tol: Optional[float] = None) -> int:
    if is_result_file(scenario):
        failures = _verify_result(scenario)
    else:
        failures = verify_scenario(load_scenario(scenario, grid), tol)
    for f in failures:
        print(f"FAIL {f}")
    print(f"verify: {'FAIL' if failures else 'PASS'} ({len(failures)} failure(s))")
    return EXIT_CHECK if failures else EXIT_OK


def sweep_values(start: float, stop: float, step: float) -> list[float]:
    if not step > 0 or stop < start:
        raise InvalidInput("need --step > 0 and --to >= --from")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(n)]


def sweep_row(sc: ScenarioSpec, param: str, value: float, engine: str) -> dict:
    if param == "N":
        if value != int(value) or value < 2:
            raise InvalidInput(f"grid size must be an integer >= 2, got {value}")
        sc = sc.replace(grid=int(value))
    else:
        sc = sc.replace(params=sc.params.with_(**{param: value}))
    p = sc.params
    row = {"param": param, "value": value}
    if p.is_asymmetric:
        row.update(x_lower=x_lower(p), x_star=analytic.optimal_threshold_x_star(p),
                   x_double_star=analytic.threshold_x_double_star(p))
    else:
        row.update(x_lower=math.nan, x_star=math.nan, x_double_star=math.nan)
    if engine == "analytic":
        mechs = {"no_privacy": analytic.solve_no_privacy(p, sc.population),
                 "duopoly": analytic.solve_privacy_duopoly(p),
                 "no_obedience": analytic.solve_no_obedience(p)}
        reps = {k: welfare.report(m, sc) for k, m in mechs.items()}
    else:
        cases = {"no_privacy": sc.replace(consumer_ic=False, obedience=False),
                 "duopoly": sc.replace(consumer_ic=True, obedience=True),
                 "no_obedience": sc.replace(consumer_ic=True, obedience=False)}
        reps = {}
        for k, case in cases.items():
            res = lp_oracle.solve(case)
            reps[k] = welfare.report(res.mechanism, case.replace(population=res.types))
    row.update(rev_no_privacy=reps["no_privacy"].broker_revenue,
               rev_duopoly=reps["duopoly"].broker_revenue,
               rev_no_obedience=reps["no_obedience"].broker_revenue,
               rent_total_duopoly=reps["duopoly"].consumer_surplus_total,
               rent_total_no_obedience=reps["no_obedience"].consumer_surplus_total,
               eff_loss_duopoly=reps["duopoly"].efficiency_loss,
               eff_loss_no_obedience=reps["no_obedience"].efficiency_loss)
    return row


def cmd_sweep(scenario: str, param: str, start: float, stop: float, step: float,
              out: Optional[str] = None, engine: Optional[str] = None,
              grid: Optional[int] = None) -> int:
    if param not in SWEEP_PARAMS:
        raise InvalidInput(f"--param must be one of {', '.join(SWEEP_PARAMS)}")
    sc = load_scenario(scenario, grid)
    if engine is None:
        closed = sc.params.is_asymmetric and sc.population.uniform and param != "N"
        engine = "analytic" if closed else "lp"
    if engine == "both":
        raise InvalidInput("sweeps use a single engine: analytic or lp")
    if engine == "analytic" and not (sc.params.is_asymmetric and sc.population.uniform):
        raise InvalidInput("analytic sweeps need an asymmetric uniform scenario")
    if param == "N" and not sc.population.uniform:
        raise InvalidInput("sweeping N needs a uniform population")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    skipped = []
    values = sweep_values(start, stop, step)
    for value in values:
        try:
            row = sweep_row(sc, param, value, engine)
        except InvalidInput as exc:
            skipped.append(f"# skipped {param}={fmt(value)}: {exc}")
            continue
        writer.writerow([row["param"]] + [fmt(row[c]) for c in SWEEP_COLUMNS[1:]])
    for line in skipped:
        buf.write(line + "\n")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_INPUT if len(skipped) == len(values) else EXIT_OK


def cmd_repro(target: str) -> int:
    outcome = repro.run(target)
    print(outcome.text())
    return EXIT_OK if outcome.passed else EXIT_CHECK


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infobroker", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a scenario and write a result file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--engine", choices=ENGINES, default="lp")
    s.add_argument("--out")
    s.add_argument("--grid", type=int, help="cells for uniform populations")
    s.add_argument("--tol", type=float, help="allowed |LP - analytic| revenue gap")
    s.add_argument("--debug-lp", action="store_true", help="print the program to stderr")

    v = sub.add_parser("verify", help="run the invariant suite on a scenario or result file")
    v.add_argument("--scenario", required=True)
    v.add_argument("--grid", type=int)
    v.add_argument("--tol", type=float)

    w = sub.add_parser("sweep", help="tabulate the three scenarios over a parameter range")
    w.add_argument("--scenario", required=True)
    w.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    w.add_argument("--from", dest="start", type=float, required=True)
    w.add_argument("--to", dest="stop", type=float, required=True)
    w.add_argument("--step", type=float, required=True)
    w.add_argument("--engine", choices=("analytic", "lp"))
    w.add_argument("--grid", type=int)
    w.add_argument("--out")

    r = sub.add_parser("repro", help="rerun a reference instance against its reported values")
    r.add_argument("target", choices=repro.TARGETS)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.command == "solve":
            return cmd_solve(args.scenario, args.engine, args.out, args.grid, args.tol, args.debug_lp)
        if args.command == "verify":
            return cmd_verify(args.scenario, args.grid, args.tol)
        if args.command == "sweep":
            return cmd_sweep(args.scenario, args.param, args.start, args.stop, args.step,
                             args.out, args.engine, args.grid)
        return cmd_repro(args.target)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except simplex.SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
