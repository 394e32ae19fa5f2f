"""Scenario (YAML) and result (JSON) files."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import yaml

from . import __version__
from .lp_oracle import ScenarioSpec
from .model import EPS, InvalidInput, MarketParams, Mechanism, Population, Variant

FORMAT = "infobroker-result/1"
SIG_DIGITS = 9
MASS_SUM_TOL = 1e-6
SCENARIO_KEYS = ("variant", "V", "V1", "V2", "t", "H", "L", "population", "toggles", "tolerance")
TOGGLE_KEYS = ("consumer_ic", "obedience")


class ScenarioError(InvalidInput):
    """Invalid scenario file; carries the offending field and line when known."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None,
                 source: str = "<scenario>"):
        where = source
        if line is not None:
            where += f":{line}"
        if field:
            where += f": {field}"
        super().__init__(f"{where}: {message}")
        self.field = field
        self.line = line


# -- numbers -----------------------------------------------------------------------

def sig(value: float) -> float:
    """Round to 9 significant digits (printing and file output)."""
    v = float(value)
    if not math.isfinite(v):
        return v
    out = float(f"{v:.{SIG_DIGITS}g}")
    return 0.0 if out == 0 else out


def rounded(obj):
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return sig(obj)
    return obj


def fmt(value: float) -> str:
    return f"{float(value):.{SIG_DIGITS}g}"


# -- scenario files ----------------------------------------------------------------

def _lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers using the YAML node tree."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{path}.{k.value}" if path else str(k.value)
                out[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    if root is not None:
        walk(root, "")
    return out


def _number(raw, field, fail, positive=False) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        fail(f"expected a number, got {raw!r}", field)
    v = float(raw)
    if not math.isfinite(v):
        fail("must be finite", field)
    if positive and not v > 0:
        fail(f"must be positive, got {v}", field)
    return v


def parse_scenario(text: str, source: str = "<scenario>", grid: Optional[int] = None) -> ScenarioSpec:
    """Parse scenario text into a ScenarioSpec, or raise ScenarioError."""
    lines = _lines(text)

    def fail(msg, field=""):
        raise ScenarioError(msg, field, lines.get(field), source)

    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"not valid YAML ({getattr(exc, 'problem', exc)})", "",
                            mark.line + 1 if mark else None, source) from None
    if not isinstance(doc, dict):
        fail("top level must be a mapping")
    for key in doc:
        if key not in SCENARIO_KEYS:
            fail(f"unknown key (allowed: {', '.join(SCENARIO_KEYS)})", str(key))
    for key in ("variant", "t", "H", "L", "population"):
        if key not in doc:
            fail("required key missing", key)

    variant = doc["variant"]
    if variant not in ("asymmetric", "symmetric"):
        fail(f"must be 'asymmetric' or 'symmetric', got {variant!r}", "variant")
    t = _number(doc["t"], "t", fail, positive=True)
    H = _number(doc["H"], "H", fail, positive=True)
    L = _number(doc["L"], "L", fail, positive=True)
    if "V" in doc and ("V1" in doc or "V2" in doc):
        fail("give either V or V1/V2, not both", "V")
    if "V" in doc:
        V1 = _number(doc["V"], "V", fail)
        V2 = V1 - t if variant == "asymmetric" else V1
    elif "V1" in doc:
        V1 = _number(doc["V1"], "V1", fail)
        default = V1 - t if variant == "asymmetric" else V1
        V2 = _number(doc["V2"], "V2", fail) if "V2" in doc else default
    else:
        fail("required key missing (V or V1)", "V")

    population = _parse_population(doc["population"], fail)

    toggles = doc.get("toggles") or {}
    if not isinstance(toggles, dict):
        fail("must be a mapping", "toggles")
    for key, val in toggles.items():
        if key not in TOGGLE_KEYS:
            fail(f"unknown toggle (allowed: {', '.join(TOGGLE_KEYS)})", f"toggles.{key}")
        if not isinstance(val, bool):
            fail(f"expected true/false, got {val!r}", f"toggles.{key}")
    tol = _number(doc["tolerance"], "tolerance", fail, positive=True) if "tolerance" in doc else EPS

    try:
        params = MarketParams(V1, V2, t, H, L, Variant(variant))
    except InvalidInput as exc:
        field = next((f for f in ("H", "L", "t", "V", "V1", "V2") if f"{f} " in str(exc)
                      or f"{f}=" in str(exc)), "")
        fail(str(exc), field if field in lines else ("V" if "V" in doc else "V1"))
    try:
        return ScenarioSpec(params, population,
                            consumer_ic=toggles.get("consumer_ic", True),
                            obedience=toggles.get("obedience", True),
                            tolerance=tol, grid=grid if grid is not None else _grid_of(doc))
    except InvalidInput as exc:
        fail(str(exc), "population")


def _grid_of(doc) -> int:
    pop = doc["population"]
    return int(pop["uniform"]) if isinstance(pop, dict) else 50


def _parse_population(raw, fail) -> Population:
    if isinstance(raw, dict):
        if set(raw) != {"uniform"}:
            fail("a mapping population must be exactly {uniform: N}", "population")
        n = raw["uniform"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            fail(f"grid size must be an integer >= 2, got {n!r}", "population.uniform")
        return Population.uniform_line()
    if not isinstance(raw, list) or not raw:
        fail("must be a non-empty list of {x, mass} or {uniform: N}", "population")
    xs, lam = [], []
    for i, item in enumerate(raw):
        field = f"population[{i}]"
        if not isinstance(item, dict) or set(item) != {"x", "mass"}:
            fail("each type needs exactly the keys x and mass", field)
        x = _number(item["x"], f"{field}.x", fail)
        m = _number(item["mass"], f"{field}.mass", fail)
        if not 0.0 <= x <= 1.0:
            fail(f"location must lie in [0, 1], got {x}", f"{field}.x")
        if not m > 0:
            fail(f"mass must be positive, got {m}", f"{field}.mass")
        if xs and x <= xs[-1]:
            fail("locations must be strictly increasing", f"{field}.x")
        xs.append(x)
        lam.append(m)
    total = sum(lam)
    if abs(total - 1.0) > MASS_SUM_TOL:
        fail(f"masses must sum to 1, got {total:.9g}", "population")
    return Population.discrete(xs, np.array(lam) / total)


def load_scenario(path: str, grid: Optional[int] = None) -> ScenarioSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read file ({exc.strerror})", source=path) from None
    return parse_scenario(text, source=path, grid=grid)


def scenario_record(sc: ScenarioSpec) -> dict:
    p = sc.params
    if sc.population.uniform:
        pop: Any = {"uniform": sc.grid}
    else:
        pop = [{"x": x, "mass": m} for x, m in zip(sc.population.locations, sc.population.masses)]
    return rounded({
        "variant": p.variant.value, "V1": p.V1, "V2": p.V2, "t": p.t, "H": p.H, "L": p.L,
        "population": pop,
        "toggles": {"consumer_ic": sc.consumer_ic, "obedience": sc.obedience},
        "tolerance": sc.tolerance,
    })


def scenario_from_record(rec: dict, source: str = "<result>") -> ScenarioSpec:
    return parse_scenario(yaml.safe_dump(rec, sort_keys=False), source=source)


def scenario_hash(sc: ScenarioSpec) -> str:
    blob = json.dumps(scenario_record(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- result files ------------------------------------------------------------------

def mechanism_record(types: Population, mech: Mechanism) -> dict:
    return rounded({
        "x": types.locations, "mass": types.masses,
        "scheme": mech.scheme, "consumer_fees": mech.consumer_fees,
        "seller_fees": list(mech.seller_fees),
    })


def mechanism_from_record(rec: dict) -> tuple[Population, Mechanism]:
    try:
        lam = np.asarray(rec["mass"], float)
        types = Population(np.asarray(rec["x"], float), lam / lam.sum())
        pi = np.clip(np.asarray(rec["scheme"], float), 0.0, None)
        pi = pi / pi.sum(axis=1, keepdims=True)
        return types, Mechanism(pi, np.asarray(rec["consumer_fees"], float),
                                tuple(float(v) for v in rec["seller_fees"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed mechanism record ({exc})") from None


@dataclass
class ResultFile:
    scenario: ScenarioSpec
    engine: str
    sections: dict

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "provenance": {"tool": "infobroker", "version": __version__,
                           "scenario_sha256": scenario_hash(self.scenario)},
            "scenario": scenario_record(self.scenario),
            "engine": self.engine,
            **rounded(self.sections),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def read_result(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InvalidInput(f"{path}: cannot read file ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}: not valid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise InvalidInput(f"{path}: not a result file (format must be {FORMAT!r})")
    return doc


def is_result_file(path: str) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            head = fh.read(4096).lstrip()
    except OSError:
        return False
    return head.startswith("{") and FORMAT in head
