"""Provides scenario files: validation with key paths and assembly of the problem."""
import dataclasses
import json
import logging
import sys
from dataclasses import asdict, dataclass
from functools import wraps
from typing import Any, Callable, TypeVar

import numpy as np

from regionsolve.ast import Expression, ParseError, parse_expression
from regionsolve.field import ExpressionField
from regionsolve.functionals import DEFAULT_INTERVALS, DENSITY_VARIABLE, LinearFunctional
from regionsolve.problem import DEFAULT_MAX_ITERATIONS, DEFAULT_SCHEDULE, DEFAULT_TOLERANCE, BoundaryKind, ProblemSpec
from regionsolve.regions import (
    AdmissiblePair,
    Ball,
    Box,
    Halfspace,
    Intersection,
    Region,
    Shape,
    Sublevel,
    construct_admissible_pair,
    pair_from_user,
)


class ScenarioError(Exception):
    """Raised when a scenario is malformed, `path` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


T = TypeVar("T", bound=Callable)


def loader(f: T) -> T:
    """Raise `ScenarioError` if some errors occur."""

    @wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except ScenarioError:
            raise
        except Exception as e:
            logging.debug("[scenario] %s failed", f.__name__)
            raise ScenarioError(str(e)) from e

    return wrapper  # type: ignore


def require(value: dict[str, Any], key: str, path: str) -> Any:
    if key not in value:
        raise ScenarioError(f"missing key {key!r}", path)
    return value[key]


def numbers(value: Any, path: str, length: int | None = None) -> list[float]:
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise ScenarioError(f"want a list of numbers got {value!r}", path)
    if length is not None and len(value) != length:
        raise ScenarioError(f"want {length} numbers got {len(value)}", path)
    return [float(x) for x in value]


def number(value: Any, path: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScenarioError(f"want a number got {value!r}", path)
    return float(value)


def expression(text: Any, dimension: int, path: str, time_name: str = "t") -> Expression:
    if not isinstance(text, str):
        raise ScenarioError(f"want an expression string got {text!r}", path)
    try:
        return parse_expression(text, dimension, time_name)
    except ParseError as e:
        raise ScenarioError(str(e), path) from e


def build_shape(spec: Any, dimension: int, path: str) -> Shape:
    """
    Region shapes, space-time points are [t, x1, .., xn]:

      {"ball": {"center": [t, x1, .., xn] or [x1, .., xn], "radius": r}}
      {"box": {"lo": [t, x1, .., xn], "hi": [t, x1, .., xn]}}
      {"halfspace": {"normal": [t, x1, .., xn], "offset": c}}
      {"intersection": [shape, ...]}
      {"sublevel": {"h": "<expression in t, x1 .. xn>", "bound": K}}
    """
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ScenarioError(f"want one of ball, box, halfspace, intersection, sublevel got {spec!r}", path)
    ((kind, body),) = spec.items()
    at = f"{path}.{kind}"
    match kind:
        case "ball":
            center = numbers(require(body, "center", at), f"{at}.center")
            if len(center) not in (dimension, dimension + 1):
                raise ScenarioError(f"want {dimension} or {dimension + 1} numbers got {len(center)}", f"{at}.center")
            radius = number(require(body, "radius", at), f"{at}.radius")
            if radius <= 0:
                raise ScenarioError("want a positive radius", f"{at}.radius")
            return Ball(center=np.array(center), radius=radius, tube=len(center) == dimension)
        case "box":
            lo = np.array(numbers(require(body, "lo", at), f"{at}.lo", dimension + 1))
            hi = np.array(numbers(require(body, "hi", at), f"{at}.hi", dimension + 1))
            if np.any(lo > hi):
                raise ScenarioError("want lo ≤ hi", at)
            return Box(lo=lo, hi=hi)
        case "halfspace":
            normal = np.array(numbers(require(body, "normal", at), f"{at}.normal", dimension + 1))
            if not np.any(normal):
                raise ScenarioError("want a nonzero normal", f"{at}.normal")
            return Halfspace(normal=normal, offset=number(require(body, "offset", at), f"{at}.offset"))
        case "intersection":
            if not isinstance(body, list) or not body:
                raise ScenarioError("want a nonempty list of shapes", at)
            return Intersection(parts=tuple(build_shape(x, dimension, f"{at}[{i}]") for i, x in enumerate(body)))
        case "sublevel":
            h = expression(require(body, "h", at), dimension, f"{at}.h")
            bound = number(require(body, "bound", at), f"{at}.bound")
            if bound <= 0:
                raise ScenarioError("want a positive bound", f"{at}.bound")
            return Sublevel(h=h, bound=bound)
        case _:
            raise ScenarioError(f"unknown shape {kind!r}", path)


@dataclass
class SolverOptions:
    intervals: int = DEFAULT_INTERVALS
    schedule: list[float] = dataclasses.field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    seed: int = 0
    samples: int = 4096
    operator: str | None = None
    uniform_c: bool = False

    @staticmethod
    def from_dict(value: Any, path: str = "solver") -> "SolverOptions":
        if not isinstance(value, dict):
            raise ScenarioError(f"want an object got {value!r}", path)
        unknown = value.keys() - SolverOptions.__dataclass_fields__.keys()
        if unknown:
            raise ScenarioError(f"unknown keys {sorted(unknown)}", path)
        options = SolverOptions(**value)
        if not isinstance(options.intervals, int) or options.intervals < 2:
            raise ScenarioError("want an integer ≥ 2", f"{path}.intervals")
        schedule = numbers(options.schedule, f"{path}.schedule")
        if any(x < 0 or x > 1 for x in schedule):
            raise ScenarioError("want values in [0, 1]", f"{path}.schedule")
        if options.operator not in (None, "J", "K", "Kp"):
            raise ScenarioError("want J, K or Kp", f"{path}.operator")
        return options


@dataclass
class Scenario:
    """A boundary value problem with its region, pair, solver options and requested checks."""

    interval: list[float]
    dimension: int
    field: list[str]
    region: dict[str, Any]
    boundary: str
    pair: str | dict[str, Any] = "construct"
    functional: dict[str, Any] | None = None
    r: list[float] | None = None
    solver: SolverOptions = dataclasses.field(default_factory=SolverOptions)
    checks: list[str] = dataclasses.field(default_factory=lambda: ["H0", "H1", "H2", "H3", "H4", "H5r"])
    notes: list[str] = dataclasses.field(default_factory=list)

    @staticmethod
    @loader
    def from_dict(value: Any) -> "Scenario":
        if not isinstance(value, dict):
            raise ScenarioError(f"want an object got {type(value).__name__}")
        for key in ("interval", "dimension", "field", "region", "boundary"):
            require(value, key, "")
        unknown = value.keys() - Scenario.__dataclass_fields__.keys()
        if unknown:
            raise ScenarioError(f"unknown keys {sorted(unknown)}")
        scenario = Scenario(**(value | {"solver": SolverOptions.from_dict(value.get("solver", {}))}))
        scenario.validate()
        return scenario

    def into_dict(self) -> dict[str, Any]:
        return asdict(self)

    def validate(self):
        a, b = numbers(self.interval, "interval", 2)
        if not a < b:
            raise ScenarioError("want a < b", "interval")
        if not isinstance(self.dimension, int) or isinstance(self.dimension, bool) or self.dimension < 1:
            raise ScenarioError("want a positive integer", "dimension")
        if not isinstance(self.field, list) or len(self.field) != self.dimension:
            raise ScenarioError(f"want {self.dimension} component expressions", "field")
        self.build_field()
        self.build_region()
        kind = self.build_boundary()
        if kind in (BoundaryKind.CG, BoundaryKind.CG2):
            if self.functional is None:
                raise ScenarioError(f"missing key 'functional' for {kind.value}")
            self.build_functional()
        if self.r is not None:
            numbers(self.r, "r", self.dimension)
        elif kind != BoundaryKind.CP:
            raise ScenarioError(f"missing key 'r' for {kind.value}")
        if not isinstance(self.pair, (str, dict)):
            raise ScenarioError("want 'construct' or an object", "pair")
        if isinstance(self.pair, str) and self.pair != "construct":
            raise ScenarioError(f"want 'construct' got {self.pair!r}", "pair")
        if not isinstance(self.checks, list) or not all(isinstance(x, str) for x in self.checks):
            raise ScenarioError("want a list of check names", "checks")

    def build_boundary(self) -> BoundaryKind:
        try:
            return BoundaryKind(self.boundary)
        except ValueError as e:
            raise ScenarioError(f"want one of {[x.value for x in BoundaryKind]}", "boundary") from e

    def build_field(self) -> ExpressionField:
        return ExpressionField(
            components=tuple(expression(x, self.dimension, f"field[{i}]") for i, x in enumerate(self.field))
        )

    def build_region(self) -> Region:
        a, b = self.interval
        try:
            return Region(interval=(float(a), float(b)), dimension=self.dimension, shape=self.build_shape())
        except ScenarioError:
            raise
        except Exception as e:
            raise ScenarioError(str(e), "region") from e

    def build_shape(self) -> Shape:
        return build_shape(self.region, self.dimension, "region")

    def build_functional(self) -> LinearFunctional:
        """{"atoms": [[s, w], ...], "density": "<expression in s>"}"""
        spec = self.functional
        if not isinstance(spec, dict):
            raise ScenarioError("want an object", "functional")
        atoms = spec.get("atoms", [])
        if not isinstance(atoms, list):
            raise ScenarioError("want a list of [s, w]", "functional.atoms")
        pairs = [tuple(numbers(x, f"functional.atoms[{i}]", 2)) for i, x in enumerate(atoms)]
        density = spec.get("density")
        if density is not None:
            density = expression(density, 0, "functional.density", DENSITY_VARIABLE)
        a, b = self.interval
        try:
            return LinearFunctional.new((a, b), atoms=pairs, density=density)  # type: ignore[arg-type]
        except ValueError as e:
            raise ScenarioError(str(e), "functional") from e

    def build_pair(self, region: Region) -> AdmissiblePair:
        """
        "construct" builds the pair from the region, {"h": "half_squared_distance"} uses ½d_R² and P_R,
        {"h": "<expression>", "p": ["<p1>", "<p2_1>", ..]} wraps user expressions.
        """
        if self.pair == "construct":
            return construct_admissible_pair(region)
        assert isinstance(self.pair, dict)
        h = require(self.pair, "h", "pair")
        if h == "half_squared_distance":
            return pair_from_user(region, h, samples=self.solver.samples, seed=self.solver.seed)
        p = self.pair.get("p")
        if p is not None:
            if not isinstance(p, list) or len(p) != self.dimension + 1:
                raise ScenarioError(f"want {self.dimension + 1} expressions", "pair.p")
            p = tuple(expression(x, self.dimension, f"pair.p[{i}]") for i, x in enumerate(p))
        return pair_from_user(
            region, expression(h, self.dimension, "pair.h"), p, samples=self.solver.samples, seed=self.solver.seed
        )

    @loader
    def build_problem(self) -> ProblemSpec:
        region = self.build_region()
        kind = self.build_boundary()
        for note in self.notes:
            logging.warning("[scenario] %s", note)
        return ProblemSpec.new(
            f=self.build_field(),
            region=region,
            pair=self.build_pair(region),
            kind=kind,
            r=self.r,
            functional=self.build_functional() if self.functional is not None else None,
            intervals=self.solver.intervals,
            schedule=tuple(self.solver.schedule),
            tolerance=self.solver.tolerance,
            max_iterations=self.solver.max_iterations,
            seed=self.solver.seed,
            uniform_c=self.solver.uniform_c,
            notes=self.notes,
        )


EXAMPLE_FIELDS = {
    "figure": ["-2*x1*exp(-x2)", "-x2*exp(-x1)"],
    "statement": ["-2*x1*exp(x2)", "-x2*exp(x1)"],
}

EXAMPLE_NOTES = [
    "the worked example states C = 2 but max{m, 1 + ‖p₂‖₀} = max{2, 3} = 3, using C = 3",
    "the worked example writes f = (-2x e^y, -y e^x) but evaluates f(p) on R as (-2x e^-y, -y e^-x)",
    "the worked example displays the boundary condition with u(-1) and an integral over [-1, 0], using I = [0, 1]",
]


def builtin_example(variant: str = "figure") -> Scenario:
    """
    x′ = −2x e^{∓y}, y′ = −y e^{∓x} on [0, 1] with ∫₀¹(x, y) = (1, 1), R the closed ball of radius 2 in (t, x, y)
    and h = ½d_R².
    """
    if variant not in EXAMPLE_FIELDS:
        raise ScenarioError(f"want one of {sorted(EXAMPLE_FIELDS)}", "variant")
    notes = list(EXAMPLE_NOTES) + [f"field variant {variant!r}: {EXAMPLE_FIELDS[variant]}"]
    if variant == "statement":
        notes.append("with e^y and e^x no solution of the boundary condition stays inside R, containment fails")
    return Scenario.from_dict(
        {
            "interval": [0, 1],
            "dimension": 2,
            "field": EXAMPLE_FIELDS[variant],
            "region": {"ball": {"center": [0, 0, 0], "radius": 2}},
            "pair": {"h": "half_squared_distance"},
            "functional": {"density": "1"},
            "r": [1, 1],
            "boundary": "cg2",
            "checks": ["H0", "H1", "H2", "H3", "H4"],
            "notes": notes,
        }
    )


def read_source(source: str) -> str:
    """Inline JSON when `source` starts with '{', stdin for '-', otherwise a file name."""
    if source.lstrip().startswith("{"):
        return source
    if source == "-":
        return sys.stdin.read()
    with open(source) as f:
        return f.read()


@loader
def load_scenario(source: str) -> Scenario:
    try:
        value = json.loads(read_source(source))
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return Scenario.from_dict(value)
