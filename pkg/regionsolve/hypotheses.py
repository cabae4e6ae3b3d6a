"""
Provides sample-based checks of the solution region hypotheses and the barrier lemma verdict.

Quantifiers over "a.e. t and every x" become deterministic stratified samples of the working box.
A pass means no violation was found at the sampled resolution.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import wraps
from typing import Any, Callable, TypeVar

import numpy as np
import numpy.typing as npt

from regionsolve.functionals import SampledPath
from regionsolve.problem import BoundaryKind, ProblemSpec
from regionsolve.regions import (
    INTERIOR_MARGIN,
    MEMBERSHIP_TOLERANCE,
    AdmissiblePair,
    Region,
    Samples,
    box_samples,
    central_difference,
    norm,
    slice_point,
    stratified_samples,
)

Array = npt.NDArray[np.float64]

INEQUALITY_TOLERANCE = 1e-8
STRICT_MARGIN = 1e-10
GRADIENT_TOLERANCE = 1e-5
IDENTITY_TOLERANCE = 1e-12
DEFAULT_SAMPLES = 4096
BARRIER_TOLERANCE = 1e-10


class CheckError(Exception):
    """Raised when a check cannot be evaluated."""


class Verdict(Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


@dataclass
class CheckReport:
    """
    Outcome of one hypothesis check.

    `worst` is the largest violation value found, compared against `tolerance`; `witness` is where it occurs.
    """

    hypothesis: str
    verdict: Verdict
    worst: float
    tolerance: float
    samples: int
    witness: tuple[float, list[float]] | None = None
    vacuous: bool = False
    notes: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS

    @staticmethod
    def judge(
        hypothesis: str,
        values: Array,
        t: Array,
        x: Array,
        tolerance: float,
        **details: Any,
    ) -> "CheckReport":
        """Pass when every value is at most `tolerance`, an empty sample is a vacuous pass."""
        if len(values) == 0:
            return CheckReport(
                hypothesis=hypothesis,
                verdict=Verdict.PASS,
                worst=-np.inf,
                tolerance=tolerance,
                samples=0,
                vacuous=True,
                notes=["vacuous pass, no sample in the checked set"],
                details=details,
            )
        i = int(np.argmax(values))
        worst = float(values[i])
        passed = worst <= tolerance
        return CheckReport(
            hypothesis=hypothesis,
            verdict=Verdict.PASS if passed else Verdict.FAIL,
            worst=worst,
            tolerance=tolerance,
            samples=len(values),
            witness=(float(t[i]), [float(v) for v in np.atleast_1d(x[i])]),
            notes=[f"no violation found at resolution {len(values)}"] if passed else [],
            details=details,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "hypothesis": self.hypothesis,
            "verdict": self.verdict.value,
            "worst": self.worst if np.isfinite(self.worst) else None,
            "tolerance": self.tolerance,
            "samples": self.samples,
            "witness": None if self.witness is None else {"t": self.witness[0], "x": self.witness[1]},
            "vacuous": self.vacuous,
            "notes": self.notes,
            "details": self.details,
        }


T = TypeVar("T", bound=Callable)


def hypothesis(name: str) -> Callable[[T], T]:
    """Log the check and raise `CheckError` if some errors occur."""

    def decorator(f: T) -> T:
        @wraps(f)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            logging.debug("[hypotheses] %s start", name)
            try:
                report = f(*args, **kwargs)
            except CheckError:
                raise
            except Exception as e:
                raise CheckError(f"{name} failed to evaluate: {e}") from e
            logging.debug("[hypotheses] %s %s worst %s", name, report.verdict.value, report.worst)
            return report

        return wrapper  # type: ignore

    return decorator


def slices_report(name: str, region: Region, grid: Array, margin: float) -> CheckReport:
    margins = []
    points = []
    for t in grid:
        x = slice_point(region, float(t), margin)
        if x is None:
            x = region.shape.slice_hint(float(t), region.dimension)
        points.append(x)
        margins.append(float(region.slice_margin(float(t), x)))
    report = CheckReport.judge(name, np.array(margins), grid, np.array(points), -margin)
    empty = [float(t) for t, m in zip(grid, margins) if m > -margin]
    if empty:
        report.details["empty_slices"] = empty[:20]
    return report


@hypothesis("H0")
def check_H0(region: Region, grid: Array) -> CheckReport:
    """Every slice R_t on the grid has a member."""
    return slices_report("H0", region, grid, -MEMBERSHIP_TOLERANCE)


@hypothesis("H0'")
def check_H0prime(region: Region, grid: Array) -> CheckReport:
    """Every slice R_t on the grid has a point at depth 1e-6 from its boundary."""
    return slices_report("H0'", region, grid, INTERIOR_MARGIN)


def sample(region: Region, pair: AdmissiblePair, samples: int, seed: int) -> Samples:
    return stratified_samples(region, pair.working_radius, samples, seed)


@hypothesis("H1")
def check_H1(region: Region, pair: AdmissiblePair, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> CheckReport:
    """
    R = {h ≤ 0} on samples.

    Members need h ≤ 1e-9; non-members need h > 0, reported as the value −h.
    """
    s = sample(region, pair, samples, seed)
    h = pair.h(s.t, s.x)
    member = region.contains(s.t, s.x)
    violation = np.where(member, h - MEMBERSHIP_TOLERANCE, np.where(h > 0, -h, np.maximum(-h, 1e-300)))
    return CheckReport.judge("H1", violation, s.t, s.x, 0.0, members=int(np.sum(member)))


@hypothesis("H2")
def check_H2(region: Region, pair: AdmissiblePair, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> CheckReport:
    """
    Gradients of h agree with central differences off R, away from the boundary shell.

    Only this finite content of the regularity assumption is checked.
    """
    s = sample(region, pair, samples, seed)
    s = s.select((s.stratum != "shell") & ~region.contains(s.t, s.x))
    dt, dx = central_difference(pair.h, s.t, s.x)
    gt = pair.dh_dt(s.t, s.x)
    gx = pair.grad_x(s.t, s.x)
    error = np.sqrt((dt - gt) ** 2 + np.sum((dx - gx) ** 2, axis=-1)) / (1 + np.sqrt(gt**2 + norm(gx) ** 2))
    report = CheckReport.judge("H2", error, s.t, s.x, GRADIENT_TOLERANCE)
    report.notes.append("measurability in t is not checked, only gradient consistency")
    return report


@hypothesis("H3")
def check_H3(region: Region, pair: AdmissiblePair, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> CheckReport:
    """p(t, x) = (t, x) on R and ⟨∇ₓh, p₂ − x⟩ ≤ 0 off R; the sampled sup of ‖p₂‖ is reported."""
    s = sample(region, pair, samples, seed)
    member = region.contains(s.t, s.x)
    p1, p2 = pair.p(s.t, s.x)
    moved = np.sqrt((p1 - s.t) ** 2 + np.sum((p2 - s.x) ** 2, axis=-1))
    inner = np.sum(pair.grad_x(s.t, s.x) * (p2 - s.x), axis=-1)
    violation = np.where(member, moved, inner)
    sup = float(np.max(norm(p2)))
    report = CheckReport.judge("H3", violation, s.t, s.x, INEQUALITY_TOLERANCE, p2_sup=sup, p2_bound=pair.p2_bound)
    if sup > pair.p2_bound * (1 + 1e-9):
        report.notes.append(f"sampled ‖p₂‖ = {sup} exceeds the stored bound {pair.p2_bound}")
    return report


def transversality(problem: ProblemSpec, pair: AdmissiblePair, t: Array, x: Array) -> Array:
    """L(t, x) = ∂h/∂t + ⟨∇ₓh, f(p(t, x))⟩."""
    p1, p2 = pair.p(t, x)
    return pair.dh_dt(t, x) + np.sum(pair.grad_x(t, x) * problem.f(p1, p2), axis=-1)


@hypothesis("H4")
def check_H4(problem: ProblemSpec, samples: int = DEFAULT_SAMPLES, seed: int | None = None) -> CheckReport:
    """L ≤ 0 off R."""
    pair = problem.pair
    s = sample(problem.region, pair, samples, problem.seed if seed is None else seed)
    s = s.select(pair.h(s.t, s.x) > 0)
    values = transversality(problem, pair, s.t, s.x)
    report = CheckReport.judge("H4", values, s.t, s.x, INEQUALITY_TOLERANCE)
    if len(values) and np.max(values) < 0:
        report.details["strict"] = True
        report.notes.append("L < 0 at every sample, H6 is not needed")
    return report


@hypothesis("H4'")
def check_H4prime(
    problem: ProblemSpec,
    delta: float,
    t0: float,
    epsilon: float | None = None,
    samples: int = DEFAULT_SAMPLES,
    seed: int | None = None,
) -> CheckReport:
    """
    L ≤ −ε off R for |t − t₀| ≤ δ.

    details["epsilon"] is the largest ε the samples certify; without `epsilon` the check passes when it is positive.
    """
    pair = problem.pair
    s = sample(problem.region, pair, samples, problem.seed if seed is None else seed)
    s = s.select((pair.h(s.t, s.x) > 0) & (np.abs(s.t - t0) <= delta))
    values = transversality(problem, pair, s.t, s.x)
    certified = float(-np.max(values)) if len(values) else np.inf
    want = epsilon if epsilon is not None else STRICT_MARGIN
    report = CheckReport.judge("H4'", values + want, s.t, s.x, 0.0, delta=delta, t0=t0)
    report.details["epsilon"] = certified if np.isfinite(certified) else None
    return report


@hypothesis("H4''")
def check_H4doubleprime(
    problem: ProblemSpec, epsilon: float, samples: int = DEFAULT_SAMPLES, seed: int | None = None
) -> CheckReport:
    """L ≤ 0 on the band −ε < h < 0 inside R."""
    pair = problem.pair
    s = sample(problem.region, pair, samples, problem.seed if seed is None else seed)
    h = pair.h(s.t, s.x)
    s = s.select((h > -epsilon) & (h < 0))
    values = transversality(problem, pair, s.t, s.x)
    return CheckReport.judge("H4''", values, s.t, s.x, INEQUALITY_TOLERANCE, epsilon=epsilon)


@hypothesis("H5")
def check_H5(
    candidates: list[SampledPath], pair: AdmissiblePair, C: float, strict: bool = False, homotopy: bool = False
) -> CheckReport:
    """
    h(a, u(a)) ≤ 0 or h(a, u(a)) ≤ h(b, u(b)) for every candidate with ‖u‖₀ ≤ C.

    The strict variant keeps the disjunction but asks either inequality to hold with a margin of 1e-10.
    With `homotopy` the candidates are the converged solutions along λ and the report is named H5'.
    """
    name = "H5''" if strict else "H5'" if homotopy else "H5"
    tolerance = -STRICT_MARGIN if strict else INEQUALITY_TOLERANCE
    kept = [(i, u) for i, u in enumerate(candidates) if u.sup_norm() <= C * (1 + 1e-12)]
    values, t, x, failing = [], [], [], []
    for i, u in kept:
        a, b = u.interval
        ha = float(pair.h(a, u.values[0]))
        hb = float(pair.h(b, u.values[-1]))
        value = min(ha, ha - hb)
        values.append(value)
        t.append(a)
        x.append(u.values[0])
        if value > tolerance:
            failing.append(i)
    report = CheckReport.judge(name, np.array(values), np.array(t), np.array(x), tolerance)
    report.details["skipped"] = len(candidates) - len(kept)
    report.details["failing"] = failing
    return report


@hypothesis("H5r")
def check_H5_rewritten(problem: ProblemSpec, samples: int = DEFAULT_SAMPLES, seed: int | None = None) -> CheckReport:
    """
    Boundary comparison for the special conditions, over states with ‖x‖ ≤ C.

    ci: h(a, r) ≤ 0 or h(a, r) ≤ h(b, x′)
    cp: h(a, x) ≤ 0 or h(a, x) ≤ h(b, x)
    """
    pair = problem.pair
    a, b = problem.interval
    C = problem.constants.C
    _, x = box_samples(problem.interval, problem.dimension, C, samples, problem.seed if seed is None else seed)
    zeros = np.zeros(len(x))
    match problem.kind:
        case BoundaryKind.CI:
            ha = float(pair.h(a, problem.r))
            values = np.minimum(ha, ha - pair.h(zeros + b, x))
            return CheckReport.judge("H5r", values, zeros + b, x, INEQUALITY_TOLERANCE, kind="ci")
        case BoundaryKind.CP:
            ha = pair.h(zeros + a, x)
            values = np.minimum(ha, ha - pair.h(zeros + b, x))
            return CheckReport.judge("H5r", values, zeros + a, x, INEQUALITY_TOLERANCE, kind="cp")
        case _:
            return CheckReport(
                hypothesis="H5r",
                verdict=Verdict.INCONCLUSIVE,
                worst=np.nan,
                tolerance=INEQUALITY_TOLERANCE,
                samples=0,
                notes=[f"no rewrite for {problem.kind.value}, check solutions with H5"],
            )


@hypothesis("H6")
def check_H6(problem: ProblemSpec, hhat: AdmissiblePair, samples: int = DEFAULT_SAMPLES) -> CheckReport:
    """
    There are grid times t₁ with ĥ(t₁, ·) = h(t₁, ·) and t₂ with ĥ(t₂, x) ≠ h(t₂, x) off R_t₂,
    and ĥ passes H1, H3 and H4.
    """
    pair = problem.pair
    _, x = box_samples(problem.interval, problem.dimension, pair.working_radius, samples, problem.seed)
    t1, t2 = None, None
    for t in problem.grid:
        h = pair.h(t, x)
        hh = hhat.h(t, x)
        differ = np.abs(hh - h) > IDENTITY_TOLERANCE * np.abs(h)
        off = h > 0
        if t1 is None and not np.any(differ):
            t1 = float(t)
        if t2 is None and np.any(off) and np.all(differ[off]):
            t2 = float(t)
    subchecks = [
        check_H1(problem.region, hhat, samples, problem.seed),
        check_H3(problem.region, hhat, samples, problem.seed),
        check_H4(problem.with_pair(hhat), samples),
    ]
    failed = [x.hypothesis for x in subchecks if not x.passed]
    found = t1 is not None and t2 is not None
    report = CheckReport(
        hypothesis="H6",
        verdict=Verdict.PASS if found and not failed else Verdict.FAIL,
        worst=max(x.worst for x in subchecks),
        tolerance=INEQUALITY_TOLERANCE,
        samples=samples,
        details={"t1": t1, "t2": t2, "failed": failed},
    )
    if not found:
        report.notes.append("no pair of times t₁, t₂ separates ĥ from h")
    return report


class Barrier(Enum):
    BELOW_Z = "below_z"
    CONSTANT_K = "constant_k"
    HYPOTHESES_VIOLATED = "hypotheses_violated"


class BarrierMode(Enum):
    INITIAL = "initial"  # w(a) ≤ z
    PERIODIC = "periodic"  # w(a) ≤ w(b)


@dataclass(frozen=True)
class BarrierInstance:
    """A scalar path w on the grid, the level z and the endpoint condition."""

    w: SampledPath
    z: float
    mode: BarrierMode


@dataclass(frozen=True)
class BarrierOutcome:
    verdict: Barrier
    k: float | None = None
    strict: bool = False
    reason: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict.value, "k": self.k, "strict": self.strict, "reason": self.reason}


def barrier_verdict(b: BarrierInstance, tolerance: float = BARRIER_TOLERANCE) -> BarrierOutcome:
    """
    Classify w under the barrier lemma: w nonincreasing where w > z plus the endpoint condition give
    w ≤ z everywhere or w ≡ k > z.

    w is piecewise linear, so it is nonincreasing on {w > z} when every segment reaching above z has slope ≤ 0.
    """
    w = b.w.values[:, 0]
    slopes = np.diff(w) / b.w.step
    above = np.maximum(w[:-1], w[1:]) > b.z
    if np.any(slopes[above] > tolerance):
        j = int(np.flatnonzero(above & (slopes > tolerance))[0])
        reason = f"w increases above z on [{b.w.grid[j]}, {b.w.grid[j + 1]}]"
        return BarrierOutcome(Barrier.HYPOTHESES_VIOLATED, reason=reason)
    match b.mode:
        case BarrierMode.INITIAL if w[0] > b.z:
            return BarrierOutcome(Barrier.HYPOTHESES_VIOLATED, reason="w(a) > z")
        case BarrierMode.PERIODIC if w[0] > w[-1] + tolerance:
            return BarrierOutcome(Barrier.HYPOTHESES_VIOLATED, reason="w(a) > w(b)")
    strict = bool(np.any(above)) and bool(np.all(slopes[above] <= -1e-8))
    if np.max(w) <= b.z:
        return BarrierOutcome(Barrier.BELOW_Z, strict=strict)
    if np.ptp(w) <= tolerance * (1 + abs(w[0])):
        return BarrierOutcome(Barrier.CONSTANT_K, k=float(w[0]))
    return BarrierOutcome(Barrier.HYPOTHESES_VIOLATED, reason="w above z without being constant")


CHECKS = ("H0", "H0'", "H1", "H2", "H3", "H4", "H4'", "H4''", "H5r")


def run_checks(
    problem: ProblemSpec,
    names: tuple[str, ...] = ("H0", "H1", "H2", "H3", "H4", "H5r"),
    samples: int = DEFAULT_SAMPLES,
    epsilon: float = 0.1,
    delta: float = 0.1,
    t0: float | None = None,
) -> list[CheckReport]:
    """Run the named checks in order."""
    a, b = problem.interval
    t0 = (a + b) / 2 if t0 is None else t0
    table: dict[str, Callable[[], CheckReport]] = {
        "H0": lambda: check_H0(problem.region, problem.grid),
        "H0'": lambda: check_H0prime(problem.region, problem.grid),
        "H1": lambda: check_H1(problem.region, problem.pair, samples, problem.seed),
        "H2": lambda: check_H2(problem.region, problem.pair, samples, problem.seed),
        "H3": lambda: check_H3(problem.region, problem.pair, samples, problem.seed),
        "H4": lambda: check_H4(problem, samples),
        "H4'": lambda: check_H4prime(problem, delta, t0, samples=samples),
        "H4''": lambda: check_H4doubleprime(problem, epsilon, samples),
        "H5r": lambda: check_H5_rewritten(problem, samples),
    }
    unknown = [x for x in names if x not in table]
    if unknown:
        raise CheckError(f"unknown checks {unknown}, want some of {list(CHECKS)}")
    return [table[x]() for x in names]
