"""
Provides the homotopy fixed-point solver.

Paths live on the uniform grid of the problem, integrals are cumulative trapezoid sums, so a fixed point of
a discrete operator is a trapezoid collocation solution of the integral form of the problem.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np
import numpy.typing as npt
from scipy.optimize import least_squares

from regionsolve.field import ball_projection
from regionsolve.functionals import SampledPath, gamma_apply, running_integral, theta
from regionsolve.hypotheses import (
    BarrierInstance,
    BarrierMode,
    BarrierOutcome,
    CheckReport,
    Verdict,
    barrier_verdict,
    check_H5,
)
from regionsolve.problem import BoundaryKind, ProblemSpec
from regionsolve.regions import INTERIOR_MARGIN, MEMBERSHIP_TOLERANCE, norm

Array = npt.NDArray[np.float64]

MIN_RELAXATION = 0.05
RELATIVE_TOLERANCE = 1e-10
MIN_LAMBDA_STEP = 1e-3
STAGNATION = 50
BOUND_SLACK = 1e-6


class SolverError(Exception):
    """Raised when the solver cannot produce a solution."""

    def __init__(self, message: str, trace: list["LambdaStep"] | None = None):
        super().__init__(message)
        self.trace = [] if trace is None else trace


class NonConvergenceError(SolverError):
    """Raised when the iteration budget runs out before reaching λ = 1."""


class ContainmentError(SolverError):
    """Raised when a solution at λ = 1 leaves the region."""


class BoundError(SolverError):
    """Raised when a converged solution at some λ exceeds the a-priori bound C."""


class Operator(Enum):
    """
    J:  for Γ(u − u(a)) = r
    K:  the operator for Γu = r as stated, fixed points give Γu = Φ̃u
    Kp: the operator for Γu = r with u(a) = P_D((r − λΘu)/M), fixed points give Γu = r when the projection is
        inactive
    """

    J = "J"
    K_PAPER = "K"
    K_PROJECTED = "Kp"

    @staticmethod
    def default(problem: ProblemSpec) -> "Operator":
        return Operator.J if problem.encoded == BoundaryKind.CG else Operator.K_PROJECTED


def field_along(problem: ProblemSpec, u: SampledPath) -> Array:
    return problem.modified(u.grid, u.values)


def phi(problem: ProblemSpec, u: SampledPath) -> Array:
    """Φu = Γu − P_MD(Γu − r)."""
    gu = gamma_apply(problem.functional, u)
    return gu - ball_projection(problem.mass * problem.constants.C, gu - problem.r)


def phi_tilde(problem: ProblemSpec, u: SampledPath) -> Array:
    """Φ̃u = P_D((Γu + Mu(a) − r)/M)."""
    gu = gamma_apply(problem.functional, u)
    return ball_projection(problem.constants.C, (gu + problem.mass * u.values[0] - problem.r) / problem.mass)


def operator_J(problem: ProblemSpec, lam: float, u: SampledPath) -> SampledPath:
    """𝒥(λ, u)(t) = u(a) + λ∫_a^t f_R(s, u(s))ds − (1 + λ(t − a))(λΘu − Φu)."""
    fr = field_along(problem, u)
    th = theta(problem.functional, fr, u.grid)
    offset = (1 + lam * (u.grid - u.grid[0]))[:, None] * (lam * th - phi(problem, u))
    return u.with_values(u.values[0] + lam * running_integral(fr, u.grid) - offset)


def operator_K_paper(problem: ProblemSpec, lam: float, u: SampledPath) -> SampledPath:
    """𝒦(λ, u)(t) = M⁻¹(Φ̃u − λΘu) + λ∫_a^t f_R(s, u(s))ds."""
    fr = field_along(problem, u)
    th = theta(problem.functional, fr, u.grid)
    return u.with_values((phi_tilde(problem, u) - lam * th) / problem.mass + lam * running_integral(fr, u.grid))


def operator_K_projected(problem: ProblemSpec, lam: float, u: SampledPath) -> SampledPath:
    """𝒦′(λ, u)(t) = P_D((r − λΘu)/M) + λ∫_a^t f_R(s, u(s))ds."""
    fr = field_along(problem, u)
    th = theta(problem.functional, fr, u.grid)
    start = ball_projection(problem.constants.C, (problem.r - lam * th) / problem.mass)
    return u.with_values(start + lam * running_integral(fr, u.grid))


OPERATORS: dict[Operator, Callable[[ProblemSpec, float, SampledPath], SampledPath]] = {
    Operator.J: operator_J,
    Operator.K_PAPER: operator_K_paper,
    Operator.K_PROJECTED: operator_K_projected,
}


@dataclass(frozen=True)
class LambdaStep:
    lam: float
    iterations: int
    residual: float
    method: str
    norm: float
    within_bound: bool
    converged: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "method": self.method,
            "norm": self.norm,
            "within_bound": self.within_bound,
        }


@dataclass
class Verification:
    """Residuals of a computed path against the problem at λ = 1."""

    ode_residual: float
    bc_residual: float
    start_residual: float
    gamma_residual: float | None
    containment_h: float
    containment_distance: float
    contained: bool
    monotone: bool
    norm: float
    within_bound: bool
    barrier: BarrierOutcome

    def to_dict(self) -> dict[str, Any]:
        return {
            "ode_residual": self.ode_residual,
            "bc_residual": self.bc_residual,
            "start_residual": self.start_residual,
            "gamma_residual": self.gamma_residual,
            "containment": {
                "max_h": self.containment_h,
                "max_distance": self.containment_distance,
                "contained": self.contained,
            },
            "monotone_h": self.monotone,
            "norm": self.norm,
            "within_bound": self.within_bound,
            "barrier": self.barrier.to_dict(),
        }


@dataclass
class SolveReport:
    """A solution at λ = 1 in the coordinates of the original problem, with its trace and checks."""

    solution: SampledPath
    operator: Operator
    trace: list[LambdaStep]
    fixed_point_residual: float
    verification: Verification
    h5: CheckReport
    interior: CheckReport
    notes: list[str] = field(default_factory=list)

    @property
    def contained(self) -> bool:
        return self.verification.contained

    def require_contained(self):
        if not self.contained:
            raise ContainmentError(
                f"solution leaves R, max h = {self.verification.containment_h:e}, review the H4 and H5 reports",
                self.trace,
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "operator": self.operator.value,
            "intervals": self.solution.intervals,
            "fixed_point_residual": self.fixed_point_residual,
            "trace": [x.to_dict() for x in self.trace],
            "verification": self.verification.to_dict(),
            "h5": self.h5.to_dict(),
            "interior": self.interior.to_dict(),
            "notes": self.notes,
        }


def residual(problem: ProblemSpec, which: Operator, lam: float, u: SampledPath) -> float:
    """‖u − Op(λ, u)‖₀."""
    return (u.with_values(u.values - OPERATORS[which](problem, lam, u).values)).sup_norm()


def converged(problem: ProblemSpec, value: float, u: SampledPath) -> bool:
    return value <= problem.tolerance or value <= RELATIVE_TOLERANCE * u.sup_norm()


def relax(problem: ProblemSpec, which: Operator, lam: float, u: SampledPath) -> tuple[SampledPath, int, float, bool]:
    """Damped fixed-point iteration u ← (1 − θ)u + θ·Op(λ, u); θ halves when the residual grows."""
    op = OPERATORS[which]
    relaxation = 1.0
    best = np.inf
    previous = np.inf
    stalled = 0
    for i in range(problem.max_iterations):
        image = op(problem, lam, u)
        step = image.values - u.values
        value = float(np.max(norm(step)))
        if converged(problem, value, u):
            return u, i, value, True
        if value > previous:
            relaxation = max(relaxation / 2, MIN_RELAXATION)
        elif relaxation < 1:
            relaxation = min(relaxation * 1.25, 1.0)
        if value < 0.99 * best:
            best, stalled = value, 0
        else:
            stalled += 1
            if stalled >= STAGNATION:
                logging.debug("[solver] lambda %s stagnates at %e after %d iterations", lam, value, i)
                return u, i, value, False
        previous = value
        u = u.with_values(u.values + relaxation * step)
    return u, problem.max_iterations, previous, False


def quasi_linear(problem: ProblemSpec, which: Operator, lam: float, u: SampledPath) -> tuple[SampledPath, int, float]:
    """Least-squares solve of u − Op(λ, u) = 0 from u."""
    op = OPERATORS[which]
    shape = u.values.shape

    def func(v: Array) -> Array:
        w = u.with_values(v.reshape(shape))
        return (w.values - op(problem, lam, w).values).ravel()

    result = least_squares(func, u.values.ravel(), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=50 * len(u.grid))
    solution = u.with_values(result.x.reshape(shape))
    return solution, int(result.nfev), residual(problem, which, lam, solution)


def solve_at(problem: ProblemSpec, which: Operator, lam: float, u: SampledPath) -> tuple[SampledPath, LambdaStep, bool]:
    solution, iterations, value, ok = relax(problem, which, lam, u)
    method = "picard"
    if not ok:
        if residual(problem, which, lam, u) < value:
            solution = u
        solution, extra, value = quasi_linear(problem, which, lam, solution)
        iterations += extra
        method = "least_squares"
        ok = converged(problem, value, solution)
    size = solution.sup_norm()
    within = size <= problem.constants.C + BOUND_SLACK
    step = LambdaStep(
        lam=lam, iterations=iterations, residual=value, method=method, norm=size, within_bound=within, converged=ok
    )
    logging.debug("[solver] lambda %s %s iterations %d residual %e norm %s", lam, method, iterations, value, size)
    return solution, step, ok


def solve_homotopy(
    problem: ProblemSpec, which: Operator | None = None, initial: SampledPath | None = None
) -> SolveReport:
    """
    Continue the fixed point of Op(λ, ·) along the λ-schedule with warm starts.

    A failed λ-step is halved down to 1e-3, then `NonConvergenceError` carries the trace.
    A converged solution with ‖u‖₀ > C raises `BoundError`. Every converged solution goes to the H5' check.
    """
    which = Operator.default(problem) if which is None else which
    if initial is None:
        u = SampledPath.constant(problem.grid, np.zeros(problem.dimension))
    else:
        u = SampledPath.new(problem.grid, -initial.values if problem.reflected else initial.values)

    trace: list[LambdaStep] = []
    schedule = sorted(set(problem.schedule) | {0.0, 1.0})
    done: float | None = None
    targets = list(schedule)
    accepted: list[SampledPath] = []
    while targets:
        lam = targets[0]
        solution, step, ok = solve_at(problem, which, lam, u)
        trace.append(step)
        if ok:
            if not step.within_bound:
                raise BoundError(
                    f"solution at λ = {lam} has norm {step.norm} beyond the a-priori bound C = {problem.constants.C}",
                    trace,
                )
            u, done = solution, lam
            accepted.append(u)
            targets.pop(0)
            continue
        if done is None or lam - done < 2 * MIN_LAMBDA_STEP:
            raise NonConvergenceError(f"no fixed point at λ = {lam}, residual {step.residual:e}", trace)
        targets.insert(0, (done + lam) / 2)

    notes = list(problem.notes)
    fixed = residual(problem, which, 1.0, u)
    verification = verify_solution(problem, u, which)
    h5 = check_H5(accepted, problem.pair, problem.constants.C, homotopy=True)
    interior = interior_check(problem, u)
    solution = u.with_values(-u.values) if problem.reflected else u
    return SolveReport(
        solution=solution,
        operator=which,
        trace=trace,
        fixed_point_residual=fixed,
        verification=verification,
        h5=h5,
        interior=interior,
        notes=notes,
    )


def ode_residual(problem: ProblemSpec, u: SampledPath) -> float:
    """max_j ‖(u_{j+1} − u_j)/h − (f_R(t_j, u_j) + f_R(t_{j+1}, u_{j+1}))/2‖."""
    fr = field_along(problem, u)
    slope = np.diff(u.values, axis=0) / u.step
    return float(np.max(norm(slope - (fr[1:] + fr[:-1]) / 2)))


def verify_solution(problem: ProblemSpec, u: SampledPath, which: Operator | None = None) -> Verification:
    """
    Residuals of u in the coordinates of `problem`.

    start_residual is ‖u(a) − P_D((Γu − r)/M)‖ for J and ‖u(a) − Φ̃u‖ for K; gamma_residual is ‖Γu − Φ̃u‖ for K.
    """
    which = Operator.default(problem) if which is None else which
    g = problem.functional
    gu = gamma_apply(g, u)
    match problem.encoded:
        case BoundaryKind.CG:
            bc = gu - problem.mass * u.values[0] - problem.r
        case _:
            bc = gu - problem.r
    gamma_residual: float | None = None
    match which:
        case Operator.J:
            start = u.values[0] - ball_projection(problem.constants.C, (gu - problem.r) / problem.mass)
        case Operator.K_PAPER:
            tilde = phi_tilde(problem, u)
            start = u.values[0] - tilde
            gamma_residual = float(np.linalg.norm(gu - tilde))
        case _:
            fr = field_along(problem, u)
            start = u.values[0] - ball_projection(
                problem.constants.C, (problem.r - theta(g, fr, u.grid)) / problem.mass
            )

    w = problem.pair.h(u.grid, u.values)
    distance = problem.region.distance(u.grid, u.values)
    size = u.sup_norm()
    mode = BarrierMode.INITIAL if w[0] <= 0 else BarrierMode.PERIODIC
    barrier = barrier_verdict(BarrierInstance(w=SampledPath.new(u.grid, w), z=0.0, mode=mode))
    slopes = np.diff(w)
    above = np.maximum(w[:-1], w[1:]) > 0
    return Verification(
        ode_residual=ode_residual(problem, u),
        bc_residual=float(np.linalg.norm(bc)),
        start_residual=float(np.linalg.norm(start)),
        gamma_residual=gamma_residual,
        containment_h=float(np.max(w)),
        containment_distance=float(np.max(distance)),
        contained=bool(np.max(w) <= MEMBERSHIP_TOLERANCE),
        monotone=bool(np.all(slopes[above] <= MEMBERSHIP_TOLERANCE)),
        norm=size,
        within_bound=size <= problem.constants.C + BOUND_SLACK,
        barrier=barrier,
    )


def interior_check(problem: ProblemSpec, u: SampledPath, samples: int = 4096) -> CheckReport:
    """
    (t, u(t)) lies in the interior of R at every node, at depth at least 1e-6 and with h < 0.

    When h ≥ 0 on the working box the interior {h < 0} is empty and the check does not apply.
    """
    pair = problem.pair
    t, x = pair.samples(samples, problem.seed)
    if np.min(pair.h(t, x)) >= 0 and np.min(pair.h(u.grid, u.values)) >= 0:
        return CheckReport(
            hypothesis="interior",
            verdict=Verdict.INCONCLUSIVE,
            worst=np.nan,
            tolerance=-INTERIOR_MARGIN,
            samples=len(u.grid),
            vacuous=True,
            notes=["not applicable (h ≥ 0)"],
        )
    margin = problem.region.slice_margin(u.grid, u.values)
    h = pair.h(u.grid, u.values)
    values = np.where(h < 0, margin, np.maximum(margin, 0.0) + np.abs(h) + INTERIOR_MARGIN)
    report = CheckReport.judge("interior", values, u.grid, u.values, -INTERIOR_MARGIN)
    report.details["min_depth"] = float(-np.max(margin))
    report.details["node"] = int(np.argmax(margin))
    return report
