from dataclasses import replace
from typing import Any

import numpy as np
import pytest
from scipy.integrate import trapezoid

import regionsolve.regions as regions
import regionsolve.solver as solver
from regionsolve.ast import parse_expression
from regionsolve.field import Constants, ExpressionField
from regionsolve.functionals import LinearFunctional, SampledPath
from regionsolve.hypotheses import Verdict
from regionsolve.problem import ProblemSpec
from regionsolve.solver import Operator

SAMPLES = 1024


def new_field(*components: str) -> ExpressionField:
    return ExpressionField(components=tuple(parse_expression(x, len(components)) for x in components))


def ball_region() -> regions.Region:
    return regions.Region(interval=(0, 1), dimension=2, shape=regions.Ball(center=np.zeros(3), radius=2))


def example_problem(intervals: int = 100, functional: Any = None, r: Any = (1, 1), **kwargs: Any) -> ProblemSpec:
    region = ball_region()
    return ProblemSpec.new(
        f=new_field("-2*x1*exp(-x2)", "-x2*exp(-x1)"),
        region=region,
        pair=regions.pair_from_user(region, "half_squared_distance", samples=SAMPLES),
        kind="cg2",
        r=r,
        functional=LinearFunctional.integral((0, 1)) if functional is None else functional,
        intervals=intervals,
        **kwargs,
    )


def decay_problem(intervals: int) -> ProblemSpec:
    region = regions.Region(interval=(0, 1), dimension=1, shape=regions.Ball(center=np.zeros(1), radius=2, tube=True))
    return ProblemSpec.new(
        f=new_field("-x1"),
        region=region,
        pair=regions.pair_from_user(region, "half_squared_distance", samples=SAMPLES),
        kind="ci",
        r=[1.0],
        intervals=intervals,
    )


@pytest.fixture(scope="module")
def example() -> ProblemSpec:
    return example_problem()


@pytest.fixture(scope="module")
def example_report(example: ProblemSpec) -> solver.SolveReport:
    return solver.solve_homotopy(example)


def test_default_operator(example: ProblemSpec):
    assert Operator.K_PROJECTED == Operator.default(example)
    periodic = ProblemSpec.new(f=example.f, region=example.region, pair=example.pair, kind="cp", intervals=20)
    assert Operator.J == Operator.default(periodic)


def test_operators_at_zero(example: ProblemSpec):
    r = np.array([1.0, 1.0])
    u = SampledPath.constant(example.grid, [0.3, -0.2])
    assert np.allclose(r, solver.operator_K_projected(example, 0.0, u).values)
    fixed = SampledPath.constant(example.grid, r)
    assert np.allclose(r, solver.operator_K_paper(example, 0.0, fixed).values)
    assert np.allclose([0.3, -0.2] + r, solver.operator_J(example, 0.0, u).values)


@pytest.mark.parametrize("which", [Operator.K_PAPER, Operator.K_PROJECTED])
def test_solve_at_zero(example: ProblemSpec, which: Operator):
    start = SampledPath.constant(example.grid, np.zeros(2))
    solution, step, ok = solver.solve_at(example, which, 0.0, start)
    assert ok
    assert np.allclose([1.0, 1.0], solution.values, atol=1e-7)
    assert step.within_bound


def test_solve_zero_field_initial_value():
    region = ball_region()
    problem = ProblemSpec.new(
        f=new_field("0", "0"),
        region=region,
        pair=regions.pair_from_user(region, "half_squared_distance", samples=SAMPLES),
        kind="ci",
        r=[0.5, 0],
        intervals=20,
    )
    report = solver.solve_homotopy(problem)
    assert np.allclose([0.5, 0.0], report.solution.values)
    assert report.contained
    assert report.verification.bc_residual <= 1e-12


def test_solve_worked_example(example_report: solver.SolveReport):
    solution = example_report.solution
    size = np.sqrt(solution.grid**2 + np.sum(solution.values**2, axis=1))
    integral = trapezoid(solution.values, solution.grid, axis=0)
    assert np.max(size) <= 2 + 1e-6
    assert np.linalg.norm(integral - 1) <= 1e-4
    assert example_report.contained
    example_report.require_contained()
    assert example_report.verification.ode_residual <= 1e-5
    assert example_report.h5.passed
    assert all(x.within_bound for x in example_report.trace)
    assert 1.0 == example_report.trace[-1].lam


def test_solve_worked_example_report(example_report: solver.SolveReport):
    report = example_report.to_dict()
    assert "Kp" == report["operator"]
    assert 100 == report["intervals"]
    assert report["verification"]["containment"]["contained"]


def test_solve_reflected(example_report: solver.SolveReport):
    negative = example_problem(functional=LinearFunctional.new((0, 1), density="-1"), r=(-1, -1))
    assert negative.reflected
    report = solver.solve_homotopy(negative)
    assert np.allclose(example_report.solution.values, report.solution.values, atol=1e-6)


def test_solve_paper_operator(example_report: solver.SolveReport, example: ProblemSpec):
    report = solver.solve_homotopy(example, Operator.K_PAPER)
    assert np.allclose(example_report.solution.values, report.solution.values, atol=1e-6)
    assert report.verification.gamma_residual is not None
    assert report.verification.gamma_residual <= 1e-6


def test_grid_order_exact():
    errors = []
    for intervals in (20, 40):
        report = solver.solve_homotopy(decay_problem(intervals))
        exact = np.exp(-report.solution.grid)
        errors.append(np.max(np.abs(report.solution.values[:, 0] - exact)))
    assert np.log2(errors[0] / errors[1]) >= 1.8


def test_warm_start(example: ProblemSpec, example_report: solver.SolveReport):
    report = solver.solve_homotopy(example, initial=example_report.solution)
    assert np.allclose(example_report.solution.values, report.solution.values, atol=1e-6)


def test_interior_check():
    region = ball_region()
    pair = regions.pair_from_user(region, parse_expression("t^2+x1^2+x2^2-4", 2), samples=SAMPLES)
    problem = ProblemSpec.new(f=new_field("0", "0"), region=region, pair=pair, kind="ci", r=[0, 0], intervals=10)
    zero = SampledPath.constant(problem.grid, np.zeros(2))
    report = solver.interior_check(problem, zero, SAMPLES)
    assert report.passed
    assert report.details["min_depth"] >= np.sqrt(3) - 1e-9


def test_interior_check_not_applicable(example: ProblemSpec):
    zero = SampledPath.constant(example.grid, np.zeros(2))
    report = solver.interior_check(example, zero, SAMPLES)
    assert Verdict.INCONCLUSIVE == report.verdict
    assert ["not applicable (h ≥ 0)"] == report.notes


def test_containment_error(example_report: solver.SolveReport):
    outside = replace(example_report, verification=replace(example_report.verification, contained=False))
    with pytest.raises(solver.ContainmentError):
        outside.require_contained()


def test_grid_order_worked_example():
    grids = (100, 200, 400, 800)
    solutions = [solver.solve_homotopy(example_problem(intervals)).solution.values for intervals in grids]
    differences = [np.max(np.linalg.norm(fine[::2] - coarse, axis=1)) for coarse, fine in zip(solutions, solutions[1:])]
    orders = [np.log2(x / y) for x, y in zip(differences, differences[1:])]
    assert all(x >= 1.8 for x in orders), orders


def test_h5_covers_every_lambda(example_report: solver.SolveReport):
    accepted = sum(x.converged for x in example_report.trace)
    assert accepted > 1
    assert "H5'" == example_report.h5.hypothesis
    assert accepted == example_report.h5.samples
    assert all(x.to_dict()["converged"] for x in example_report.trace if x.converged)


def test_bound_error():
    base = decay_problem(20)
    growth = ProblemSpec.new(f=new_field("x1"), region=base.region, pair=base.pair, kind="ci", r=[1.0], intervals=20)
    growth = replace(growth, constants=Constants(m=0.5, C=0.5, K=1.5))
    with pytest.raises(solver.BoundError) as e:
        solver.solve_homotopy(growth)
    assert not e.value.trace[-1].within_bound
    assert e.value.trace[-1].converged
    assert e.value.trace[0].within_bound


def rotating_problem(seed: int) -> ProblemSpec:
    rng = np.random.default_rng(seed)
    radius = rng.uniform(1.5, 3)
    k, w = rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5)
    shape = regions.Ball(center=np.zeros(2), radius=radius, tube=True)
    region = regions.Region(interval=(0, 1), dimension=2, shape=shape)
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    kind = "ci" if seed % 2 == 0 else "cg2"
    r = direction * rng.uniform(0, radius / 2 if kind == "ci" else radius / 4)
    return ProblemSpec.new(
        f=new_field(f"-{k}*x1-({w})*x2", f"({w})*x1-{k}*x2"),
        region=region,
        pair=regions.pair_from_user(region, "half_squared_distance", samples=SAMPLES),
        kind=kind,
        r=r,
        functional=LinearFunctional.integral((0, 1)) if kind == "cg2" else None,
        intervals=40,
        seed=seed,
    )


@pytest.mark.parametrize("seed", range(10))
def test_random_scenarios_within_bound(seed: int):
    problem = rotating_problem(seed)
    report = solver.solve_homotopy(problem)
    assert all(x.norm <= problem.constants.C + 1e-6 for x in report.trace if x.converged)
    assert report.verification.within_bound
    assert report.contained


def test_operator_J_keeps_small_constants():
    region = ball_region()
    problem = ProblemSpec.new(
        f=new_field("-2*x1*exp(-x2)", "-x2*exp(-x1)"),
        region=region,
        pair=regions.pair_from_user(region, "half_squared_distance", samples=SAMPLES),
        kind="cg",
        r=[0, 0],
        functional=LinearFunctional.integral((0, 1)),
        intervals=20,
    )
    assert np.linalg.norm([0.3, -0.2]) <= problem.constants.C
    u = SampledPath.constant(problem.grid, [0.3, -0.2])
    assert np.allclose(u.values, solver.operator_J(problem, 0.0, u).values, rtol=0, atol=1e-12)
    solution, _, ok = solver.solve_at(problem, Operator.J, 0.0, u)
    assert ok
    assert np.allclose(u.values, solution.values, rtol=0, atol=1e-12)


def test_operator_K_projected_saturates():
    doubled = example_problem(20, functional=LinearFunctional.new((0, 1), density="2"), r=(10, 0))
    assert 2.0 == doubled.mass
    C = doubled.constants.C
    start = SampledPath.constant(doubled.grid, np.zeros(2))
    solution, _, ok = solver.solve_at(doubled, Operator.K_PROJECTED, 0.0, start)
    assert ok
    assert np.allclose([C, 0.0], solution.values, rtol=0, atol=1e-10)


def test_operator_K_projected_zero_field():
    region = ball_region()
    problem = ProblemSpec.new(
        f=new_field("0", "0"),
        region=region,
        pair=regions.pair_from_user(region, "half_squared_distance", samples=SAMPLES),
        kind="cg2",
        r=[1, -0.5],
        functional=LinearFunctional.new((0, 1), density="2"),
        intervals=20,
    )
    report = solver.solve_homotopy(problem, Operator.K_PROJECTED)
    assert np.allclose([0.5, -0.25], report.solution.values, rtol=0, atol=1e-10)


def test_interior_check_periodic_decay():
    region = regions.Region(interval=(0, 1), dimension=1, shape=regions.Ball(center=np.zeros(1), radius=1, tube=True))
    pair = regions.pair_from_user(region, parse_expression("x1^2-1", 1), samples=SAMPLES)
    problem = ProblemSpec.new(f=new_field("-x1"), region=region, pair=pair, kind="cp", intervals=20)
    report = solver.solve_homotopy(problem)
    assert np.allclose(0.0, report.solution.values)
    assert report.interior.passed
    assert report.interior.details["min_depth"] == pytest.approx(1.0)
