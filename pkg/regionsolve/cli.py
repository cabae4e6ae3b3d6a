"""Entry point of CLI."""
import argparse
import json
import logging
import os
import sys
from inspect import signature
from textwrap import dedent
from typing import Any, Callable, cast

import numpy as np

from regionsolve import ast
from regionsolve.ast import ParseError
from regionsolve.eval import EvalError
from regionsolve.field import FieldEvaluationError
from regionsolve.function import Builtin
from regionsolve.functionals import DegenerateMassError, GridError, SampledPath
from regionsolve.hypotheses import CheckError, CheckReport, Verdict, check_H1, check_H3, run_checks
from regionsolve.problem import ProblemError, ProblemSpec
from regionsolve.regions import (
    ConstructedPair,
    PairConsistencyError,
    RegionError,
    ScalingError,
    construct_admissible_pair,
)
from regionsolve.scenario import Scenario, ScenarioError, build_shape, builtin_example, load_scenario
from regionsolve.solver import BoundError, NonConvergenceError, Operator, SolveReport, solve_homotopy

SCHEMA = 1
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_HYPOTHESIS = 2
EXIT_NON_CONVERGENCE = 3
EXIT_CONTAINMENT = 4

INVALID_INPUT = (
    ScenarioError,
    ProblemError,
    ParseError,
    EvalError,
    RegionError,
    PairConsistencyError,
    ScalingError,
    DegenerateMassError,
    GridError,
    FieldEvaluationError,
    CheckError,
)

EXAMPLE_BOUND = 2 + 1e-6
EXAMPLE_BC_TOLERANCE = 1e-4


def generate_examples() -> str:
    def dumps(x: Any) -> str:
        return json.dumps(x, indent=4, ensure_ascii=False)

    example = builtin_example().into_dict()
    example.pop("notes")
    return "\n\n".join(
        [
            "EXAMPLES:",
            "Scenario of reproduce-example:",
            dumps(example),
            "Check the hypotheses:\n\n  regionsolve check scenario.json",
            "Solve and write the solution:\n\n  regionsolve solve scenario.json --operator Kp --N 800 --out u.csv",
            "Read the scenario from stdin:\n\n  cat scenario.json | regionsolve solve -",
        ]
    )


def generate_documents() -> str:
    env_docs = {
        "REGION_SOLVE_SEED": "Seed of the samplers, overrides solver.seed of the scenario.",
        "REGIONSOLVE_VERBOSE": "Enable verbose logging if this is set.",
    }

    def format_env_doc(name: str, doc: str) -> str:
        doc = "\n".join("    " + x for x in dedent(doc).lstrip().rstrip().split("\n"))
        return f"  {name}:\n{doc}"

    env_doc = "ENVIRONMENT VARIABLES:\n\n" + "\n\n".join(
        format_env_doc(k, env_docs[k]) for k in sorted(env_docs.keys())
    )

    def section(title: str, doc: str | None) -> str:
        return f"{title}:\n\n" + dedent(cast(str, doc)).strip("\n")

    expression_doc = section("EXPRESSIONS", ast.__doc__)
    shape_doc = section("REGIONS", build_shape.__doc__)
    pair_doc = section("PAIRS", Scenario.build_pair.__doc__)
    functional_doc = section("FUNCTIONALS", Scenario.build_functional.__doc__)
    operator_doc = section("OPERATORS", Operator.__doc__)

    def format_function_doc(f: Callable) -> str:
        doc = "\n".join("  " + x for x in dedent(cast(str, f.__doc__)).lstrip().rstrip().split("\n"))
        return dedent(f"{f.__name__}{signature(f)}\n{doc}")

    all_functions = Builtin.all_functions()
    function_doc = "FUNCTIONS:\n\n" + "\n\n".join(
        format_function_doc(all_functions[k]) for k in sorted(all_functions.keys())
    )

    exit_doc = dedent(
        """\
        EXIT STATUS:

          0 ok, 1 invalid scenario, 2 hypothesis failed or a solution exceeds the bound C,
          3 no convergence, 4 solution leaves the region"""
    )

    return "\n\n".join(
        [env_doc, expression_doc, shape_doc, pair_doc, functional_doc, operator_doc, function_doc, exit_doc]
    )


def generate_epilog() -> str:
    return generate_documents() + "\n\n" + generate_examples()


def new_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Certify solution regions of boundary value problems and solve them by homotopy.",
        epilog=generate_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--report", type=str, help="Write the JSON report to this file instead of stdout.")
    commands = parser.add_subparsers(dest="command", required=True)

    scenario_help = dedent(
        """\
        Scenario JSON. A file name, '-' to read stdin or the JSON text itself when it starts with '{'."""
    )
    check = commands.add_parser("check", help="Run the hypothesis checks requested by the scenario.")
    check.add_argument("scenario", type=str, help=scenario_help)

    solve = commands.add_parser("solve", help="Solve the scenario by homotopy and verify the solution.")
    solve.add_argument("scenario", type=str, help=scenario_help)
    solve.add_argument("--operator", choices=[x.value for x in Operator], help="Fixed-point operator.")
    solve.add_argument("--N", type=int, dest="intervals", help="Number of grid intervals.")
    solve.add_argument("--out", type=str, help="Write the solution CSV to this file.")

    construct = commands.add_parser("construct-pair", help="Build the admissible pair of the scenario region.")
    construct.add_argument("scenario", type=str, help=scenario_help)

    example = commands.add_parser("reproduce-example", help="Check and solve the built-in worked example.")
    example.add_argument("--field", choices=["figure", "statement"], default="figure", help="Sign convention of f.")
    example.add_argument("--N", type=int, dest="intervals", default=400, help="Number of grid intervals.")
    example.add_argument("--out", type=str, help="Write the solution CSV to this file.")
    return parser


def apply_environment(scenario: Scenario) -> Scenario:
    seed = os.environ.get("REGION_SOLVE_SEED")
    if seed is not None:
        try:
            scenario.solver.seed = int(seed)
        except ValueError as e:
            raise ScenarioError(f"want an integer got {seed!r}", "REGION_SOLVE_SEED") from e
    return scenario


def emit(report: dict[str, Any], path: str | None):
    text = json.dumps({"schema": SCHEMA} | report, ensure_ascii=False, indent=2, default=float)
    if path is None:
        print(text)
        return
    with open(path, "w") as f:
        print(text, file=f)


def problem_summary(problem: ProblemSpec) -> dict[str, Any]:
    return {
        "boundary": problem.kind.value,
        "encoded": problem.encoded.value,
        "mass": problem.mass,
        "reflected": problem.reflected,
        "constants": problem.constants.to_dict(),
        "c": {"min": float(np.min(problem.modified.c)), "max": float(np.max(problem.modified.c))},
        "pair": problem.pair.provenance,
    }


def internal_values(problem: ProblemSpec, solution: SampledPath) -> np.ndarray:
    return -solution.values if problem.reflected else solution.values


def write_solution_csv(problem: ProblemSpec, solution: SampledPath, path: str):
    """Columns t, x1 .. xn, h(t, u(t)), ‖(t, u(t))‖."""
    h = problem.pair.h(solution.grid, internal_values(problem, solution))
    size = np.sqrt(solution.grid**2 + np.sum(solution.values**2, axis=1))
    table = np.column_stack([solution.grid, solution.values, h, size])
    names = ["t"] + [f"x{k}" for k in range(1, solution.dimension + 1)] + ["h", "norm"]
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def read_solution_csv(path: str) -> SampledPath:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SampledPath.new(table[:, 0], table[:, 1:-2])


def verdicts_exit(reports: list[CheckReport]) -> int:
    return EXIT_HYPOTHESIS if any(x.verdict == Verdict.FAIL for x in reports) else EXIT_OK


def cmd_check(scenario: Scenario, path: str | None) -> int:
    problem = scenario.build_problem()
    reports = run_checks(problem, tuple(scenario.checks), samples=scenario.solver.samples)
    emit(
        {
            "command": "check",
            "problem": problem_summary(problem),
            "checks": [x.to_dict() for x in reports],
            "notes": problem.notes,
        },
        path,
    )
    return verdicts_exit(reports)


def solve_report(problem: ProblemSpec, operator: str | None) -> tuple[dict[str, Any], SolveReport | None, int]:
    try:
        report = solve_homotopy(problem, None if operator is None else Operator(operator))
    except NonConvergenceError as e:
        logging.warning("[cli] %s", e)
        return {"error": str(e), "trace": [x.to_dict() for x in e.trace]}, None, EXIT_NON_CONVERGENCE
    except BoundError as e:
        logging.warning("[cli] %s", e)
        return {"error": str(e), "trace": [x.to_dict() for x in e.trace]}, None, EXIT_HYPOTHESIS
    code = EXIT_OK if report.contained else EXIT_CONTAINMENT
    return report.to_dict(), report, code


def cmd_solve(
    scenario: Scenario, operator: str | None, intervals: int | None, out: str | None, path: str | None
) -> int:
    if intervals is not None:
        scenario.solver.intervals = intervals
    problem = scenario.build_problem()
    summary, report, code = solve_report(problem, operator or scenario.solver.operator)
    if report is not None and out is not None:
        write_solution_csv(problem, report.solution, out)
    emit({"command": "solve", "problem": problem_summary(problem), "solve": summary, "notes": problem.notes}, path)
    return code


def cmd_construct_pair(scenario: Scenario, path: str | None) -> int:
    region = scenario.build_region()
    pair: ConstructedPair = construct_admissible_pair(region)
    samples = scenario.solver.samples
    seed = scenario.solver.seed
    reports = [check_H1(region, pair, samples, seed), check_H3(region, pair, samples, seed)]
    emit(
        {
            "command": "construct-pair",
            "pair": {
                "provenance": pair.provenance,
                "radius": pair.radius,
                "p2_bound": pair.p2_bound,
                "working_radius": pair.working_radius,
                "sup_h": pair.sup_h(samples, scenario.solver.seed),
            },
            "checks": [x.to_dict() for x in reports],
        },
        path,
    )
    return verdicts_exit(reports)


def cmd_reproduce_example(variant: str, intervals: int, out: str | None, path: str | None) -> int:
    scenario = apply_environment(builtin_example(variant))
    scenario.solver.intervals = intervals
    problem = scenario.build_problem()
    checks = run_checks(problem, tuple(scenario.checks), samples=scenario.solver.samples)
    summary, report, code = solve_report(problem, "Kp")
    notes = list(problem.notes)
    if report is not None:
        solution = report.solution
        peak = float(np.max(np.sqrt(solution.grid**2 + np.sum(solution.values**2, axis=1))))
        bc = report.verification.bc_residual
        summary["max_norm"] = peak
        if peak > EXAMPLE_BOUND:
            notes.append(f"max ‖(t, u(t))‖ = {peak} exceeds 2")
            code = EXIT_CONTAINMENT
        elif bc > EXAMPLE_BC_TOLERANCE:
            notes.append(f"boundary residual {bc:e} exceeds {EXAMPLE_BC_TOLERANCE:e}")
            code = EXIT_NON_CONVERGENCE
        if out is not None:
            write_solution_csv(problem, solution, out)
    if code == EXIT_OK:
        code = verdicts_exit(checks)
    emit(
        {
            "command": "reproduce-example",
            "field": variant,
            "problem": problem_summary(problem),
            "checks": [x.to_dict() for x in checks],
            "solve": summary,
            "notes": notes,
        },
        path,
    )
    return code


def run(args: argparse.Namespace) -> int:
    match args.command:
        case "reproduce-example":
            return cmd_reproduce_example(args.field, args.intervals, args.out, args.report)
        case "check":
            return cmd_check(apply_environment(load_scenario(args.scenario)), args.report)
        case "solve":
            scenario = apply_environment(load_scenario(args.scenario))
            return cmd_solve(scenario, args.operator, args.intervals, args.out, args.report)
        case "construct-pair":
            return cmd_construct_pair(apply_environment(load_scenario(args.scenario)), args.report)
    raise ValueError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    """Entry point of CLI."""

    if "REGIONSOLVE_VERBOSE" in os.environ:
        logging.basicConfig(level=logging.DEBUG)

    args = new_parser().parse_args(argv)
    logging.debug("[regionsolve] start %s", args.command)
    try:
        return run(args)
    except INVALID_INPUT as e:
        logging.error("[regionsolve] %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
