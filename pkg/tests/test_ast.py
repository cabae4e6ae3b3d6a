from typing import Any

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import regionsolve.ast as ast
from regionsolve.eval import EvalError, eval_expression


@pytest.mark.parametrize(
    "title,text,dimension,want",
    [
        ("number", "1.5", 1, "1.5"),
        ("exponent literal", "2e-3", 1, "0.002"),
        ("time", "t", 1, "t"),
        ("state", "x2", 2, "x2"),
        ("sum associates left", "1-2-3", 1, "((1.0 - 2.0) - 3.0)"),
        ("product binds tighter", "1+2*3", 1, "(1.0 + (2.0 * 3.0))"),
        ("power binds tighter than minus", "-x1^2", 1, "(-(x1 ^ 2.0))"),
        ("power associates left", "2^3^2", 1, "((2.0 ^ 3.0) ^ 2.0)"),
        ("negative exponent", "x1^-1", 1, "(x1 ^ (-1.0))"),
        ("unary plus", "+x1", 1, "x1"),
        ("function", "exp(-x2)", 2, "exp((-x2))"),
        ("parentheses", "(t+x1)*x1", 1, "((t + x1) * x1)"),
        ("spaces", "  -2 * x1 * exp( -x2 ) ", 2, "(((-2.0) * x1) * exp((-x2)))"),
    ],
)
def test_parse_expression(title: str, text: str, dimension: int, want: str):
    assert want == ast.parse_expression(text, dimension).format()


@pytest.mark.parametrize(
    "title,text,dimension,exc,offset",
    [
        ("empty", "  ", 1, ast.ParseError, 0),
        ("unknown variable", "x1+y", 1, ast.UnknownVariableError, 3),
        ("state beyond dimension", "x3", 2, ast.UnknownVariableError, 0),
        ("unexpected character", "x1 # 2", 1, ast.ParseError, 3),
        ("missing operand", "1+", 1, ast.ParseError, 2),
        ("unclosed parenthesis", "(1+2", 1, ast.ParseError, 4),
        ("trailing token", "1 2", 1, ast.ParseError, 2),
        ("function without arguments", "exp", 1, ast.ParseError, 3),
        ("two arguments", "exp(1, 2)", 1, ast.ArityError, 0),
        ("no arguments", "sin()", 1, ast.ArityError, 0),
        ("literal out of range", "1e999", 1, ast.ParseError, 0),
        ("literal out of range inside", "x1*1e400", 1, ast.ParseError, 3),
        ("offset after wide space", "\u00a0x1 +", 1, ast.ParseError, 6),
        ("offset after ideographic space", "\u3000x1 # 2", 1, ast.ParseError, 6),
    ],
)
def test_parse_expression_error(title: str, text: str, dimension: int, exc: Any, offset: int):
    with pytest.raises(exc) as e:
        ast.parse_expression(text, dimension)
    assert offset == e.value.offset


def test_parse_expression_time_name():
    e = ast.parse_expression("2*s", 0, time_name="s")
    assert frozenset({"s"}) == e.variables()
    with pytest.raises(ast.UnknownVariableError):
        ast.parse_expression("t", 0, time_name="s")


@pytest.mark.parametrize(
    "title,text,want",
    [
        ("state", "x1+t", "((-x1) + t)"),
        ("nested", "exp(-x2)*x1", "(exp((-(-x2))) * (-x1))"),
        ("constant", "3", "3.0"),
    ],
)
def test_reflected(title: str, text: str, want: str):
    assert want == ast.parse_expression(text, 2).reflected().format()


def test_negated():
    assert "(-(x1 + 1.0))" == ast.parse_expression("x1+1", 1).negated().format()


@st.composite
def expressions(draw: Any, depth: int = 3) -> str:
    leaves = st.sampled_from(["t", "x1", "x2", "1", "2.5", "0.001"])
    if depth == 0:
        return draw(leaves)
    kind = draw(st.sampled_from(["leaf", "binary", "unary", "call"]))
    match kind:
        case "leaf":
            return draw(leaves)
        case "binary":
            op = draw(st.sampled_from(["+", "-", "*", "/", "^"]))
            return f"({draw(expressions(depth - 1))}){op}({draw(expressions(depth - 1))})"
        case "unary":
            return f"-({draw(expressions(depth - 1))})"
        case _:
            name = draw(st.sampled_from(sorted(ast.FUNCTIONS)))
            return f"{name}({draw(expressions(depth - 1))})"


@given(expressions())
def test_format_is_a_fixed_point(text: str):
    once = ast.parse_expression(text, 2)
    twice = ast.parse_expression(once.format(), 2)
    assert once == twice


@st.composite
def nodes(draw: Any, depth: int = 6) -> ast.Node:
    leaves = st.one_of(
        st.sampled_from(["t", "x1", "x2"]).map(lambda name: ast.Variable(name=name)),
        st.floats(-4, 4, allow_nan=False).map(lambda value: ast.Const(value=value)),
        st.integers(-3, 3).map(lambda value: ast.Const(value=float(value))),
    )
    if depth == 0:
        return draw(leaves)
    match draw(st.sampled_from(["leaf", "leaf", "unary", "binary"])):
        case "leaf":
            return draw(leaves)
        case "unary":
            op = draw(st.sampled_from(["neg"] + sorted(ast.FUNCTIONS)))
            return ast.Unary(op=op, operand=draw(nodes(depth - 1)))
        case _:
            op = draw(st.sampled_from(ast.BINARY_OPERATORS))
            return ast.Binary(op=op, left=draw(nodes(depth - 1)), right=draw(nodes(depth - 1)))


UNARY_REFERENCE = {
    "neg": lambda v: -v,
    "exp": np.exp,
    "log": lambda v: np.log(v) if v > 0 else undefined(),
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": lambda v: np.sqrt(v) if v >= 0 else undefined(),
    "abs": abs,
}


def undefined() -> Any:
    raise ArithmeticError("outside the domain")


def power(base: Any, exponent: Any) -> Any:
    if base < 0 and exponent != np.round(exponent):
        return undefined()
    if base == 0 and exponent < 0:
        return undefined()
    return np.power(base, exponent)


BINARY_REFERENCE = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b if b != 0 else undefined(),
    "^": power,
}


def reference_eval(node: ast.Node, env: dict[str, float]) -> np.float64:
    match node:
        case ast.Const(value=value):
            result = np.float64(value)
        case ast.Variable(name=name):
            result = np.float64(env[name])
        case ast.Unary(op=op, operand=operand):
            result = np.float64(UNARY_REFERENCE[op](reference_eval(operand, env)))
        case ast.Binary(op=op, left=left, right=right):
            a, b = reference_eval(left, env), reference_eval(right, env)
            result = np.float64(BINARY_REFERENCE[op](a, b))
        case _:
            raise TypeError(f"unknown node {node}")
    if not np.isfinite(result):
        raise ArithmeticError("non-finite value")
    return result


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(nodes(), st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3))
def test_eval_matches_reference(node: ast.Node, values: list[float]):
    env = dict(zip(["t", "x1", "x2"], values))
    e = ast.Expression(ast=node, dimension=2)
    with np.errstate(all="ignore"):
        try:
            want = reference_eval(node, env)
        except ArithmeticError:
            with pytest.raises(EvalError):
                eval_expression(e, env)
            return
    assert float(want) == eval_expression(e, env)
