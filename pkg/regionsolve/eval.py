"""Provides expression evaluator."""
import logging
from dataclasses import dataclass
from functools import wraps
from typing import Any, Callable, TypeVar

import numpy as np

from regionsolve import ast
from regionsolve.function import OPERATOR_NAMES, Builtin, DomainError, Value


class EvalError(Exception):
    """Raised when an error occurs during eval."""

    def __init__(self, message: str, node: ast.Node | None = None):
        super().__init__(message if node is None else f"{message}: {node.format()}")
        self.node = node


class NodeDomainError(EvalError):
    """Raised when an operator is applied outside its domain."""


class NonFiniteError(EvalError):
    """Raised when a node evaluates to inf or nan."""


T = TypeVar("T", bound=Callable)


def evaluator(f: T) -> T:
    """Raise `EvalError` if some errors occur."""

    @wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except EvalError:
            raise
        except Exception as e:
            raise EvalError(f"eval failed {args[1:]}") from e

    return wrapper  # type: ignore


class VariableTable:
    """Set of variables."""

    def __init__(self):
        self.__table: dict[str, Value] = {}

    @staticmethod
    def new(table: dict[str, Any]) -> "VariableTable":
        t = VariableTable()
        for k, v in table.items():
            t.set(k, v)
        return t

    def set(self, key: str, value: Any):
        self.__table[key] = np.asarray(value, dtype=float)

    def get(self, key: str) -> Value | None:
        return self.__table.get(key)

    def has(self, key: str) -> bool:
        return key in self.__table


class FunctionTable:
    """Set of functions."""

    def __init__(self):
        self.__table: dict[str, Callable] = {}

    @staticmethod
    def new(table: dict[str, Callable]) -> "FunctionTable":
        t = FunctionTable()
        for k, v in table.items():
            t.set(k, v)
        return t

    def set(self, key: str, value: Callable):
        self.__table[key] = value

    def get(self, key: str) -> Callable | None:
        return self.__table.get(key)


@dataclass
class Environment:
    """Context to evaluate Node."""

    variables: VariableTable
    functions: FunctionTable

    @staticmethod
    def new(variables: VariableTable | None = None, functions: FunctionTable | None = None) -> "Environment":
        return Environment(
            variables=VariableTable() if variables is None else variables,
            functions=FunctionTable.new(Builtin.all_functions()) if functions is None else functions,
        )


@dataclass
class Evaluator:
    env: Environment

    @staticmethod
    def __eval_const(node: ast.Const) -> Value:
        return np.float64(node.value)

    def __eval_variable(self, node: ast.Variable) -> Value:
        value = self.env.variables.get(node.name)
        if value is None:
            raise EvalError(f"variable {node.name} not bound", node)
        return value

    def __call(self, name: str, node: ast.Node, *args: Value) -> Value:
        f = self.env.functions.get(name)
        if f is None:
            raise EvalError(f"function {name} not found", node)
        try:
            return f(*args)
        except DomainError as e:
            raise NodeDomainError(str(e), node) from e

    def __eval_unary(self, node: ast.Unary) -> Value:
        return self.__call(node.op, node, self.eval(node.operand))

    def __eval_binary(self, node: ast.Binary) -> Value:
        left = self.eval(node.left)
        right = self.eval(node.right)
        return self.__call(OPERATOR_NAMES[node.op], node, left, right)

    @evaluator
    def eval(self, node: ast.Node) -> Value:
        """Evaluate node."""
        match node:
            case ast.Const():
                value = self.__eval_const(node)
            case ast.Variable():
                value = self.__eval_variable(node)
            case ast.Unary():
                value = self.__eval_unary(node)
            case ast.Binary():
                value = self.__eval_binary(node)
            case _:
                raise EvalError("unknown node", node)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite value", node)
        return value


def eval_expression(e: ast.Expression, env: dict[str, Any]) -> Value:
    """
    Evaluate `e` with variables bound by `env`.

    Values may be floats or numpy arrays of a common shape; the result has that shape.

    >>> eval_expression(ast.parse_expression("x1^2", 1), {"x1": 3.0})
    9.0
    """
    missing = e.variables() - env.keys()
    if missing:
        raise EvalError(f"unbound variables {sorted(missing)}")
    value = Evaluator(env=Environment.new(variables=VariableTable.new(env))).eval(e.ast)
    logging.debug("[eval] %s returned %s", e, value)
    if np.ndim(value) == 0:
        return float(value)
    return value


def eval_at(e: ast.Expression, t: Any, x: Any) -> Value:
    """
    Evaluate `e` at time `t` and state `x`.

    `x` has the state components on its last axis, `t` broadcasts against the remaining axes.
    """
    x = np.asarray(x, dtype=float)
    env: dict[str, Any] = {e.time_name: np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])}
    for k, name in enumerate(e.state_names()):
        env[name] = x[..., k]
    value = eval_expression(e, env)
    if x.ndim > 1:
        return np.array(np.broadcast_to(value, x.shape[:-1]))
    return value
