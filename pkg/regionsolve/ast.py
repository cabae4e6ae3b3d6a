"""
Provides the expression AST and its parser.

Grammar, loosest binding first:

  expr     := term (("+" | "-") term)*
  term     := unary (("*" | "/") unary)*
  unary    := "-" unary | "+" unary | power
  power    := atom ("^" exponent)*
  exponent := "-" exponent | atom
  atom     := number | variable | function "(" expr ")" | "(" expr ")"

"^" binds tighter than unary minus, so "-x1^2" is -(x1^2).
Operators of equal precedence associate to the left, "2^3^2" is (2^3)^2.

Variables are the time variable (named "t" unless stated otherwise) and the state
components "x1" .. "xn". Functions: exp, log, sin, cos, sqrt, abs.
"""

import logging
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import wraps
from typing import Any, Callable, TypeVar

FUNCTIONS = frozenset({"exp", "log", "sin", "cos", "sqrt", "abs"})
BINARY_OPERATORS = ("+", "-", "*", "/", "^")


class ParseError(Exception):
    """Raised when an expression text cannot be parsed.

    offset counts bytes of the UTF-8 encoded text.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownVariableError(ParseError):
    """Raised when an expression refers to a variable that is not declared."""


class ArityError(ParseError):
    """Raised when a function is called with a wrong number of arguments."""


ParserT = TypeVar("ParserT", bound=Callable)


def parser(f: ParserT) -> ParserT:
    """Raise `ParseError` when some exceptions occur."""

    @wraps(f)
    def wrapper(text: Any, *args: Any, **kwargs: Any) -> Any:
        logging.debug("[parser] %s", text)
        try:
            r = f(text, *args, **kwargs)
        except ParseError:
            raise
        except Exception as e:
            raise ParseError(f"cannot parse {text!r}", 0) from e
        logging.debug("[parser] parse %s returned %s", text, r)
        return r

    return wrapper  # type: ignore


class Node(ABC):
    @abstractmethod
    def format(self) -> str:
        """Canonical text of the node, accepted back by `parse_expression`."""

    @abstractmethod
    def variables(self) -> frozenset[str]:
        """Names of the variables occurring in the node."""

    @abstractmethod
    def substitute(self, table: dict[str, "Node"]) -> "Node":
        """Replace variables by nodes."""


@dataclass(frozen=True)
class Const(Node):
    """Numeric literal."""

    value: float

    def format(self) -> str:
        text = repr(float(self.value))
        if text.startswith("-"):
            return f"({text})"
        return text

    def variables(self) -> frozenset[str]:
        return frozenset()

    def substitute(self, table: dict[str, Node]) -> Node:
        return self


@dataclass(frozen=True)
class Variable(Node):
    """Time or state variable."""

    name: str

    def format(self) -> str:
        return self.name

    def variables(self) -> frozenset[str]:
        return frozenset({self.name})

    def substitute(self, table: dict[str, Node]) -> Node:
        return table.get(self.name, self)


@dataclass(frozen=True)
class Unary(Node):
    """
    Negation or function call.

    op: "neg", "exp", "log", "sin", "cos", "sqrt" or "abs"
    """

    op: str
    operand: Node

    def format(self) -> str:
        if self.op == "neg":
            return f"(-{self.operand.format()})"
        return f"{self.op}({self.operand.format()})"

    def variables(self) -> frozenset[str]:
        return self.operand.variables()

    def substitute(self, table: dict[str, Node]) -> Node:
        return Unary(op=self.op, operand=self.operand.substitute(table))


@dataclass(frozen=True)
class Binary(Node):
    """
    Arithmetic operation.

    op: "+", "-", "*", "/" or "^"
    """

    op: str
    left: Node
    right: Node

    def format(self) -> str:
        return f"({self.left.format()} {self.op} {self.right.format()})"

    def variables(self) -> frozenset[str]:
        return self.left.variables() | self.right.variables()

    def substitute(self, table: dict[str, Node]) -> Node:
        return Binary(op=self.op, left=self.left.substitute(table), right=self.right.substitute(table))


@dataclass(frozen=True)
class Expression:
    """A parsed scalar expression in the time variable and x1 .. xn."""

    ast: Node
    dimension: int
    time_name: str = "t"

    def format(self) -> str:
        return self.ast.format()

    def variables(self) -> frozenset[str]:
        return self.ast.variables()

    def state_names(self) -> list[str]:
        return [f"x{k}" for k in range(1, self.dimension + 1)]

    def negated(self) -> "Expression":
        return Expression(ast=Unary(op="neg", operand=self.ast), dimension=self.dimension, time_name=self.time_name)

    def reflected(self) -> "Expression":
        """Expression of x -> e(t, -x)."""
        table: dict[str, Node] = {k: Unary(op="neg", operand=Variable(name=k)) for k in self.state_names()}
        return Expression(ast=self.ast.substitute(table), dimension=self.dimension, time_name=self.time_name)

    def __str__(self) -> str:
        return self.format()


@dataclass(frozen=True)
class Token:
    kind: str  # number, name, op, end
    text: str
    offset: int


TOKEN_PATTERN = re.compile(
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),])"
)


def byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode())


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = TOKEN_PATTERN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", byte_offset(text, pos))
        kind = m.lastgroup
        assert kind is not None
        tokens.append(Token(kind=kind, text=m.group(), offset=byte_offset(text, pos)))
        pos = m.end()
    tokens.append(Token(kind="end", text="", offset=byte_offset(text, len(text))))
    return tokens


@dataclass
class Parser:
    """Recursive descent parser over the token list."""

    tokens: list[Token]
    names: frozenset[str]
    index: int = field(default=0)

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        t = self.current
        self.index += 1
        return t

    def accept(self, op: str) -> bool:
        if self.current.kind == "op" and self.current.text == op:
            self.index += 1
            return True
        return False

    def expect(self, op: str):
        if not self.accept(op):
            raise ParseError(f"want {op!r} got {self.current.text or 'end of input'!r}", self.current.offset)

    def parse(self) -> Node:
        node = self.expr()
        if self.current.kind != "end":
            raise ParseError(f"unexpected {self.current.text!r}", self.current.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.current.kind == "op" and self.current.text in ("+", "-"):
            op = self.advance().text
            node = Binary(op=op, left=node, right=self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.current.kind == "op" and self.current.text in ("*", "/"):
            op = self.advance().text
            node = Binary(op=op, left=node, right=self.unary())
        return node

    def unary(self) -> Node:
        if self.accept("-"):
            return Unary(op="neg", operand=self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.accept("^"):
            node = Binary(op="^", left=node, right=self.exponent())
        return node

    def exponent(self) -> Node:
        if self.accept("-"):
            return Unary(op="neg", operand=self.exponent())
        return self.atom()

    def atom(self) -> Node:
        token = self.current
        match token.kind:
            case "number":
                self.advance()
                value = float(token.text)
                if not math.isfinite(value):
                    raise ParseError(f"literal {token.text} is out of range", token.offset)
                return Const(value=value)
            case "name":
                self.advance()
                if token.text in FUNCTIONS:
                    return self.call(token)
                if token.text not in self.names:
                    raise UnknownVariableError(f"unknown variable {token.text!r}", token.offset)
                return Variable(name=token.text)
            case "op" if token.text == "(":
                self.advance()
                node = self.expr()
                self.expect(")")
                return node
            case "end":
                raise ParseError("unexpected end of input", token.offset)
            case _:
                raise ParseError(f"unexpected {token.text!r}", token.offset)

    def call(self, name: Token) -> Node:
        if not self.accept("("):
            raise ParseError(f"function {name.text} requires an argument list", self.current.offset)
        args: list[Node] = []
        if not (self.current.kind == "op" and self.current.text == ")"):
            args.append(self.expr())
            while self.accept(","):
                args.append(self.expr())
        self.expect(")")
        if len(args) != 1:
            raise ArityError(f"function {name.text} takes 1 argument but {len(args)} given", name.offset)
        return Unary(op=name.text, operand=args[0])


def declared_names(dimension: int, time_name: str = "t") -> frozenset[str]:
    return frozenset({time_name} | {f"x{k}" for k in range(1, dimension + 1)})


@parser
def parse_expression(text: str, dimension: int, time_name: str = "t") -> Expression:
    """
    Parse `text` as an expression in `time_name` and x1 .. x`dimension`.

    >>> parse_expression("1+2*3", 1).format()
    '(1.0 + (2.0 * 3.0))'
    >>> parse_expression("-x1^2", 1).format()
    '(-(x1 ^ 2.0))'
    """
    if not text.strip():
        raise ParseError("empty expression", 0)
    node = Parser(tokens=tokenize(text), names=declared_names(dimension, time_name)).parse()
    return Expression(ast=node, dimension=dimension, time_name=time_name)
