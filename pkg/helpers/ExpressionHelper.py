import re
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from helpers.Exceptions import InternalError, ScenarioError

Evaluator = Callable[[Dict[str, np.ndarray]], np.ndarray]

FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cosh": np.cosh,
    "sinh": np.sinh,
    "tanh": np.tanh,
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}
CONSTANTS = {"pi": np.pi}

TOKEN_PATTERN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class Expression:
    """A compiled arithmetic expression in named variables"""

    def __init__(self, source: str, variables: Sequence[str], evaluator: Evaluator) -> None:
        self.source = source
        self.variables = tuple(variables)
        self.__evaluator = evaluator

    def __call__(self, values: Dict[str, np.ndarray]) -> np.ndarray:
        return np.asarray(self.__evaluator(values), dtype=float)

    def __repr__(self) -> str:
        """Returns the expression source as string"""
        return f"'{self.source}' in ({', '.join(self.variables)})"


class ExpressionParser:
    """Recursive-descent parser for + - * / ^, parentheses, literals, variables
    and the functions cosh, sinh, tanh, cos, sin, exp, log, sqrt.

    Columns in error messages are 1-based and shifted by column_offset so that
    they point into the line the expression was read from.
    """

    def __init__(self, variables: Sequence[str], line: int = 0, column_offset: int = 0) -> None:
        self.variables = tuple(variables)
        self.line = line
        self.column_offset = column_offset
        self.__tokens: List[Tuple[str, str, int]] = []
        self.__position = 0

    def parse(self, source: str) -> Expression:
        self.__tokens = self.__tokenize(source)
        self.__position = 0
        if not self.__tokens:
            self.__fail("Empty expression", len(source))
        evaluator = self.__expression()
        if self.__position < len(self.__tokens):
            _, text, column = self.__tokens[self.__position]
            self.__fail(f"Unexpected '{text}'", column)
        return Expression(source, self.variables, evaluator)

    def __tokenize(self, source: str) -> List[Tuple[str, str, int]]:
        tokens = []
        position = 0
        while position < len(source):
            if source[position:].strip() == "":
                break
            match = TOKEN_PATTERN.match(source, position)
            if not match:
                column = position + len(source[position:]) - len(source[position:].lstrip())
                self.__fail(f"Unexpected character '{source[column]}'", column)
            kind = match.lastgroup or ""
            tokens.append((kind, match.group(kind), match.start(kind)))
            position = match.end()
        return tokens

    def __peek(self) -> Tuple[str, str, int]:
        if self.__position < len(self.__tokens):
            return self.__tokens[self.__position]
        end = self.__tokens[-1][2] + len(self.__tokens[-1][1]) if self.__tokens else 0
        return ("end", "", end)

    def __take(self) -> Tuple[str, str, int]:
        token = self.__peek()
        self.__position += 1
        return token

    def __expect(self, text: str) -> None:
        kind, found, column = self.__take()
        if found != text:
            self.__fail(f"Expected '{text}' but found '{found or 'end of expression'}'", column)

    def __expression(self) -> Evaluator:
        left = self.__term()
        while self.__peek()[1] in ("+", "-"):
            op = self.__take()[1]
            right = self.__term()
            left = _binary(op, left, right)
        return left

    def __term(self) -> Evaluator:
        left = self.__unary()
        while self.__peek()[1] in ("*", "/"):
            op = self.__take()[1]
            right = self.__unary()
            left = _binary(op, left, right)
        return left

    def __unary(self) -> Evaluator:
        if self.__peek()[1] in ("+", "-"):
            op = self.__take()[1]
            operand = self.__unary()
            if op == "-":
                return lambda values: -operand(values)
            return operand
        return self.__power()

    def __power(self) -> Evaluator:
        base = self.__primary()
        if self.__peek()[1] == "^":
            self.__take()
            exponent = self.__unary()
            return _binary("^", base, exponent)
        return base

    def __primary(self) -> Evaluator:
        kind, text, column = self.__take()
        if kind == "number":
            value = float(text)
            return lambda values: value
        if kind == "name":
            if self.__peek()[1] == "(":
                if text not in FUNCTIONS:
                    self.__fail(f"Unknown function '{text}'", column)
                self.__take()
                argument = self.__expression()
                self.__expect(")")
                function = FUNCTIONS[text]
                return lambda values: function(argument(values))
            if text in self.variables:
                return lambda values: values[text]
            if text in CONSTANTS:
                constant = CONSTANTS[text]
                return lambda values: constant
            self.__fail(f"Unknown name '{text}'", column)
        if text == "(":
            inner = self.__expression()
            self.__expect(")")
            return inner
        self.__fail(f"Unexpected '{text or 'end of expression'}'", column)
        raise InternalError("Expression parser reached an impossible state")

    def __fail(self, msg: str, column: int) -> None:
        raise ScenarioError(msg, self.line, self.column_offset + column + 1)


def _binary(op: str, left: Evaluator, right: Evaluator) -> Evaluator:
    if op == "+":
        return lambda values: left(values) + right(values)
    if op == "-":
        return lambda values: left(values) - right(values)
    if op == "*":
        return lambda values: left(values) * right(values)
    if op == "/":
        return lambda values: left(values) / right(values)
    return lambda values: np.power(left(values), right(values))


def parse_expression(
    source: str, variables: Sequence[str], line: int = 0, column_offset: int = 0
) -> Expression:
    return ExpressionParser(variables, line, column_offset).parse(source)
