"""Arithmetic expression tool for math-domain episodes.

Grammar: decimal literals, + - * / % ^, unary minus, parentheses.
Precedence from loosest to tightest: additive, multiplicative (% binds like *),
unary minus, then ^ which is right-associative and binds tighter than unary
minus (so -2^2 evaluates to -4 and 2^3^2 to 512). % uses C-style fmod
semantics (result takes the dividend's sign). All arithmetic is double
precision.

calculate() never raises: malformed input yields "Error: invalid expression",
division (or modulo) by zero yields "Error: division by zero", and non-finite
results (overflow, 0^negative) are reported as invalid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class CalculatorError(Exception):
    pass


class InvalidExpression(CalculatorError):
    pass


class DivisionByZero(CalculatorError):
    pass


@dataclass(frozen=True)
class _Token:
    kind: str  # "number" or "op"
    text: str
    value: float = 0.0


_OP_CHARS = set("+-*/%^()")


def _tokenize(expression: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    n = len(expression)
    while i < n:
        ch = expression[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OP_CHARS:
            tokens.append(_Token("op", ch))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            while j < n and (expression[j].isdigit() or expression[j] == "."):
                if expression[j] == ".":
                    if seen_dot:
                        raise InvalidExpression("two dots in one number")
                    seen_dot = True
                j += 1
            text = expression[i:j]
            if text == ".":
                raise InvalidExpression("bare dot")
            tokens.append(_Token("number", text, float(text)))
            i = j
            continue
        raise InvalidExpression(f"unexpected character {ch!r}")
    if not tokens:
        raise InvalidExpression("empty expression")
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._pos = 0

    def _peek(self) -> _Token | None:
        return self._tokens[self._pos] if self._pos < len(self._tokens) else None

    def _next(self) -> _Token:
        tok = self._peek()
        if tok is None:
            raise InvalidExpression("unexpected end of expression")
        self._pos += 1
        return tok

    def parse(self) -> float:
        value = self._additive()
        if self._peek() is not None:
            raise InvalidExpression(f"trailing input at {self._peek().text!r}")
        return value

    def _additive(self) -> float:
        value = self._multiplicative()
        while True:
            tok = self._peek()
            if tok is None or tok.kind != "op" or tok.text not in "+-":
                return value
            self._next()
            rhs = self._multiplicative()
            value = value + rhs if tok.text == "+" else value - rhs

    def _multiplicative(self) -> float:
        value = self._unary()
        while True:
            tok = self._peek()
            if tok is None or tok.kind != "op" or tok.text not in "*/%":
                return value
            self._next()
            rhs = self._unary()
            if tok.text == "*":
                value = value * rhs
            elif tok.text == "/":
                if rhs == 0:
                    raise DivisionByZero("division by zero")
                value = value / rhs
            else:
                if rhs == 0:
                    raise DivisionByZero("modulo by zero")
                value = math.fmod(value, rhs)

    def _unary(self) -> float:
        tok = self._peek()
        if tok is not None and tok.kind == "op" and tok.text == "-":
            self._next()
            return -self._unary()
        return self._power()

    def _power(self) -> float:
        base = self._primary()
        tok = self._peek()
        if tok is not None and tok.kind == "op" and tok.text == "^":
            self._next()
            exponent = self._unary()  # right-associative; allows 2^-3
            try:
                return math.pow(base, exponent)
            except (OverflowError, ValueError) as exc:
                raise InvalidExpression(f"power out of range: {exc}") from exc
        return base

    def _primary(self) -> float:
        tok = self._next()
        if tok.kind == "number":
            return tok.value
        if tok.kind == "op" and tok.text == "(":
            value = self._additive()
            closing = self._next()
            if closing.kind != "op" or closing.text != ")":
                raise InvalidExpression("missing closing parenthesis")
            return value
        raise InvalidExpression(f"unexpected token {tok.text!r}")


def evaluate_expression(expression: str) -> float:
    """Evaluate an expression, raising CalculatorError subclasses on failure."""
    value = _Parser(_tokenize(expression)).parse()
    if not math.isfinite(value):
        raise InvalidExpression("non-finite result")
    return value


def format_number(value: float) -> str:
    """Observation rendering: integers without '.0', else up to 12 significant
    digits with trailing zeros trimmed."""
    if value == 0:
        return "0"  # normalizes -0.0
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.12g}"


def calculate(expression: str) -> str:
    """Tool entry point: expression text in, observation text out."""
    try:
        return format_number(evaluate_expression(expression))
    except DivisionByZero:
        return "Error: division by zero"
    except (CalculatorError, OverflowError):
        return "Error: invalid expression"
