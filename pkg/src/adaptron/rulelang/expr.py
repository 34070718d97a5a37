"""C-style trigger/parameter expressions.

Source text is tokenized, converted to Reverse Polish order with a
shunting-yard pass and then folded into an immutable tree that is
evaluated recursively against a state mapping.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

Value = Union[bool, int, float, str]


class ExpressionError(Exception):
    """Raised for malformed expression text."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class EvalError(Exception):
    """Raised when an expression cannot be evaluated against a state."""


# -- tree -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Literal:
    value: Value

    # 1 == True == 1.0 in Python; the tree must keep the types apart.
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Literal):
            return NotImplemented
        return type(self.value) is type(other.value) and self.value == other.value

    def __hash__(self) -> int:
        return hash((type(self.value).__name__, self.value))


@dataclass(frozen=True)
class VariableRef:
    key: str


@dataclass(frozen=True)
class UnaryOp:
    op: str
    operand: "Expression"


@dataclass(frozen=True)
class BinaryOp:
    op: str
    left: "Expression"
    right: "Expression"


Expression = Union[Literal, VariableRef, UnaryOp, BinaryOp]

# C precedence, higher binds tighter. Unary operators sit above all of these.
BINARY_PRECEDENCE = {
    "*": 10, "/": 10, "%": 10,
    "+": 9, "-": 9,
    "<": 8, "<=": 8, ">": 8, ">=": 8,
    "==": 7, "!=": 7,
    "&&": 6,
    "||": 5,
}
UNARY_PRECEDENCE = 11
UNARY_OPS = ("!", "-")


# -- lexer ------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # NUMBER, STRING, BOOL, IDENT, OP, LPAREN, RPAREN, NEWLINE
    text: str
    value: Value | None
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<op>&&|\|\||<=|>=|==|!=|[-+*/%<>!])
  | (?P<lparen>\()
  | (?P<rparen>\))
    """,
    re.VERBOSE,
)


def tokenize(text: str, *, keep_newlines: bool = False) -> list[Token]:
    """Split text into tokens; ``#`` comments and whitespace are dropped."""
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind == "newline":
            if keep_newlines:
                tokens.append(Token("NEWLINE", "\n", None, line, col))
            line += 1
            line_start = m.end()
        elif kind == "number":
            nxt = text[m.end(): m.end() + 1]
            if nxt and (nxt.isalnum() or nxt in "_."):
                bad = re.match(r"[A-Za-z0-9_.]+", text[pos:]).group()
                raise ExpressionError(f"malformed number {bad!r}", line, col)
            is_real = any(c in lexeme for c in ".eE")
            tokens.append(
                Token("NUMBER", lexeme, float(lexeme) if is_real else int(lexeme), line, col)
            )
        elif kind == "string":
            tokens.append(Token("STRING", lexeme, json.loads(lexeme), line, col))
        elif kind == "ident":
            if lexeme in ("true", "false"):
                tokens.append(Token("BOOL", lexeme, lexeme == "true", line, col))
            else:
                tokens.append(Token("IDENT", lexeme, None, line, col))
        elif kind == "op":
            tokens.append(Token("OP", lexeme, None, line, col))
        elif kind == "lparen":
            tokens.append(Token("LPAREN", lexeme, None, line, col))
        elif kind == "rparen":
            tokens.append(Token("RPAREN", lexeme, None, line, col))
        pos = m.end()
    return tokens


# -- shunting yard ----------------------------------------------------------

_OPERAND_KINDS = ("NUMBER", "STRING", "BOOL", "IDENT")


@dataclass(frozen=True)
class _Op:
    symbol: str
    unary: bool
    token: Token

    @property
    def precedence(self) -> int:
        return UNARY_PRECEDENCE if self.unary else BINARY_PRECEDENCE[self.symbol]


def to_rpn(tokens: Sequence[Token]) -> list[Token | _Op]:
    """Shunting-yard conversion to Reverse Polish order.

    Unary operators are right-associative, binary ones left-associative.
    """
    if not tokens:
        raise ExpressionError("empty expression")
    output: list[Token | _Op] = []
    stack: list[_Op | Token] = []
    expect_operand = True
    for tok in tokens:
        if tok.kind in _OPERAND_KINDS:
            if not expect_operand:
                raise ExpressionError(f"missing operator before {tok.text!r}", tok.line, tok.column)
            output.append(tok)
            expect_operand = False
        elif tok.kind == "OP":
            if expect_operand:
                if tok.text not in UNARY_OPS:
                    raise ExpressionError(
                        f"operator {tok.text!r} is missing its left operand", tok.line, tok.column
                    )
                stack.append(_Op(tok.text, True, tok))
                continue
            if tok.text == "!":
                raise ExpressionError("'!' cannot be used as a binary operator", tok.line, tok.column)
            op = _Op(tok.text, False, tok)
            while stack and isinstance(stack[-1], _Op) and stack[-1].precedence >= op.precedence:
                output.append(stack.pop())
            stack.append(op)
            expect_operand = True
        elif tok.kind == "LPAREN":
            if not expect_operand:
                raise ExpressionError("missing operator before '('", tok.line, tok.column)
            stack.append(tok)
        elif tok.kind == "RPAREN":
            if expect_operand:
                raise ExpressionError("empty or incomplete parenthesized group", tok.line, tok.column)
            while stack and isinstance(stack[-1], _Op):
                output.append(stack.pop())
            if not stack:
                raise ExpressionError("unbalanced parentheses: unmatched ')'", tok.line, tok.column)
            stack.pop()
        else:
            raise ExpressionError(f"unexpected token {tok.text!r}", tok.line, tok.column)
    if expect_operand:
        last = tokens[-1]
        raise ExpressionError(f"dangling operator {last.text!r}", last.line, last.column)
    while stack:
        top = stack.pop()
        if not isinstance(top, _Op):
            raise ExpressionError("unbalanced parentheses: unmatched '('", top.line, top.column)
        output.append(top)
    return output


def rpn_to_tree(rpn: Sequence[Token | _Op]) -> Expression:
    stack: list[Expression] = []
    for item in rpn:
        if isinstance(item, _Op):
            if item.unary:
                stack.append(UnaryOp(item.symbol, stack.pop()))
            else:
                right = stack.pop()
                left = stack.pop()
                stack.append(BinaryOp(item.symbol, left, right))
        elif item.kind == "IDENT":
            stack.append(VariableRef(item.text))
        else:
            stack.append(Literal(item.value))
    assert len(stack) == 1
    return stack[0]


def parse_tokens(tokens: Sequence[Token]) -> Expression:
    return rpn_to_tree(to_rpn(tokens))


def parse_expression(text: str) -> Expression:
    """Parse C-style expression text into an evaluable tree."""
    return parse_tokens(tokenize(text))


# -- evaluation -------------------------------------------------------------


def _is_number(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _arith(op: str, a: Value, b: Value) -> Value:
    if not (_is_number(a) and _is_number(b)):
        raise EvalError(f"type mismatch: {type(a).__name__} {op} {type(b).__name__}")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        raise EvalError("division by zero")
    if isinstance(a, int) and isinstance(b, int):
        # C semantics: truncate toward zero, remainder takes the dividend's sign
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        return q if op == "/" else a - q * b
    if op == "/":
        return a / b
    return math.fmod(a, b)


def _compare(op: str, a: Value, b: Value) -> bool:
    if op in ("==", "!="):
        same = (
            (_is_number(a) and _is_number(b))
            or (isinstance(a, bool) and isinstance(b, bool))
            or (isinstance(a, str) and isinstance(b, str))
        )
        if not same:
            raise EvalError(f"type mismatch: {type(a).__name__} {op} {type(b).__name__}")
        return (a == b) if op == "==" else (a != b)
    ordered = (_is_number(a) and _is_number(b)) or (isinstance(a, str) and isinstance(b, str))
    if not ordered:
        raise EvalError(f"type mismatch: {type(a).__name__} {op} {type(b).__name__}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _require_bool(v: Value, op: str) -> bool:
    if not isinstance(v, bool):
        raise EvalError(f"type mismatch: operator {op!r} needs a boolean, got {type(v).__name__}")
    return v


def eval_expression(expr: Expression, state: Mapping[str, Value]) -> Value:
    """Evaluate a tree; unknown variables, type mismatches and x/0 raise EvalError."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, VariableRef):
        try:
            return state[expr.key]
        except KeyError:
            raise EvalError(f"unknown variable {expr.key}") from None
    if isinstance(expr, UnaryOp):
        v = eval_expression(expr.operand, state)
        if expr.op == "!":
            return not _require_bool(v, "!")
        if not _is_number(v):
            raise EvalError(f"type mismatch: unary '-' on {type(v).__name__}")
        return -v
    op = expr.op
    if op in ("&&", "||"):
        left = _require_bool(eval_expression(expr.left, state), op)
        if op == "&&" and not left:
            return False
        if op == "||" and left:
            return True
        return _require_bool(eval_expression(expr.right, state), op)
    left = eval_expression(expr.left, state)
    right = eval_expression(expr.right, state)
    if op in ("+", "-", "*", "/", "%"):
        return _arith(op, left, right)
    return _compare(op, left, right)


def variables(expr: Expression) -> set[str]:
    """All state keys referenced by the tree."""
    if isinstance(expr, VariableRef):
        return {expr.key}
    if isinstance(expr, UnaryOp):
        return variables(expr.operand)
    if isinstance(expr, BinaryOp):
        return variables(expr.left) | variables(expr.right)
    return set()


# -- printing ---------------------------------------------------------------


def _literal_text(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".eE") else text + ".0"
    return str(value)


def expression_to_text(expr: Expression) -> str:
    """Render with the minimum parentheses needed to re-parse to the same tree."""
    if isinstance(expr, Literal):
        return _literal_text(expr.value)
    if isinstance(expr, VariableRef):
        return expr.key
    if isinstance(expr, UnaryOp):
        inner = expression_to_text(expr.operand)
        if isinstance(expr.operand, BinaryOp):
            inner = f"({inner})"
        elif isinstance(expr.operand, Literal) and _is_number(expr.operand.value) and expr.operand.value < 0:
            inner = f"({inner})"
        return f"{expr.op}{inner}"
    prec = BINARY_PRECEDENCE[expr.op]
    left = expression_to_text(expr.left)
    right = expression_to_text(expr.right)
    if isinstance(expr.left, BinaryOp) and BINARY_PRECEDENCE[expr.left.op] < prec:
        left = f"({left})"
    if isinstance(expr.right, BinaryOp) and BINARY_PRECEDENCE[expr.right.op] <= prec:
        right = f"({right})"
    return f"{left} {expr.op} {right}"
