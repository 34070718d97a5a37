import itertools
import math
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptron.rulelang import (
    BinaryOp,
    EvalError,
    ExpressionError,
    Literal,
    UnaryOp,
    VariableRef,
    eval_expression,
    expression_to_text,
    parse_expression,
    variables,
)


# -- independent reference: precedence climbing over a separate lexer --------

_REF_TOKEN = re.compile(r"\s*(\d+\.\d*|\d+|true|false|[A-Za-z_][\w.]*|&&|\|\||<=|>=|==|!=|[-+*/%<>!()])")
_REF_PREC = [("||",), ("&&",), ("==", "!="), ("<", "<=", ">", ">="), ("+", "-"), ("*", "/", "%")]


def _ref_tokens(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _REF_TOKEN.match(text, pos)
        assert m, text[pos:]
        out.append(m.group(1))
        pos = m.end()
    return out


def ref_parse(text):
    toks = _ref_tokens(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def level(i):
        nonlocal pos
        if i == len(_REF_PREC):
            return unary()
        left = level(i + 1)
        while peek() in _REF_PREC[i]:
            op = toks[pos]
            pos += 1
            left = BinaryOp(op, left, level(i + 1))
        return left

    def unary():
        nonlocal pos
        if peek() in ("!", "-"):
            op = toks[pos]
            pos += 1
            return UnaryOp(op, unary())
        return atom()

    def atom():
        nonlocal pos
        tok = toks[pos]
        pos += 1
        if tok == "(":
            inner = level(0)
            assert toks[pos] == ")"
            pos += 1
            return inner
        if tok in ("true", "false"):
            return Literal(tok == "true")
        if tok[0].isdigit():
            return Literal(float(tok) if "." in tok else int(tok))
        return VariableRef(tok)

    tree = level(0)
    assert pos == len(toks)
    return tree


class RefError(Exception):
    pass


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def ref_eval(tree, env):
    if isinstance(tree, Literal):
        return tree.value
    if isinstance(tree, VariableRef):
        if tree.key not in env:
            raise RefError
        return env[tree.key]
    if isinstance(tree, UnaryOp):
        v = ref_eval(tree.operand, env)
        if tree.op == "!":
            if not isinstance(v, bool):
                raise RefError
            return not v
        if not _num(v):
            raise RefError
        return -v
    op = tree.op
    if op in ("&&", "||"):
        a = ref_eval(tree.left, env)
        if not isinstance(a, bool):
            raise RefError
        if (op == "&&") != a:
            return a
        b = ref_eval(tree.right, env)
        if not isinstance(b, bool):
            raise RefError
        return b
    a, b = ref_eval(tree.left, env), ref_eval(tree.right, env)
    if op in "+-*/%":
        if not (_num(a) and _num(b)):
            raise RefError
        if op in "/%" and b == 0:
            raise RefError
        if op == "/" and isinstance(a, int) and isinstance(b, int):
            return int(a / b)
        if op == "%" and isinstance(a, int) and isinstance(b, int):
            return a - b * int(a / b)
        if op == "%":
            return math.fmod(a, b)
        if op == "/":
            return a / b
        return {"+": a + b, "-": a - b, "*": a * b}[op]
    if op in ("==", "!="):
        if not ((_num(a) and _num(b)) or (type(a) is type(b) and not _num(a))):
            raise RefError
        return (a == b) == (op == "==")
    if not ((_num(a) and _num(b)) or (isinstance(a, str) and isinstance(b, str))):
        raise RefError
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]


# -- random expression text ---------------------------------------------------

_atoms = st.one_of(
    st.integers(0, 30).map(str),
    st.sampled_from(["0.5", "2.0", "1.25"]),
    st.sampled_from(["true", "false"]),
    st.sampled_from(["a", "b", "p", "q", "cam.freq"]),
)
_binops = st.sampled_from(["||", "&&", "==", "!=", "<", "<=", ">", ">=", "+", "-", "*", "/", "%"])


def _expr_text(children):
    chain = st.lists(st.tuples(_binops, children), max_size=4)
    return st.tuples(st.sampled_from(["", "-", "!", "- "]), children, chain).map(
        lambda t: t[0] + t[1] + "".join(f" {op} {rhs}" for op, rhs in t[2])
    )


expr_texts = st.recursive(_atoms, lambda c: _expr_text(c) | c.map(lambda s: f"({s})"), max_leaves=12)
envs = st.fixed_dictionaries(
    {
        "a": st.integers(-5, 5),
        "b": st.integers(-5, 5),
        "p": st.booleans(),
        "q": st.booleans(),
        "cam.freq": st.floats(-10, 10, allow_nan=False),
    }
)


@settings(max_examples=400, deadline=None)
@given(expr_texts)
def test_shunting_yard_matches_reference_parser(text):
    assert parse_expression(text) == ref_parse(text)


@settings(max_examples=400, deadline=None)
@given(expr_texts, envs)
def test_evaluation_matches_reference(text, env):
    tree = parse_expression(text)
    try:
        expected = ref_eval(tree, env)
    except RefError:
        with pytest.raises(EvalError):
            eval_expression(tree, env)
        return
    except (ZeroDivisionError, OverflowError):
        return
    got = eval_expression(tree, env)
    assert type(got) is type(expected)
    assert got == pytest.approx(expected) if isinstance(got, float) else got == expected


@settings(max_examples=300, deadline=None)
@given(expr_texts)
def test_printer_round_trips(text):
    tree = parse_expression(text)
    assert parse_expression(expression_to_text(tree)) == tree


def test_boolean_truth_table():
    cases = {
        "p && q || !r": lambda p, q, r: (p and q) or not r,
        "p || q && r": lambda p, q, r: p or (q and r),
        "!(p || q) == (!p && !q)": lambda p, q, r: True,
        "p != q && r": lambda p, q, r: (p != q) and r,
    }
    for text, fn in cases.items():
        tree = parse_expression(text)
        for p, q, r in itertools.product([False, True], repeat=3):
            assert eval_expression(tree, {"p": p, "q": q, "r": r}) is fn(p, q, r), (text, p, q, r)


@pytest.mark.parametrize(
    "text, value",
    [
        ("1 + 2 * 3", 7),
        ("(1 + 2) * 3", 9),
        ("10 - 4 - 3", 3),
        ("7 / 2", 3),
        ("-7 / 2", -3),
        ("-7 % 3", -1),
        ("7 % -3", 1),
        ("7.0 / 2", 3.5),
        ("2 * 0.5 == 1", True),
        ("--3", 3),
        ("!true || true", True),
        ("1 < 2 == true", True),
        ("\"abc\" < \"abd\"", True),
        ("1e2 > 99", True),
    ],
)
def test_examples(text, value):
    got = eval_expression(parse_expression(text), {})
    assert got == value and type(got) is type(value)


def test_short_circuit_skips_errors_on_the_right():
    assert eval_expression(parse_expression("false && 1 / 0 == 1"), {}) is False
    assert eval_expression(parse_expression("true || missing"), {}) is True


@pytest.mark.parametrize(
    "text, state",
    [
        ("1 / 0", {}),
        ("5 % 0", {}),
        ("1 < true", {}),
        ("!1", {}),
        ("-true", {}),
        ("1 && true", {}),
        ("true == 1", {}),
        ("x > 0", {}),
        ("s + 1", {"s": "a"}),
    ],
)
def test_eval_errors(text, state):
    with pytest.raises(EvalError):
        eval_expression(parse_expression(text), state)


@pytest.mark.parametrize(
    "text, column",
    [
        ("", 1),
        ("1 +", 3),
        ("(1 + 2", 1),
        ("1 + 2)", 6),
        ("1 ! 2", 3),
        ("* 2", 1),
        ("1 2", 3),
        ("3abc", 1),
        ("1 @ 2", 3),
    ],
)
def test_syntax_errors_carry_position(text, column):
    with pytest.raises(ExpressionError) as exc:
        parse_expression(text)
    assert exc.value.line == 1
    assert exc.value.column == column


def test_dotted_identifiers_are_single_variables():
    tree = parse_expression("rgb_raw.frequency < 1.0 && segmentation_entropy > 0.06")
    assert variables(tree) == {"rgb_raw.frequency", "segmentation_entropy"}
    assert eval_expression(tree, {"rgb_raw.frequency": 0.0, "segmentation_entropy": 0.08}) is True


def test_int_widens_to_float_in_comparisons():
    assert eval_expression(parse_expression("x >= 1"), {"x": 1.0}) is True
    assert eval_expression(parse_expression("x + 1"), {"x": 0.5}) == 1.5
