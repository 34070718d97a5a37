"""Rule-set types plus the line-oriented DSL parser and serializer.

Grammar::

    ruleset  := rule*
    rule     := "RULE" ident "POLICIES" level "TRIGGER" expr strategy+
    strategy := "STRATEGY" ident int adaptation+
    adaptation := "ADAPTATION" ident kind kind_params int

An expression runs until the next keyword token or the end of its line.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .expr import (
    Expression,
    ExpressionError,
    Token,
    expression_to_text,
    parse_tokens,
    tokenize,
)

KEYWORDS = ("RULE", "POLICIES", "TRIGGER", "STRATEGY", "ADAPTATION")


class CriticalityLevel(enum.IntEnum):
    OK = 0
    WARNING = 1
    ERROR = 2


class AdaptationKind(enum.Enum):
    REPARAMETRIZE = "set_parameter"
    COMMUNICATION_CHANGE = "change_communication"
    ACTIVATE = "activate"
    DEACTIVATE = "deactivate"
    REDEPLOY = "redeploy"
    MODE_CHANGE = "set_mode"


@dataclass(frozen=True)
class Location:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


_NOWHERE = Location(0, 0)


@dataclass(frozen=True)
class AdaptationSpec:
    """One change to one managed node.

    ``name`` is the parameter (set_parameter), subscription
    (change_communication) or mode (set_mode); ``value`` is the parameter
    expression and ``topic`` the new source topic.
    """

    target: str
    kind: AdaptationKind
    impact_ticks: int
    name: str | None = None
    value: Expression | None = None
    topic: str | None = None
    location: Location = field(default=_NOWHERE, compare=False)

    def __post_init__(self) -> None:
        if not self.target:
            raise ValueError("adaptation target must be a non-empty identifier")
        if self.impact_ticks < 0:
            raise ValueError("impact_ticks must be >= 0")


@dataclass(frozen=True)
class Strategy:
    name: str
    success_probability: int
    adaptations: tuple[AdaptationSpec, ...]
    location: Location = field(default=_NOWHERE, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.success_probability <= 100:
            raise ValueError("success probability must be within [0, 100]")
        if not self.adaptations:
            raise ValueError(f"strategy {self.name} has no adaptations")

    @property
    def impact(self) -> int:
        """Worst-case impact: the slowest adaptation decides."""
        return max(a.impact_ticks for a in self.adaptations)

    @property
    def affected_nodes(self) -> frozenset[str]:
        return frozenset(a.target for a in self.adaptations)


@dataclass(frozen=True)
class Rule:
    name: str
    criticality: CriticalityLevel
    trigger: Expression
    strategies: tuple[Strategy, ...]
    location: Location = field(default=_NOWHERE, compare=False)

    @property
    def affected_nodes(self) -> frozenset[str]:
        return frozenset().union(*(s.affected_nodes for s in self.strategies))


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()

    @property
    def i_max(self) -> int:
        """Highest strategy impact in the file; 1 when every impact is 0."""
        impacts = [s.impact for r in self.rules for s in r.strategies]
        return max([1, *impacts])

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def __iter__(self):
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)


class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: Sequence[Token]):
        self.tokens = list(tokens)
        self.pos = 0

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def skip_newlines(self) -> None:
        while (tok := self.peek()) is not None and tok.kind == "NEWLINE":
            self.pos += 1

    def _end_position(self) -> tuple[int, int]:
        if self.tokens:
            last = self.tokens[min(self.pos, len(self.tokens)) - 1]
            return last.line, last.column + len(last.text)
        return 1, 1

    def next_word(self, what: str) -> Token:
        """Next non-newline token, which must exist."""
        self.skip_newlines()
        tok = self.peek()
        if tok is None:
            raise ParseError(f"missing {what} at end of input", *self._end_position())
        self.pos += 1
        return tok

    def expect_keyword(self, keyword: str, context: str) -> Token:
        self.skip_newlines()
        tok = self.peek()
        if tok is None or not (tok.kind == "IDENT" and tok.text == keyword):
            where = (tok.line, tok.column) if tok else self._end_position()
            found = f", found {tok.text!r}" if tok else ""
            raise ParseError(f"missing {keyword} in {context}{found}", *where)
        self.pos += 1
        return tok

    def ident(self, what: str) -> Token:
        tok = self.next_word(what)
        if tok.kind != "IDENT" or tok.text in KEYWORDS:
            raise ParseError(f"expected {what}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def integer(self, what: str) -> Token:
        tok = self.next_word(what)
        if tok.kind != "NUMBER" or not isinstance(tok.value, int):
            raise ParseError(
                f"malformed number {tok.text!r}: expected integer {what}", tok.line, tok.column
            )
        return tok

    def expression_tokens(self) -> list[Token]:
        """Tokens up to the next keyword or end of line."""
        out: list[Token] = []
        while (tok := self.peek()) is not None:
            if tok.kind == "NEWLINE" or (tok.kind == "IDENT" and tok.text in KEYWORDS):
                break
            out.append(tok)
            self.pos += 1
        return out

    def at_keyword(self, keyword: str) -> bool:
        self.skip_newlines()
        tok = self.peek()
        return tok is not None and tok.kind == "IDENT" and tok.text == keyword

    # grammar

    def ruleset(self) -> RuleSet:
        rules = []
        while True:
            self.skip_newlines()
            tok = self.peek()
            if tok is None:
                break
            if not (tok.kind == "IDENT" and tok.text == "RULE"):
                if tok.kind == "IDENT" and tok.text in KEYWORDS:
                    raise ParseError(f"{tok.text} outside of a RULE", tok.line, tok.column)
                raise ParseError(f"unknown keyword {tok.text!r}, expected RULE", tok.line, tok.column)
            rules.append(self.rule())
        return RuleSet(tuple(rules))

    def rule(self) -> Rule:
        start = self.expect_keyword("RULE", "rule")
        name = self.ident("rule name")
        self.expect_keyword("POLICIES", f"rule {name.text}")
        level_tok = self.next_word("criticality level")
        valid = ", ".join(lv.name for lv in CriticalityLevel)
        if level_tok.kind != "IDENT" or level_tok.text not in CriticalityLevel.__members__:
            raise ParseError(
                f"invalid criticality level {level_tok.text!r}; expected one of {valid}",
                level_tok.line,
                level_tok.column,
            )
        trig_kw = self.expect_keyword("TRIGGER", f"rule {name.text}")
        trigger = self._expression(self.expression_tokens(), trig_kw, "TRIGGER")
        strategies = []
        while self.at_keyword("STRATEGY"):
            strategies.append(self.strategy())
        if not strategies:
            raise ParseError(
                f"rule {name.text} has an empty strategy list", start.line, start.column
            )
        return Rule(
            name.text,
            CriticalityLevel[level_tok.text],
            trigger,
            tuple(strategies),
            Location(start.line, start.column),
        )

    def strategy(self) -> Strategy:
        start = self.expect_keyword("STRATEGY", "strategy")
        name = self.ident("strategy name")
        prob = self.integer("success probability")
        if not 0 <= prob.value <= 100:
            raise ParseError(
                f"success probability {prob.value} outside [0, 100]", prob.line, prob.column
            )
        adaptations = []
        while self.at_keyword("ADAPTATION"):
            adaptations.append(self.adaptation())
        if not adaptations:
            raise ParseError(
                f"strategy {name.text} has no ADAPTATION lines", start.line, start.column
            )
        return Strategy(name.text, prob.value, tuple(adaptations), Location(start.line, start.column))

    def adaptation(self) -> AdaptationSpec:
        start = self.expect_keyword("ADAPTATION", "adaptation")
        loc = Location(start.line, start.column)
        target = self.ident("adaptation target")
        kind_tok = self.ident("adaptation kind")
        try:
            kind = AdaptationKind(kind_tok.text)
        except ValueError:
            valid = ", ".join(k.value for k in AdaptationKind)
            raise ParseError(
                f"unknown adaptation kind {kind_tok.text!r}; expected one of {valid}",
                kind_tok.line,
                kind_tok.column,
            ) from None
        if kind is AdaptationKind.REPARAMETRIZE:
            param = self.ident("parameter name")
            rest = self.expression_tokens()
            if not rest or rest[-1].kind != "NUMBER" or not isinstance(rest[-1].value, int):
                where = rest[-1] if rest else param
                raise ParseError("missing integer system impact", where.line, where.column)
            value = self._expression(rest[:-1], param, "parameter value")
            return AdaptationSpec(target.text, kind, rest[-1].value, param.text, value, None, loc)
        name = topic = None
        if kind is AdaptationKind.COMMUNICATION_CHANGE:
            name = self.ident("subscription name").text
            topic = self.ident("topic name").text
        elif kind is AdaptationKind.MODE_CHANGE:
            name = self.ident("mode name").text
        impact = self.integer("system impact")
        return AdaptationSpec(target.text, kind, impact.value, name, None, topic, loc)

    @staticmethod
    def _expression(tokens: list[Token], anchor: Token, what: str) -> Expression:
        if not tokens:
            raise ParseError(f"missing {what} expression", anchor.line, anchor.column)
        try:
            return parse_tokens(tokens)
        except ExpressionError as exc:
            raise ParseError(exc.message, exc.line, exc.column) from None


def parse_ruleset(text: str) -> RuleSet:
    """Parse DSL source; errors carry line and column."""
    try:
        tokens = tokenize(text, keep_newlines=True)
    except ExpressionError as exc:
        raise ParseError(exc.message, exc.line, exc.column) from None
    return _Parser(tokens).ruleset()


# -- serializer -------------------------------------------------------------


def _adaptation_text(a: AdaptationSpec) -> str:
    parts = [a.target, a.kind.value]
    if a.kind is AdaptationKind.REPARAMETRIZE:
        parts += [a.name, expression_to_text(a.value)]
    elif a.kind is AdaptationKind.COMMUNICATION_CHANGE:
        parts += [a.name, a.topic]
    elif a.kind is AdaptationKind.MODE_CHANGE:
        parts.append(a.name)
    parts.append(str(a.impact_ticks))
    return "ADAPTATION " + " ".join(parts)


def serialize_ruleset(rs: RuleSet | Iterable[Rule]) -> str:
    lines: list[str] = []
    for rule in rs:
        if lines:
            lines.append("")
        lines.append(f"RULE {rule.name}")
        lines.append(f"  POLICIES {rule.criticality.name}")
        lines.append(f"  TRIGGER {expression_to_text(rule.trigger)}")
        for s in rule.strategies:
            lines.append(f"    STRATEGY {s.name} {s.success_probability}")
            lines.extend(f"      {_adaptation_text(a)}" for a in s.adaptations)
    return "\n".join(lines) + ("\n" if lines else "")
