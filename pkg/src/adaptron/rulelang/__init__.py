from .dsl import (
    AdaptationKind,
    AdaptationSpec,
    CriticalityLevel,
    Location,
    ParseError,
    Rule,
    RuleSet,
    Strategy,
    parse_ruleset,
    serialize_ruleset,
)
from .expr import (
    BinaryOp,
    EvalError,
    Expression,
    ExpressionError,
    Literal,
    UnaryOp,
    VariableRef,
    eval_expression,
    expression_to_text,
    parse_expression,
    variables,
)
from .lint import LintDiagnostic, validate_ruleset

__all__ = [
    "AdaptationKind",
    "AdaptationSpec",
    "BinaryOp",
    "CriticalityLevel",
    "EvalError",
    "Expression",
    "ExpressionError",
    "LintDiagnostic",
    "Literal",
    "Location",
    "ParseError",
    "Rule",
    "RuleSet",
    "Strategy",
    "UnaryOp",
    "VariableRef",
    "eval_expression",
    "expression_to_text",
    "parse_expression",
    "parse_ruleset",
    "serialize_ruleset",
    "validate_ruleset",
    "variables",
]
