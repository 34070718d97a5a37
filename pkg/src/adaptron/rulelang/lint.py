"""Design-time validity checks for rule sets."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Collection

from .dsl import AdaptationKind, Location, RuleSet


@dataclass(frozen=True)
class LintDiagnostic:
    severity: str  # "error" | "warning"
    rule: str
    strategy: str | None
    message: str
    location: Location

    def __str__(self) -> str:
        scope = self.rule if self.strategy is None else f"{self.rule}/{self.strategy}"
        return f"{self.location}: {self.severity}: {scope}: {self.message}"


def validate_ruleset(
    rs: RuleSet, declared_nodes: Collection[str] | None = None
) -> list[LintDiagnostic]:
    """Return diagnostics; pass ``declared_nodes=None`` to skip target checks."""
    out: list[LintDiagnostic] = []

    for name, n in Counter(r.name for r in rs.rules).items():
        if n > 1:
            dup = [r for r in rs.rules if r.name == name][1]
            out.append(LintDiagnostic("error", name, None, f"duplicate rule name {name}", dup.location))

    for rule in rs.rules:
        for name, n in Counter(s.name for s in rule.strategies).items():
            if n > 1:
                dup = [s for s in rule.strategies if s.name == name][1]
                out.append(
                    LintDiagnostic("error", rule.name, name, f"duplicate strategy name {name}", dup.location)
                )

        total = sum(s.success_probability for s in rule.strategies)
        if total != 100:
            out.append(
                LintDiagnostic(
                    "warning",
                    rule.name,
                    None,
                    f"success probabilities sum to {total}, not 100 (treated as relative weights)",
                    rule.location,
                )
            )

        for strategy in rule.strategies:
            # True = added by this strategy, False = removed by this strategy.
            toggled: dict[str, bool] = {}
            for a in strategy.adaptations:
                if declared_nodes is not None and a.target not in declared_nodes:
                    out.append(
                        LintDiagnostic(
                            "error", rule.name, strategy.name, f"unknown target {a.target}", a.location
                        )
                    )
                if a.kind is AdaptationKind.ACTIVATE:
                    if toggled.get(a.target) is True:
                        out.append(
                            LintDiagnostic(
                                "error",
                                rule.name,
                                strategy.name,
                                f"adds node {a.target} twice without removing it",
                                a.location,
                            )
                        )
                    toggled[a.target] = True
                elif a.kind is AdaptationKind.DEACTIVATE:
                    if toggled.get(a.target) is False:
                        out.append(
                            LintDiagnostic(
                                "error",
                                rule.name,
                                strategy.name,
                                f"removes node {a.target} twice without adding it",
                                a.location,
                            )
                        )
                    toggled[a.target] = False
    return out
