"""Exception types shared across the engine."""

from __future__ import annotations


class TaceplanError(Exception):
    """Base class for all engine errors."""

    code = "internal"


class InvalidArgumentError(TaceplanError, ValueError):
    code = "invalid-argument"


class NoForegroundError(TaceplanError):
    """Foreground-centered crop requested on a mask without tumor voxels."""

    code = "no-foreground"


class NoTumorError(TaceplanError):
    """Operation requires a non-empty tumor mask."""

    code = "no-tumor"


class EmptyLiverError(TaceplanError):
    code = "empty-liver"


class UnknownUnitError(TaceplanError):
    """Action unit has no weight in a non-empty efficacy table."""

    code = "unknown-unit"


class RuleViolationError(TaceplanError):
    """Combo violates one or more clinical rules."""

    code = "rule-violation"

    def __init__(self, violations):
        self.violations = list(violations)
        ids = ", ".join(v.rule_id for v in self.violations)
        super().__init__(f"combo violates clinical rules: {ids}")


class NonPositiveDenominatorError(TaceplanError):
    """Literal-form contrastive denominator is not positive."""

    code = "non-positive-denominator"


class InsufficientEventsError(TaceplanError):
    code = "insufficient-events"


class UndefinedResultError(TaceplanError):
    """No comparable pairs; the statistic is undefined."""

    code = "undefined-result"


class ExplorationDeadEndError(TaceplanError):
    """No rule-valid candidate action available at a search step."""

    code = "exploration-dead-end"

    def __init__(self, step: int, kind: str, beam: int):
        self.step = step
        self.kind = kind
        self.beam = beam
        super().__init__(
            f"no rule-valid {kind} candidate at step {step} (beam {beam})"
        )


class TooLargeError(TaceplanError):
    """Exhaustive enumeration would exceed the combinatorial bound."""

    code = "too-large"
