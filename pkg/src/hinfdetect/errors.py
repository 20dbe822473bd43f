"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class HinfDetectError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(HinfDetectError):
    """Malformed or inconsistent scenario description (CLI exit code 2)."""


class ScenarioSyntaxError(ConfigError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"syntax error{where}: {message}")


class SchemaError(ConfigError):
    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


class Violation:
    """One failed check found by scenario validation."""

    __slots__ = ("check", "where")

    def __init__(self, where: str, check: str) -> None:
        self.where = where
        self.check = check

    def __repr__(self) -> str:
        return f"Violation({self.where!r}, {self.check!r})"

    def __str__(self) -> str:
        return f"{self.where}: {self.check}"


class ScenarioValidationError(ConfigError):
    def __init__(self, violations: list[Violation]) -> None:
        self.violations = list(violations)
        lines = "\n  ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} scenario violation(s):\n  {lines}")


class ParameterError(HinfDetectError, ValueError):
    """Invalid numeric parameter passed to a library call."""


class DomainError(HinfDetectError, ValueError):
    """Argument outside the domain where the quantity is defined."""


class AssumptionViolation(HinfDetectError):
    """A standing assumption of the design (e.g. E_i(t) > 0) fails."""


class InfeasibleError(HinfDetectError):
    """Design conditions are not met (CLI exit code 1)."""


class RiccatiBoundError(InfeasibleError):
    """Riccati solution left the [alpha_min, alpha_max] band."""

    def __init__(self, t: float, min_eig: float, max_eig: float, node: int | None = None) -> None:
        self.t = t
        self.min_eig = min_eig
        self.max_eig = max_eig
        self.node = node
        who = f"node {node + 1}: " if node is not None else ""
        super().__init__(
            f"{who}unbounded/indefinite Riccati solution at t={t:.6g} "
            f"(min eig {min_eig:.3e}, max eig {max_eig:.3e})"
        )


class DivergenceError(InfeasibleError):
    def __init__(self, t: float, norm: float) -> None:
        self.t = t
        self.norm = norm
        super().__init__(f"simulation diverged at t={t:.6g} (state norm {norm:.3e})")


class InsufficientDataError(HinfDetectError, ValueError):
    pass
