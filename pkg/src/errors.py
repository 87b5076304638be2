"""Exception hierarchy shared by every LAFS component."""

from typing import List, Optional, Tuple


class LafsError(Exception):
    """Base class for all LAFS errors"""


class InvalidArgumentError(LafsError, ValueError):
    """Raised by sampling, scoring and metric primitives on bad arguments"""


class ConfigParseError(LafsError):
    """Configuration document is not well-formed JSON"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None,
                 field: Optional[str] = None):
        self.line = line
        self.column = column
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        if field:
            location.append(f"field '{field}'")
        where = f" ({', '.join(location)})" if location else ""
        super().__init__(f"Config parse error{where}: {message}")


class ConfigValidationError(LafsError):
    """
    One or more configuration invariants are violated

    Attributes:
        violations: list of (field_path, rule) pairs, in discovery order
    """

    def __init__(self, violations: List[Tuple[str, str]]):
        self.violations = list(violations)
        lines = [f"  - {path}: {rule}" for path, rule in self.violations]
        super().__init__("Config validation failed:\n" + "\n".join(lines))

    @property
    def first(self) -> Tuple[str, str]:
        return self.violations[0]


class BundleError(LafsError):
    """Output bundle is missing, malformed or inconsistent"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path:
            where = f" [{path}" + (f", line {line}" if line is not None else "") + "]"
        super().__init__(f"{message}{where}")
