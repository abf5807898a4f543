from logging import Logger
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple


Violation = Tuple[str, Optional[int], str]


class SimulationError(Exception):
    """
    Base exception for simulation failures with detailed error information.

    Attributes:
        message (str): Error message
        error_type (str): Type of error encountered
        error_location (str): Where in the simulation the error occurred
        original_error (Exception, optional): The original exception that caused this error
        details (dict, optional): Structured context for reports
    """

    exit_code: int = 2

    def __init__(
        self,
        message: str,
        error_type: str = "Unknown",
        error_location: str = "Unknown",
        original_error: Optional[Exception] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.error_type = error_type
        self.error_location = error_location
        self.original_error = original_error
        self.details = details or {}

        detailed_message = (
            f"{self.message} "
            f"[type={self.error_type}, location={self.error_location}"
            f"{', cause=' + str(self.original_error) if self.original_error else ''}]"
        )
        super().__init__(detailed_message)

    def get_error_dict(self) -> dict:
        """
        Get error information as a dictionary.

        Returns:
            dict: Error information in dictionary format
        """
        return {
            "message": self.message,
            "error_type": self.error_type,
            "location": self.error_location,
            "original_error": str(self.original_error) if self.original_error else None,
            "details": self.details,
        }

    def log_error(self, logger: Logger) -> None:
        """
        Log the error using the provided logger.

        Args:
            logger: Logger instance to use for logging
        """
        logger.error(f"{type(self).__name__}: {self.message}")
        logger.debug(f"Error Type: {self.error_type}")
        logger.debug(f"Location: {self.error_location}")
        if self.original_error:
            logger.debug(f"Original Error: {str(self.original_error)}")
        for key, value in self.details.items():
            logger.debug(f"{key}: {value}")


class ConfigurationError(SimulationError):
    """Invalid scenario, schema, reference or simplex violation."""

    exit_code = 2

    def __init__(
        self,
        message: str,
        violations: Optional[Sequence[Violation]] = None,
        error_type: str = "ConfigurationError",
        error_location: str = "Scenario",
        original_error: Optional[Exception] = None,
    ):
        self.violations: List[Violation] = list(violations or [])
        super().__init__(
            message,
            error_type=error_type,
            error_location=error_location,
            original_error=original_error,
            details={"violations": [self.format_violation(v) for v in self.violations]},
        )

    @staticmethod
    def format_violation(violation: Violation) -> str:
        field, line, text = violation
        where = f"{field} (line {line})" if line is not None else field
        return f"{where}: {text}"

    @classmethod
    def from_validation_error(
        cls,
        error: Exception,
        source: str,
        line_for: Mapping[Tuple[Any, ...], int],
    ) -> "ConfigurationError":
        """
        Create a configuration error from a pydantic validation error.

        Args:
            error: The pydantic ``ValidationError``
            source: File the data came from
            line_for: Map from key path to 1-based source line

        Returns:
            ConfigurationError: One violation per pydantic error
        """
        violations: List[Violation] = []
        for item in error.errors():
            loc = tuple(item.get("loc", ()))
            field = ".".join(str(part) for part in loc) or "<root>"
            violations.append((field, _nearest_line(loc, line_for), item.get("msg", "")))
        return cls(
            message=f"{source}: {len(violations)} schema violation(s)",
            violations=violations,
            error_type="SchemaViolation",
            error_location=source,
            original_error=error,
        )

    @classmethod
    def from_reference(
        cls, field: str, name: str, line: Optional[int] = None
    ) -> "ConfigurationError":
        return cls(
            message=f"unresolved reference '{name}' in {field}",
            violations=[(field, line, f"unknown name '{name}'")],
            error_type="ReferenceError",
        )

    @classmethod
    def from_missing_file(cls, path: str) -> "ConfigurationError":
        return cls(
            message=f"scenario not found: {path}",
            violations=[("path", None, "no such scenario file or bundled name")],
            error_type="MissingFile",
            error_location=path,
        )


class ContractViolationError(ConfigurationError, ValueError):
    """Dimension or shape mismatch between numeric operands."""

    def __init__(self, message: str, error_location: str = "Numerics"):
        super().__init__(
            message,
            violations=[(error_location, None, message)],
            error_type="ContractViolation",
            error_location=error_location,
        )


class DegenerateReductionError(ConfigurationError):
    """Reduced posterior precision is not positive definite."""

    def __init__(self, model: str, original_error: Optional[Exception] = None):
        super().__init__(
            f"reduced posterior precision of model '{model}' is not positive definite",
            violations=[(f"reduced.{model}", None, "P_x + Pi_m - Pi_x not positive definite")],
            error_type="DegenerateReduction",
            error_location=model,
            original_error=original_error,
        )


class NumericAbortError(SimulationError):
    """A belief became non-finite during a tick."""

    exit_code = 3

    def __init__(self, term: str, module_path: str = "", tick: Optional[int] = None):
        self.term = term
        self.module_path = module_path
        self.tick = tick
        location = module_path or term
        super().__init__(
            f"non-finite value in {term}"
            + (f" at {module_path}" if module_path else "")
            + (f" (tick {tick})" if tick is not None else ""),
            error_type="NumericAbort",
            error_location=location,
            details={"term": term, "module_path": module_path, "tick": tick},
        )

    def at_tick(self, tick: int, prefix: str = "") -> "NumericAbortError":
        path = f"{prefix}/{self.module_path}" if prefix and self.module_path else (prefix or self.module_path)
        return NumericAbortError(self.term, path, tick)


class PlotError(SimulationError):
    """Plot request cannot be satisfied by the given CSV."""

    exit_code = 2

    def __init__(self, message: str, available: Optional[Sequence[str]] = None):
        self.available = list(available or [])
        super().__init__(
            message,
            error_type="PlotError",
            error_location="plot",
            details={"available": self.available},
        )


def _nearest_line(loc: Tuple[Any, ...], line_for: Mapping[Tuple[Any, ...], int]) -> Optional[int]:
    for size in range(len(loc), -1, -1):
        line = line_for.get(tuple(loc[:size]))
        if line is not None:
            return line
    return None
