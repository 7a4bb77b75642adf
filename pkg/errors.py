"""
Error hierarchy for the LighTN toolkit.

Every failure raised by the library derives from LighTNError so the CLI and the
HTTP layer can turn it into a machine-readable error document.
"""
from typing import Any, Dict, Optional


class LighTNError(Exception):
    """Base class for all toolkit errors"""

    code = "lightn_error"

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "detail": str(self)}


class DimensionError(LighTNError, ValueError):
    """Operand shapes do not agree"""

    code = "dimension_error"


class DomainError(LighTNError, ValueError):
    """Argument outside the operation's domain (e.g. m > N, t <= 0, empty cloud)"""

    code = "domain_error"


class ContractError(LighTNError):
    """A caller broke an operation contract (non-scalar loss, frozen params touched, ...)"""

    code = "contract_error"


class ConfigError(LighTNError):
    """Invalid configuration combination (raised through pydantic validators unchanged)"""

    code = "config_error"


class TrainingError(LighTNError):
    """Training diverged; carries diagnostics about the failing step"""

    code = "training_error"

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["diagnostics"] = self.diagnostics
        return payload


class PointCloudFormatError(LighTNError, ValueError):
    """A point file failed to parse; line numbers are 1-based"""

    code = "format_error"

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["line"] = self.line
        return payload


class UsageError(LighTNError):
    """Command line could not be parsed"""

    code = "usage_error"
