from typing import Any, Optional


class MmotError(Exception):
    """Base class for every error raised by the laboratory."""


class EmptyMeasureError(MmotError):

    def __init__(self, message: str = "empty measure"):
        super().__init__(message)


class InvalidMeasureError(MmotError):
    pass


class ConvexOrderError(MmotError):

    def __init__(self, message: str, witness: Optional[Any] = None):
        super().__init__(message)
        self.witness = witness


class DegenerateComponentError(MmotError):

    def __init__(self, message: str = "degenerate component"):
        super().__init__(message)


class IterationLimitError(MmotError):

    def __init__(self, diagnostics: dict[str, Any]):
        details = ", ".join(f"{key}={value}" for key, value in diagnostics.items())
        super().__init__(f"iteration limit ({details})")
        self.diagnostics = diagnostics


class InfeasibleProblemError(MmotError):

    def __init__(self, message: str, certificate: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.certificate = certificate or {}


class UncertifiedDualError(MmotError):

    def __init__(self, report: Any, message: str = "uncertified dual"):
        super().__init__(f"{message}: {report}")
        self.report = report


class DegenerateSupportError(MmotError):

    def __init__(self, message: str = "degenerate support"):
        super().__init__(message)


class OutsideHullError(MmotError):

    def __init__(self, message: str = "outside hull"):
        super().__init__(message)


class KinkEncounteredError(MmotError):

    def __init__(self, message: str = "kink encountered"):
        super().__init__(message)


class NotThreePointError(MmotError):

    def __init__(self, message: str = "not three-point"):
        super().__init__(message)


class ScenarioParseError(MmotError):
    exit_code = 2

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class StageFailure(MmotError):
    exit_code = 1

    def __init__(self, stage: str, assertion: str):
        super().__init__(f"stage '{stage}' failed: {assertion}")
        self.stage = stage
        self.assertion = assertion
