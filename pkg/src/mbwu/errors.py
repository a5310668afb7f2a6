"""Exception types shared across the package."""


class MbwuError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(MbwuError, ValueError):
    """A workload, platform or scenario description is malformed."""


class AbortedLoadError(MbwuError):
    """The load phase stopped before every record was inserted."""

    def __init__(self, message, inserted):
        super().__init__(message)
        self.inserted = inserted


class PartialRunError(MbwuError):
    """One or more run-phase workers failed."""

    def __init__(self, message, worker_status):
        super().__init__(message)
        self.worker_status = worker_status


class InsufficientDataError(MbwuError, ValueError):
    pass


class MeasurementFailedError(MbwuError):
    """No sweep point reached steady state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class UndefinedEfficiencyError(MbwuError, ZeroDivisionError):
    pass


class IncomparableResultsError(MbwuError):
    """Two reports were normalized by different MBWU units."""


class SafetyRefusalError(MbwuError):
    """A destructive action was requested without confirmation."""


class PreconditionError(MbwuError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(MbwuError, ValueError):
    pass


class IncompleteCampaignError(MbwuError):
    def __init__(self, missing):
        super().__init__("campaign incomplete, missing: " + ", ".join(missing))
        self.missing = list(missing)
