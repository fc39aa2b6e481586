"""Exception types raised across the package."""


class ViscStarError(Exception):
    """Base class for all package errors."""


class NoFiniteMassSolution(ViscStarError):
    pass


class IntegrationFailure(ViscStarError):
    pass


class NotCompact(ViscStarError):
    pass


class NormalizationError(ViscStarError):
    pass


class InsufficientPoints(ViscStarError):
    pass


class ProfileNotNormalized(ViscStarError):
    pass


class HistoryMissing(ViscStarError):
    pass


class SingularSystem(ViscStarError):
    pass


class NonFinite(ViscStarError):
    pass


class PicardDiverged(ViscStarError):
    pass


class DtUnderflow(ViscStarError):
    pass


class AnchorsViolateCondr(ViscStarError):
    """Cutoff anchors break one of 2d < r0, 3d < r2 - r1, 1/(r0 - d) <= 1."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = f"cutoff anchors violate {constraint}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ViewTooShort(ViscStarError):
    pass


class SeriesTooShort(ViscStarError):
    pass


class UnknownChoice(ViscStarError):
    pass


class ConfigError(ViscStarError):
    """Base for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class MonitorTripped(ViscStarError):
    """A run-time monitor (energy blow-up, M cap, NaN) aborted a run."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)
