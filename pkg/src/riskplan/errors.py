"""Exception types shared across the package."""


class RiskplanError(Exception):
    """Base class for package errors."""


class ParseError(RiskplanError):
    """A map, trajectory, scenario, config, or suite file is malformed."""


class ValidationError(RiskplanError):
    """Parsed data violates a structural invariant (occupied start, bad timestamps, ...)."""


class NoObservation(RiskplanError):
    """An obstacle has no observed sample at or before the requested time."""


class EmptyRegion(RiskplanError):
    """A sampling region contains no cells."""


class GeneratorFailure(RiskplanError):
    """An external region generator violated the wire protocol."""


class GenerationFailure(RiskplanError):
    """Random map generation could not place the required free space."""


class ConfigError(RiskplanError):
    """Planner or suite configuration is invalid (unknown keys, bad values)."""
