"""Exception hierarchy shared by all lpvslc modules."""


class LpvSlcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LpvSlcError):
    """Malformed or inconsistent configuration input (files, dicts, arguments)."""


class DomainError(LpvSlcError):
    """A scheduling point or frequency lies outside the validated domain."""


class ModelError(LpvSlcError):
    """A plant or controller model violates a structural requirement."""


class DecouplingError(LpvSlcError):
    """Rigid-body actuation or sensing map is rank deficient at a position."""


class DesignInfeasibleError(LpvSlcError):
    """No controller in the search family satisfies the stability/robustness bounds."""


class NumericalError(LpvSlcError):
    """A numerical procedure diverged or hit a singular/ill-conditioned case."""
