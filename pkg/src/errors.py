"""
Exception hierarchy shared by the filter, the simulator and the command line.
"""
from typing import Optional


class PbfError(Exception):
    """Base class for every error raised by this package."""


class PossibilityError(PbfError, ValueError):
    """
    An object that should be a possibility function is not one: a covariance
    that is not positive-definite, a dimension mismatch, a supremum that is
    not 1, a non-positive rate.
    """


class ModelViolationError(PbfError):
    """
    The data is impossible under the configured models, e.g. a scan with
    zero clutter possibility or a likelihood that vanishes on the whole
    particle support.
    """


class DegenerateUpdateError(ModelViolationError):
    """The Bernoulli recursion has no valid normaliser."""


class ConfigError(PbfError, ValueError):
    """
    Scenario configuration failed to load or validate.
    `field` is the dotted path of the offending entry, e.g. `sensors[2].d0`.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)
