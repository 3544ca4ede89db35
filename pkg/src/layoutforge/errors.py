"""Exception hierarchy.

Validation problems (bad inputs, violated preconditions) derive from
``ValidationError``; numerical or sampling failures derive from
``RuntimeFailure``. The CLI maps the former to exit code 1 and the latter
to exit code 2.
"""


class LayoutForgeError(Exception):
    pass


class ValidationError(LayoutForgeError, ValueError):
    pass


class RuntimeFailure(LayoutForgeError, RuntimeError):
    pass


class TooManyObjects(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class MaskResidue(RuntimeFailure):
    """A decoded state still contains MASK; sampling did not finish."""


class CoincidentCenters(ValidationError):
    """Relative orientation is undefined for coincident centers."""


class OutOfGamut(ValidationError):
    pass


class InvalidSchedule(ValidationError):
    pass


class UnreachableState(ValidationError):
    pass


class DegenerateRotation(ValidationError):
    pass


class InconsistentPartial(ValidationError):
    pass


class EmptyRequirement(ValidationError):
    pass


class TooFewElements(ValidationError):
    pass


class NoProductRegion(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class GrammarFailure(RuntimeFailure):
    pass


class BadRatios(ValidationError):
    pass


class DivergedLoss(RuntimeFailure):
    pass


class ConfigError(ValidationError):
    pass
