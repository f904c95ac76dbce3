"""Exception types shared across the package."""


class KanfpnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(KanfpnError):
    """Operands have incompatible shapes."""


class InvalidGeometry(KanfpnError):
    """A spatial operation would produce an empty or inconsistent output."""


class NotScalar(KanfpnError):
    """backward() was called on a non-scalar root."""


class NoTape(KanfpnError):
    """Gradient information was requested but no live tape is attached."""


class DegenerateInput(KanfpnError):
    """Input admits no well-defined result (e.g. normalizing a single value with eps=0)."""


class DomainViolation(KanfpnError):
    """Value left the domain an operation is defined on."""


class InvalidSpec(KanfpnError):
    """A layer or model configuration is internally inconsistent."""


class PlacementFailure(KanfpnError):
    """Scene generation could not place a figure within the image bounds."""


class NonFiniteLoss(KanfpnError):
    """Training produced a NaN or infinite loss."""


class UnknownScope(KanfpnError):
    """gradcheck was asked for a scope that does not exist."""


class CheckpointMismatch(KanfpnError):
    """Checkpoint contents do not match the target model's parameter set."""
