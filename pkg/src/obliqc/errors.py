"""Exception hierarchy shared by every layer of the engine."""


class ObliqcError(Exception):
    """Base class for all engine errors."""


# codec
class OutOfRange(ObliqcError, ValueError):
    pass


class PrecisionLoss(ObliqcError, ValueError):
    pass


class ConfigMismatch(ObliqcError, ValueError):
    pass


# oblivious backends
class BackendUnavailable(ObliqcError, RuntimeError):
    pass


class StaleKeyEpoch(ObliqcError):
    pass


class SessionMismatch(ObliqcError):
    pass


class WidthMismatch(ObliqcError, ValueError):
    pass


class WidthExceeded(ObliqcError, ValueError):
    pass


class Overflow(ObliqcError, ArithmeticError):
    """A gate result left the signed range of its declared width."""


# kernels and rules
class EmptyVector(ObliqcError, ValueError):
    pass


class PlanOverflow(ObliqcError):
    """A worst-case intermediate magnitude does not fit its register width."""

    def __init__(self, intermediate: str, bound: int, width: int):
        self.intermediate = intermediate
        self.bound = bound
        self.width = width
        super().__init__(
            f"{intermediate}: worst-case bound {bound} (x2 headroom) exceeds "
            f"signed {width}-bit capacity {2 ** (width - 1) - 1}"
        )


class ShapeMismatch(ObliqcError, ValueError):
    pass


class Unattainable(ObliqcError):
    pass


class UnknownRule(ObliqcError, KeyError):
    pass


# protocol
class ProtocolError(ObliqcError):
    pass


class BadMagic(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class TruncatedPayload(ProtocolError):
    pass


class NoCommonBackend(ProtocolError):
    pass


class NoCommonWidth(ProtocolError):
    pass


class NoCommonKeyMode(ProtocolError):
    pass


class UnknownSession(ProtocolError, KeyError):
    pass
