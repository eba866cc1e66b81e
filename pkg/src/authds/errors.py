class ADSError(Exception):
    """Base class for errors raised by this package."""


class EncodingError(ADSError, ValueError):
    pass


class KeyError_(ADSError):
    """Unusable key material."""


class NotFound(ADSError, LookupError):
    pass


class OrderError(ADSError, ValueError):
    pass


class SchemaError(ADSError, ValueError):
    pass


class StructureError(ADSError, ValueError):
    """An update whose preconditions do not hold (wrong root, same tree, ...)."""


class ProtocolError(ADSError):
    pass


class Divergence(ProtocolError):
    """Responder's recomputed digest differs from the one the source signed."""


class Rejected(ADSError):
    """Verification failed; ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(reason if not detail else f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail
