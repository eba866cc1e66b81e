"""Authenticated data structures: path accumulators, dynamic forests,
incremental graph queries and authenticated fractional cascading."""

from .errors import ADSError, Divergence, ProtocolError, Rejected
from .hashcore import Digest, Id, KeyPair, SignedDigest

__all__ = ["ADSError", "Digest", "Divergence", "Id", "KeyPair", "ProtocolError", "Rejected", "SignedDigest"]
__version__ = "0.1.0"
