"""Exception hierarchy shared across the package."""

from __future__ import annotations


class NetMambaError(Exception):
    """Base class for all errors raised by this package."""


# capture parsing
class MalformedGlobalHeader(NetMambaError):
    pass


class TruncatedRecord(NetMambaError):
    pass


class UnsupportedLinkType(NetMambaError):
    pass


class HeaderTooShort(NetMambaError):
    pass


# flow representation
class EmptyFlow(NetMambaError):
    pass


class IndivisibleLength(NetMambaError):
    pass


class NegativeInterval(NetMambaError):
    pass


# tensors
class ShapeMismatch(NetMambaError, ValueError):
    pass


class NonFiniteInput(NetMambaError, FloatingPointError):
    pass


class NotScalar(NetMambaError, ValueError):
    pass


# training
class RatioOutOfRange(NetMambaError, ValueError):
    pass


class PlanMismatch(NetMambaError, ValueError):
    pass


class ClassOutOfRange(NetMambaError, ValueError):
    pass


class EmptyDataset(NetMambaError):
    pass


class LabelOutOfRange(NetMambaError, ValueError):
    pass


class EmptySplit(NetMambaError):
    pass


class TooFewSamples(NetMambaError):
    pass


# online engine
class MailboxBusy(NetMambaError):
    pass


class EmptyMailbox(NetMambaError):
    pass


class NotFound(NetMambaError, KeyError):
    pass
