"""Exception types raised across the package."""


class OrderedLogError(Exception):
    """Base class for every error raised by orderedlog."""


# broker

class DuplicateTopic(OrderedLogError):
    pass


class ZeroPartitions(OrderedLogError):
    pass


class UnknownTopic(OrderedLogError):
    pass


class UnknownPartition(OrderedLogError):
    pass


class OffsetRegression(OrderedLogError):
    pass


# sequencing

class ServiceStopped(OrderedLogError):
    pass


class NoLeader(OrderedLogError):
    pass


class AllocationTimeout(OrderedLogError):
    pass


# strategies

class StaleOrDuplicateKey(OrderedLogError):
    pass


class BufferOverflow(OrderedLogError):
    pass


class IncompleteBatchAtEnd(OrderedLogError):
    pass


class DuplicateDelivery(OrderedLogError):
    """A batch was delivered twice. This is a safety violation and must never fire."""


class IdleTimeout(OrderedLogError):
    """No delivery progress for the idle window.

    ``transcript`` and ``report`` hold whatever was delivered before the run
    stalled, so callers can still check the delivered prefix.
    """

    def __init__(self, message, transcript=None, report=None, pending=()):
        super().__init__(message)
        self.transcript = transcript if transcript is not None else []
        self.report = report
        self.pending = list(pending)


# harness

class ConfigInvalid(OrderedLogError):
    pass
