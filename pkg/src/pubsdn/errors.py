"""Exception hierarchy shared by every layer of the simulator."""


class PubSdnError(Exception):
    """Base class for all simulator errors."""


class UnknownEntity(PubSdnError):
    pass


class DuplicateEntity(PubSdnError):
    pass


class BudgetExceeded(PubSdnError):
    """Raised when an event budget runs out while work is still queued."""


class InvalidOperation(PubSdnError):
    pass


# pub/sub layer
class UnknownTopic(PubSdnError):
    pass


class SchemaMismatch(PubSdnError):
    pass


# data plane
class NoSuchEntry(PubSdnError):
    pass


class DuplicateEntry(PubSdnError):
    pass


class MediationViolation(PubSdnError):
    """A switch table was touched outside the mediation topics."""


# controller
class SliceViolation(PubSdnError):
    pass


class ValidationError(PubSdnError):
    """Topology or scenario document failed validation.

    ``path`` points into the document, e.g. ``links[2].b``.
    """

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)
