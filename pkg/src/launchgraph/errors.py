"""Exception types shared across the package.

Every failure the public API can raise derives from LaunchgraphError, so
callers can catch one base class at a process boundary.
"""
from __future__ import annotations


class LaunchgraphError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(LaunchgraphError, ValueError):
    """A caller passed a value the operation cannot accept."""


class InvalidStateError(LaunchgraphError, RuntimeError):
    """The operation is legal, but not in the object's current state."""


class GroupTypeError(LaunchgraphError):
    """A resource group would end up holding nodes of different kinds."""


class DanglingHandleError(LaunchgraphError):
    """A handle or handle marker refers to a node this program never added."""


class AlreadyRegisteredError(LaunchgraphError):
    """A service name was registered twice in one registry."""


class UnknownFactoryError(LaunchgraphError):
    """A node names a factory that is missing from the registry."""


class UnresolvedPlaceholderError(LaunchgraphError):
    """A placeholder token has no entry in the address table."""


class FrameTooLargeError(LaunchgraphError):
    """An encoded payload exceeds the wire format's 2**31 - 1 byte limit."""


class NeedMoreData(LaunchgraphError):
    """The buffer ends before the current frame does."""


class ProtocolError(LaunchgraphError):
    """Bytes on the wire do not form a valid envelope."""


class AddressInUseError(LaunchgraphError):
    """The requested endpoint is already bound by someone else."""


class ConnectionFailedError(LaunchgraphError):
    """No connection could be established before the deadline."""


class RemoteError(LaunchgraphError):
    """The remote method ran and reported a failure."""


class TransportError(LaunchgraphError):
    """The connection died before a reply arrived."""


class TimedOutError(LaunchgraphError):
    """A wait elapsed; carries whatever statuses were observed so far."""

    def __init__(self, message: str, statuses: dict | None = None):
        super().__init__(message)
        self.statuses = statuses or {}


class InvalidProgramError(LaunchgraphError):
    """validate() found errors, so the program cannot launch."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class UnknownGroupError(LaunchgraphError):
    """A resource map names a group the program does not define."""


class ResourceUnavailableError(LaunchgraphError):
    """The operating system refused a resource the launcher needs."""
