"""Declare a distributed program as a graph of service nodes, then run it
unchanged on interchangeable launchers (threads in one process, or one OS
process per node).
"""
from .errors import (
    AddressInUseError,
    AlreadyRegisteredError,
    ConnectionFailedError,
    DanglingHandleError,
    FrameTooLargeError,
    GroupTypeError,
    InvalidArgumentError,
    InvalidProgramError,
    InvalidStateError,
    LaunchgraphError,
    NeedMoreData,
    ProtocolError,
    RemoteError,
    ResourceUnavailableError,
    TimedOutError,
    TransportError,
    UnknownFactoryError,
    UnknownGroupError,
    UnresolvedPlaceholderError,
)

__version__ = "0.1.0"

__all__ = [
    "AddressInUseError",
    "AlreadyRegisteredError",
    "ConnectionFailedError",
    "DanglingHandleError",
    "FrameTooLargeError",
    "GroupTypeError",
    "InvalidArgumentError",
    "InvalidProgramError",
    "InvalidStateError",
    "LaunchgraphError",
    "NeedMoreData",
    "ProtocolError",
    "RemoteError",
    "ResourceUnavailableError",
    "TimedOutError",
    "TransportError",
    "UnknownFactoryError",
    "UnknownGroupError",
    "UnresolvedPlaceholderError",
    "__version__",
]
