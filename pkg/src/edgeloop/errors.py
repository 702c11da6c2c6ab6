"""Exception hierarchy for the edgeloop runtime and tools."""


class EdgeLoopError(Exception):
    """Base class for all errors raised by this package."""


# --- wire format ---

class WireError(EdgeLoopError):
    pass


class TruncatedInput(WireError):
    pass


class UnknownTag(WireError):
    pass


class InvalidUtf8(WireError):
    pass


# --- runtime ---

class EmptyInstanceId(EdgeLoopError):
    pass


class UnknownModuleClass(EdgeLoopError):
    pass


class DuplicateInstanceName(EdgeLoopError):
    pass


class TypeConflict(EdgeLoopError):
    pass


class PayloadTypeMismatch(EdgeLoopError):
    pass


class InvalidTimerSpec(EdgeLoopError):
    pass


# --- network ---

class NetworkError(EdgeLoopError):
    pass


class PortInUse(NetworkError):
    pass


class HandshakeVersionMismatch(NetworkError):
    pass


class MalformedFrame(NetworkError):
    pass


class PeerDisconnected(NetworkError):
    pass


class SessionClosed(NetworkError):
    pass


# --- configuration ---

class ConfigError(EdgeLoopError):
    pass


class MalformedXml(ConfigError):
    pass


class MissingClassAttribute(ConfigError):
    pass


class InvalidProperty(ConfigError):
    pass


# --- sensing / storage ---

class StorageFull(EdgeLoopError):
    pass


class UnknownSensorId(EdgeLoopError):
    pass


# --- ml loop ---

class WindowLargerThanSignal(EdgeLoopError):
    pass


class DimensionMismatch(EdgeLoopError):
    pass


class LengthMismatch(EdgeLoopError):
    pass
