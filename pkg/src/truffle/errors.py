"""Exception hierarchy shared by the sidecar and the simulated cluster."""


class TruffleError(Exception):
    """Base class for every error raised by this package."""


class ModelDomainError(TruffleError, ValueError):
    pass


class ConfigError(TruffleError, ValueError):
    pass


# buffer


class BufferConflict(TruffleError):
    pass


class BufferCapacityError(TruffleError):
    pass


class BufferTimeout(TruffleError, TimeoutError):
    pass


class BufferNotFound(TruffleError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class FetchFailed(TruffleError):
    pass


# storage


class UnsupportedStorage(TruffleError):
    pass


class StorageError(TruffleError):
    code = "StorageError"


class NoSuchBucket(StorageError):
    code = "NoSuchBucket"


class NoSuchObject(StorageError):
    code = "NoSuchObject"


class NoSuchKey(StorageError):
    code = "NoSuchKey"


class AuthFailure(StorageError):
    code = "AuthFailure"


# orchestration and transport


class SchedulingTimeout(TruffleError, TimeoutError):
    pass


class TransportError(TruffleError, ConnectionError):
    pass


class GatewayTimeout(TruffleError, TimeoutError):
    pass
