"""Error types shared across pipeline stages and backends."""


class BackendError(RuntimeError):
    """A backend call failed for one request; callers may skip the item."""


class BackendUnavailableError(BackendError):
    """The backend connection is gone; batch work must stop and checkpoint."""


class CapabilityMismatchError(BackendError):
    """A backend's advertised capabilities do not match the pipeline config."""


class WireProtocolError(BackendError):
    """Malformed traffic on a backend wire connection."""


class CheckpointError(RuntimeError):
    """A checkpoint file does not match the run it is being resumed for."""
