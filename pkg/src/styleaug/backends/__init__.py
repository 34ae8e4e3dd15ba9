"""Backend contracts, reference doubles, and the wire protocol."""

from .base import (
    BackendError,
    BackendUnavailableError,
    CapabilityMismatchError,
    ClassifierBackend,
    ClassifierCapabilities,
    EmbedderBackend,
    EmbedderCapabilities,
    GeneratorBackend,
    GeneratorCapabilities,
    WireProtocolError,
)
from .connect import connect, validate_capabilities
from .reference import ReferenceClassifier, ReferenceEmbedder, ReferenceGenerator
from .wire import WireClient, serve_backend

__all__ = [
    "BackendError",
    "BackendUnavailableError",
    "CapabilityMismatchError",
    "ClassifierBackend",
    "ClassifierCapabilities",
    "EmbedderBackend",
    "EmbedderCapabilities",
    "GeneratorBackend",
    "GeneratorCapabilities",
    "ReferenceClassifier",
    "ReferenceEmbedder",
    "ReferenceGenerator",
    "WireClient",
    "WireProtocolError",
    "connect",
    "serve_backend",
    "validate_capabilities",
]
