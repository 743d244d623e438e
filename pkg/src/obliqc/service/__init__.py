"""Client-server realisation of the trust model."""

from .client import ConnectionFailed, QCClient, QCResult, ServerError, load_keys, save_keys
from .samples import SampleFileError, read_samples, write_samples
from .server import QCServer, ServerConfig, load_catalog, server_run

__all__ = [
    "ConnectionFailed", "QCClient", "QCResult", "QCServer", "SampleFileError", "ServerConfig",
    "ServerError", "load_catalog", "load_keys", "read_samples", "save_keys", "server_run",
    "write_samples",
]
