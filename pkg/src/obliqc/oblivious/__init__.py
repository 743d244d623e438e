"""Oblivious integer evaluation: handles, gate set and backends."""

from .core import (
    Backend,
    BackendDescriptor,
    CircuitTrace,
    GateRecord,
    ObliviousBit,
    ObliviousHandle,
    SessionKeys,
    encrypt_lanes,
    select,
)
from .external import ExternalBackend
from .masked import MaskedBackend
from .reference import ReferenceBackend
from .trace import TraceBackend

BACKENDS = {
    "reference": ReferenceBackend,
    "trace": TraceBackend,
    "masked": MaskedBackend,
    "external": ExternalBackend,
}


def get_backend(name: str, **kwargs) -> Backend:
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    return cls(**kwargs)


__all__ = [
    "BACKENDS", "Backend", "BackendDescriptor", "CircuitTrace", "ExternalBackend",
    "GateRecord", "MaskedBackend", "ObliviousBit", "ObliviousHandle", "ReferenceBackend",
    "SessionKeys", "TraceBackend", "encrypt_lanes", "get_backend", "select",
]
