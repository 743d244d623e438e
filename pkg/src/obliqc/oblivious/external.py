import importlib

from ..errors import BackendUnavailable
from .core import Backend, BackendDescriptor

ADAPTER_MODULE = "obliqc_fhe"


class ExternalBackend(Backend):
    """Adapter boundary for a compiled FHE library.

    The library is expected as an importable module ``obliqc_fhe`` exposing a
    ``Backend`` class that implements the same gate set (see
    :class:`~obliqc.oblivious.core.Backend`).  Nothing in this package depends
    on it being present.
    """

    descriptor = BackendDescriptor("external", "external-fhe", 128, True, 64)

    def __new__(cls, *args, **kwargs):
        try:
            mod = importlib.import_module(ADAPTER_MODULE)
        except ImportError as exc:
            raise BackendUnavailable(
                f"external FHE adapter {ADAPTER_MODULE!r} is not installed") from exc
        impl = mod.Backend(*args, **kwargs)
        if impl.descriptor.security_bits < 128:
            raise BackendUnavailable("external adapter declares less than 128-bit security")
        return impl
