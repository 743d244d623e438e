import threading

from .core import BackendDescriptor, CircuitTrace, GateRecord
from .reference import ReferenceBackend


class TraceBackend(ReferenceBackend):
    """Reference semantics plus a record of every gate evaluated.

    Values are still computed, so a traced program also yields its normal
    result; the trace itself only sees gate kinds, arities, widths and lane
    counts.
    """

    descriptor = BackendDescriptor("trace", "circuit-trace", 0, True, 64)

    def __init__(self, **kw):
        super().__init__(**kw)
        self._records: list = []
        self._trace_lock = threading.Lock()

    def _emit(self, kind, arity, width, lanes):
        with self._trace_lock:
            self._records.append(GateRecord(kind, arity, width, lanes))
        super()._emit(kind, arity, width, lanes)

    def reset(self) -> None:
        with self._trace_lock:
            self._records = []

    @property
    def trace(self) -> CircuitTrace:
        with self._trace_lock:
            return CircuitTrace(self._records)

    def trace_program(self, program, *args, **kwargs) -> CircuitTrace:
        """Run ``program(*args, **kwargs)`` and return only the gates it evaluated."""
        with self._trace_lock:
            start = len(self._records)
        program(*args, **kwargs)
        with self._trace_lock:
            return CircuitTrace(self._records[start:])
