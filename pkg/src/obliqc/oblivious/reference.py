from .core import Backend, BackendDescriptor


class ReferenceBackend(Backend):
    """Bit-exact plaintext backend; the conformance oracle for real adapters.

    ``gate_cost_us`` / ``lane_cost_us`` add a synthetic per-gate latency
    (a fixed part plus a per-lane part) so batching and parallelism
    experiments behave like a slow cryptographic backend.
    """

    descriptor = BackendDescriptor("reference", "reference-plaintext", 0, True, 64)
