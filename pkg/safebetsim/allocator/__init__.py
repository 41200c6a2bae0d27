from .lazy_free import (
    HANDLER_COST,
    MAX_PENDING_BYTES,
    MAX_PENDING_COUNT,
    MIN_ALLOC,
    Allocation,
    AllocatorError,
    AllocatorState,
    HandlerInvocation,
    HandlerResult,
    LazyFreeAllocator,
    LazyFreeConfig,
    LazyFreeStats,
    RevocationHandler,
    revocation_handler,
)

__all__ = [
    "HANDLER_COST",
    "MAX_PENDING_BYTES",
    "MAX_PENDING_COUNT",
    "MIN_ALLOC",
    "Allocation",
    "AllocatorError",
    "AllocatorState",
    "HandlerInvocation",
    "HandlerResult",
    "LazyFreeAllocator",
    "LazyFreeConfig",
    "LazyFreeStats",
    "RevocationHandler",
    "revocation_handler",
]
