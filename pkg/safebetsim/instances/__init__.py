from .tracker import (
    DEPTH_LIMIT,
    INST_BITS,
    INST_LIMIT,
    Checkpoint,
    Frame,
    InstanceTracker,
    MatchContext,
    OverflowEvent,
    TransferClass,
    TransferKind,
    classify_transfer,
)

__all__ = [
    "DEPTH_LIMIT",
    "INST_BITS",
    "INST_LIMIT",
    "Checkpoint",
    "Frame",
    "InstanceTracker",
    "MatchContext",
    "OverflowEvent",
    "TransferClass",
    "TransferKind",
    "classify_transfer",
]
