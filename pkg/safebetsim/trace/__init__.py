from .codec import (
    TraceParseError,
    TraceSemanticError,
    load_trace,
    parse_trace,
    save_trace,
    serialize_trace,
)
from .model import (
    REGION_SIZE,
    BranchInfo,
    DataRange,
    Directive,
    DirectiveKind,
    HeapArena,
    MemRef,
    MicroOp,
    OpKind,
    Region,
    RegionMap,
    SecretRange,
    Trace,
    TraceHeader,
    UndeclaredRegionError,
    region_of,
)
from .validate import Diagnostic, validate_trace

__all__ = [
    "REGION_SIZE",
    "BranchInfo",
    "DataRange",
    "Diagnostic",
    "Directive",
    "DirectiveKind",
    "HeapArena",
    "MemRef",
    "MicroOp",
    "OpKind",
    "Region",
    "RegionMap",
    "SecretRange",
    "Trace",
    "TraceHeader",
    "TraceParseError",
    "TraceSemanticError",
    "UndeclaredRegionError",
    "load_trace",
    "parse_trace",
    "region_of",
    "save_trace",
    "serialize_trace",
    "validate_trace",
]
