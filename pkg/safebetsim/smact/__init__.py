from .geometry import AddressSplit, SmactGeometry, split_address
from .oracle import PermissionOracle, chunk_of, oracle_permitted
from .table import LookupResult, Smact, SmactCounters, SmactEntry, Verdict

__all__ = [
    "AddressSplit",
    "LookupResult",
    "PermissionOracle",
    "Smact",
    "SmactCounters",
    "SmactEntry",
    "SmactGeometry",
    "Verdict",
    "chunk_of",
    "oracle_permitted",
    "split_address",
]
