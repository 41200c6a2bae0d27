import re
from dataclasses import dataclass, replace

ADDRESS_BITS = 64
INST_BITS = 22

_GEOMETRY_RE = re.compile(
    r"^(?P<entries>\d+)x(?P<ways>\d+)(?:-(?P<slab>\d+)/(?P<chunk>\d+))?(?P<unbounded>-unbounded)?$"
)


def _is_pow2(n: int) -> bool:
    return n > 0 and not n & (n - 1)


def _log2(n: int) -> int:
    return n.bit_length() - 1


@dataclass(frozen=True)
class SmactGeometry:
    """Shape of the access-control table.

    ``unbounded`` lifts the per-set way limit (no eviction) and is used as the
    capacity-free reference configuration. ``physically_tagged`` is reserved
    for a physically-tagged variant and is rejected.
    """

    entries: int = 512
    ways: int = 8
    slab_bytes: int = 4096
    chunk_bytes: int = 64
    unbounded: bool = False
    physically_tagged: bool = False

    def __post_init__(self):
        if self.physically_tagged:
            raise NotImplementedError("physically-tagged SMACT is not implemented")
        if self.entries <= 0 or self.ways <= 0 or self.entries % self.ways:
            raise ValueError(
                f"entries ({self.entries}) must be a positive multiple of ways ({self.ways})"
            )
        if not _is_pow2(self.entries // self.ways):
            raise ValueError(f"set count {self.entries // self.ways} is not a power of two")
        if not _is_pow2(self.slab_bytes) or not _is_pow2(self.chunk_bytes):
            raise ValueError("slab and chunk sizes must be powers of two")
        if self.chunk_bytes > self.slab_bytes:
            raise ValueError("chunk cannot be larger than slab")
        if self.slab_bytes // self.chunk_bytes > 64:
            raise ValueError("slab/chunk ratio exceeds the 64-bit chunk mask")

    @property
    def sets(self) -> int:
        return self.entries // self.ways

    @property
    def offset_bits(self) -> int:
        return _log2(self.slab_bytes)

    @property
    def index_bits(self) -> int:
        return _log2(self.sets)

    @property
    def tag_bits(self) -> int:
        return ADDRESS_BITS - self.offset_bits - self.index_bits

    @property
    def chunks_per_slab(self) -> int:
        return self.slab_bytes // self.chunk_bytes

    @property
    def bitmask_enabled(self) -> bool:
        return self.chunks_per_slab > 1

    def storage_bits(self, inst_bits: int = INST_BITS) -> int:
        """Tag, chunk mask and instance ID bits over all entries."""
        return self.entries * (self.tag_bits + self.chunks_per_slab + inst_bits)

    def storage_bytes(self, inst_bits: int = INST_BITS) -> float:
        return self.storage_bits(inst_bits) / 8

    def without_bitmask(self) -> "SmactGeometry":
        """Per-chunk entries: each entry covers exactly one chunk."""
        return replace(self, slab_bytes=self.chunk_bytes)

    def label(self) -> str:
        text = f"{self.entries}x{self.ways}-{self.slab_bytes}/{self.chunk_bytes}"
        return text + ("-unbounded" if self.unbounded else "")

    @classmethod
    def parse(cls, text: str) -> "SmactGeometry":
        """Parse ``<entries>x<ways>[-<slab>/<chunk>][-unbounded]``."""
        m = _GEOMETRY_RE.match(text.strip())
        if not m:
            raise ValueError(f"bad geometry {text!r}")
        kwargs = {
            "entries": int(m.group("entries")),
            "ways": int(m.group("ways")),
            "unbounded": bool(m.group("unbounded")),
        }
        if m.group("slab"):
            kwargs["slab_bytes"] = int(m.group("slab"))
            kwargs["chunk_bytes"] = int(m.group("chunk"))
        return cls(**kwargs)


@dataclass(frozen=True)
class AddressSplit:
    tag: int
    index: int
    slab_offset: int
    chunk_bit: int

    def join(self, g: SmactGeometry) -> int:
        """Recombine the fields into the original address."""
        return (
            (self.tag << (g.index_bits + g.offset_bits))
            | (self.index << g.offset_bits)
            | self.slab_offset
        )


def split_address(a: int, g: SmactGeometry) -> AddressSplit:
    offset = a & (g.slab_bytes - 1)
    rest = a >> g.offset_bits
    return AddressSplit(
        tag=rest >> g.index_bits,
        index=rest & (g.sets - 1),
        slab_offset=offset,
        chunk_bit=offset // g.chunk_bytes,
    )
