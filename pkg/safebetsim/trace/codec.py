"""
Line-oriented trace codec.

Header lines::

    #region <id> <base-hex> [owner]
    #data <lo-hex> <hi-hex> <region-id>
    #secret <addr-hex> <len>
    #heap <lo-hex> <hi-hex> [<max-count> <max-bytes>]
    #region-size <bytes>

Op lines::

    <seq> <kind> pc=<hex> [ea=<hex>,<size>] [src=r..] [dst=r..]
        [br pred=<t|n> actual=<t|n> resolve=<n> [shadow=<n>]] [tgt=<hex>] [wp] [secret]

Directive lines: ``! malloc <size>``, ``! free <addr-hex>``, ``! set-owner <id>``.
Lines starting with ``# `` are comments.
"""

import io
from pathlib import Path
from typing import IO, Dict, List, Optional, Tuple, Union

from loguru import logger

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
)

TraceSource = Union[str, bytes, IO[str], IO[bytes]]

_OP_KINDS = {k.value: k for k in OpKind if k is not OpKind.DIRECTIVE}
_DIRECTIVE_KINDS = {k.value: k for k in DirectiveKind}
_FLAGS = {"t": True, "n": False}


class TraceParseError(ValueError):
    """A trace line could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class TraceSemanticError(TraceParseError):
    """A trace parsed but contradicts its own header or wrong-path rules."""


def _int(text: str, line: int, what: str) -> int:
    try:
        return int(text, 0) if text.lower().startswith("0x") else int(text, 10)
    except ValueError:
        raise TraceParseError(f"bad {what} {text!r}", line) from None


def _hex(text: str, line: int, what: str) -> int:
    try:
        return int(text, 16)
    except ValueError:
        raise TraceParseError(f"bad {what} {text!r}", line) from None


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        line = data.count(b"\n", 0, e.start) + 1
        raise TraceParseError(f"invalid UTF-8 at byte {e.start}", line) from None


def _read_lines(source: TraceSource) -> List[str]:
    if isinstance(source, bytes):
        return _decode(source).splitlines()
    if isinstance(source, str):
        return source.splitlines()
    try:
        data = source.read()
    except UnicodeDecodeError as e:
        raise TraceParseError(f"invalid UTF-8 at byte {e.start}") from None
    if isinstance(data, bytes):
        data = _decode(data)
    return data.splitlines()


def _parse_heap(args: List[str], line: int) -> HeapArena:
    lo = _hex(args[0], line, "heap lo")
    hi = _hex(args[1], line, "heap hi")
    if hi <= lo:
        raise TraceParseError("heap arena is empty", line)
    if len(args) == 2:
        return HeapArena(lo, hi)
    max_count = _int(args[2], line, "heap max count")
    max_bytes = _int(args[3], line, "heap max bytes")
    if max_count < 0 or max_bytes < 0:
        raise TraceParseError("heap thresholds must be non-negative", line)
    return HeapArena(lo, hi, max_count, max_bytes)


def _parse_branch(tokens: List[str], start: int, line: int) -> Tuple[BranchInfo, int]:
    fields: Dict[str, str] = {}
    i = start
    while i < len(tokens) and "=" in tokens[i]:
        key, _, value = tokens[i].partition("=")
        if key not in ("pred", "actual", "resolve", "shadow"):
            break
        fields[key] = value
        i += 1
    for required in ("pred", "actual", "resolve"):
        if required not in fields:
            raise TraceParseError(f"branch annotation lacks {required}=", line)
    if fields["pred"] not in _FLAGS or fields["actual"] not in _FLAGS:
        raise TraceParseError("branch pred/actual must be t or n", line)
    resolve = _int(fields["resolve"], line, "resolve")
    if resolve < 1:
        raise TraceParseError("resolve must be at least 1 cycle", line)
    shadow = _int(fields["shadow"], line, "shadow") if "shadow" in fields else None
    info = BranchInfo(
        predicted_taken=_FLAGS[fields["pred"]],
        actual_taken=_FLAGS[fields["actual"]],
        resolve_after=resolve,
        shadow=shadow,
    )
    return info, i


def _parse_op(tokens: List[str], line: int) -> MicroOp:
    if len(tokens) < 3:
        raise TraceParseError("op line needs <seq> <kind> pc=<hex>", line)
    seq = _int(tokens[0], line, "seq")
    kind = _OP_KINDS.get(tokens[1])
    if kind is None:
        raise TraceParseError(f"unknown op kind {tokens[1]!r}", line)

    pc: Optional[int] = None
    mem: Optional[MemRef] = None
    src: Tuple[str, ...] = ()
    dst: Optional[str] = None
    branch: Optional[BranchInfo] = None
    target: Optional[int] = None
    wrong_path = False
    secret = False

    i = 2
    while i < len(tokens):
        tok = tokens[i]
        if tok == "br":
            branch, i = _parse_branch(tokens, i + 1, line)
            continue
        if tok == "wp":
            wrong_path = True
        elif tok == "secret":
            secret = True
        elif tok.startswith("pc="):
            pc = _hex(tok[3:], line, "pc")
        elif tok.startswith("ea="):
            addr_text, _, size_text = tok[3:].partition(",")
            if not size_text:
                raise TraceParseError("ea= needs <hex>,<size>", line)
            size = _int(size_text, line, "access size")
            if size <= 0:
                raise TraceParseError("access size must be positive", line)
            mem = MemRef(_hex(addr_text, line, "ea"), size)
        elif tok.startswith("src="):
            src = tuple(r for r in tok[4:].split(",") if r)
        elif tok.startswith("dst="):
            dst = tok[4:] or None
        elif tok.startswith("tgt="):
            target = _hex(tok[4:], line, "tgt")
        else:
            raise TraceParseError(f"unexpected token {tok!r}", line)
        i += 1

    if pc is None:
        raise TraceParseError("op line lacks pc=", line)
    if kind in (OpKind.LOAD, OpKind.STORE) and mem is None:
        raise TraceParseError(f"{kind.value} lacks ea=", line)
    return MicroOp(
        seq=seq,
        kind=kind,
        pc=pc,
        mem=mem,
        src_regs=src,
        dst_reg=dst,
        branch_info=branch,
        target=target,
        wrong_path=wrong_path,
        secret_tag=secret,
    )


def parse_trace(source: TraceSource) -> Trace:
    """Parse a trace from text, bytes or a file object."""
    regions: List[Region] = []
    data: List[Tuple[DataRange, int]] = []
    secrets: List[SecretRange] = []
    heap: Optional[HeapArena] = None
    region_size = REGION_SIZE
    ops: List[MicroOp] = []
    op_lines: List[int] = []
    directives: List[Directive] = []

    for number, raw in enumerate(_read_lines(source), start=1):
        text = raw.strip()
        if not text or text.startswith("# "):
            continue
        tokens = text.split()

        if tokens[0].startswith("#"):
            keyword = tokens[0][1:]
            args = tokens[1:]
            if keyword == "region" and len(args) in (2, 3):
                if len(args) == 3 and args[2] != "owner":
                    raise TraceParseError(f"unexpected region flag {args[2]!r}", number)
                regions.append(
                    Region(
                        id=_int(args[0], number, "region id"),
                        base=_hex(args[1], number, "region base"),
                        is_owner=len(args) == 3,
                    )
                )
            elif keyword == "data" and len(args) == 3:
                lo = _hex(args[0], number, "data lo")
                hi = _hex(args[1], number, "data hi")
                if hi <= lo:
                    raise TraceParseError("data range is empty", number)
                data.append((DataRange(lo, hi, _int(args[2], number, "region id")), number))
            elif keyword == "secret" and len(args) == 2:
                length = _int(args[1], number, "secret length")
                if length <= 0:
                    raise TraceParseError("secret length must be positive", number)
                secrets.append(SecretRange(_hex(args[0], number, "secret addr"), length))
            elif keyword == "heap" and len(args) in (2, 4):
                heap = _parse_heap(args, number)
            elif keyword == "region-size" and len(args) == 1:
                region_size = _int(args[0], number, "region size")
            else:
                raise TraceParseError(f"malformed header line {text!r}", number)
            continue

        if tokens[0] == "!":
            if len(tokens) != 3 or tokens[1] not in _DIRECTIVE_KINDS:
                raise TraceParseError(f"malformed directive {text!r}", number)
            kind = _DIRECTIVE_KINDS[tokens[1]]
            if kind is DirectiveKind.FREE:
                arg = _hex(tokens[2], number, "free address")
            else:
                arg = _int(tokens[2], number, f"{kind.value} argument")
            directives.append(Directive(kind, arg, len(ops), line=number))
            continue

        op = _parse_op(tokens, number)
        if ops and op.seq <= ops[-1].seq:
            raise TraceParseError(f"seq {op.seq} is not increasing", number)
        ops.append(op)
        op_lines.append(number)

    try:
        region_map = RegionMap(regions, region_size)
    except ValueError as e:
        raise TraceSemanticError(str(e)) from None
    if len(region_map.by_id) != len(regions) or len(region_map.by_block) != len(regions):
        raise TraceSemanticError("duplicate region id or base")
    if sum(1 for r in regions if r.is_owner) > 1:
        raise TraceSemanticError("more than one owner region declared")

    for rng, number in data:
        if rng.region not in region_map.by_id:
            raise TraceSemanticError(f"undeclared region {rng.region}", number)
    for directive in directives:
        if (
            directive.kind is DirectiveKind.SET_OWNER
            and directive.arg not in region_map.by_id
        ):
            raise TraceSemanticError(f"undeclared region {directive.arg}", directive.line)

    previous: Optional[MicroOp] = None
    for op, number in zip(ops, op_lines):
        for pc in (op.pc, op.target):
            if pc is None:
                continue
            try:
                region_map.lookup(pc)
            except UndeclaredRegionError:
                block = pc >> region_map.shift
                raise TraceSemanticError(
                    f"undeclared region (block {block}) referenced by pc 0x{pc:x}",
                    number,
                ) from None
        if op.wrong_path and (previous is None or not previous.wrong_path):
            if previous is None or not previous.mispredicted:
                raise TraceSemanticError(
                    f"wrong-path run at seq {op.seq} has no mispredicted branch",
                    number,
                )
        previous = op

    if ops and ops[-1].wrong_path:
        raise TraceSemanticError(
            f"wrong-path run ending at seq {ops[-1].seq} is never closed by a "
            "correct-path op",
            op_lines[-1],
        )

    header = TraceHeader(
        regions=tuple(regions),
        data=tuple(rng for rng, _ in data),
        secrets=tuple(secrets),
        heap=heap,
        region_size=region_size,
    )
    logger.debug(
        f"Parsed trace: {len(ops)} ops, {len(directives)} directives, "
        f"{len(regions)} regions"
    )
    return Trace(header=header, ops=tuple(ops), directives=tuple(directives))


def _format_op(op: MicroOp) -> str:
    parts = [str(op.seq), op.kind.value, f"pc=0x{op.pc:x}"]
    if op.mem is not None:
        parts.append(f"ea=0x{op.mem.addr:x},{op.mem.size}")
    if op.src_regs:
        parts.append("src=" + ",".join(op.src_regs))
    if op.dst_reg:
        parts.append(f"dst={op.dst_reg}")
    if op.branch_info is not None:
        b = op.branch_info
        parts.append(
            f"br pred={'t' if b.predicted_taken else 'n'} "
            f"actual={'t' if b.actual_taken else 'n'} resolve={b.resolve_after}"
        )
        if b.shadow is not None:
            parts.append(f"shadow={b.shadow}")
    if op.target is not None:
        parts.append(f"tgt=0x{op.target:x}")
    if op.wrong_path:
        parts.append("wp")
    if op.secret_tag:
        parts.append("secret")
    return " ".join(parts)


def _format_directive(d: Directive) -> str:
    if d.kind is DirectiveKind.FREE:
        return f"! free 0x{d.arg:x}"
    return f"! {d.kind.value} {d.arg}"


def serialize_trace(trace: Trace) -> str:
    """Render a trace in the line format ``parse_trace`` reads."""
    h = trace.header
    out = io.StringIO()
    if h.region_size != REGION_SIZE:
        out.write(f"#region-size {h.region_size}\n")
    for r in h.regions:
        out.write(f"#region {r.id} 0x{r.base:x}{' owner' if r.is_owner else ''}\n")
    for rng in h.data:
        out.write(f"#data 0x{rng.lo:x} 0x{rng.hi:x} {rng.region}\n")
    for s in h.secrets:
        out.write(f"#secret 0x{s.addr:x} {s.length}\n")
    if h.heap is not None:
        arena = h.heap
        limits = ""
        if arena.max_count is not None and arena.max_bytes is not None:
            limits = f" {arena.max_count} {arena.max_bytes}"
        out.write(f"#heap 0x{arena.lo:x} 0x{arena.hi:x}{limits}\n")
    for event in trace.events():
        if isinstance(event, Directive):
            out.write(_format_directive(event) + "\n")
        else:
            out.write(_format_op(event) + "\n")
    return out.getvalue()


def load_trace(path: Union[str, Path]) -> Trace:
    """Read and parse a trace file."""
    with open(path, "rb") as f:
        return parse_trace(f.read())


def save_trace(trace: Trace, path: Union[str, Path]) -> Path:
    """Write a trace file, creating parent directories."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize_trace(trace), encoding="utf-8")
    return out
