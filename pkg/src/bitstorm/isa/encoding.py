"""Instructions, operands and the canonical 32-bit encoding.

Encoded word layout::

    31..24  opcode ordinal
    23..16  destination index (register, or predicate for FSETP/ISETP)
    15..8   src0 index (when src0 is a register or predicate)
     7..0   src1 index (when src1 is a register or predicate)

Everything else (immediates, constant offsets, the third source, memory
offsets, guards, branch targets, provenance) lives in a per-instruction side
table row.  Side-table data is never touched by ENCODING-mode faults.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .opcodes import NUM_OPCODES, Cmp, Opcode, Space, space_of

RZ = 255
PT = 7

# operand kinds
K_NONE, K_REG, K_IMM, K_CONST, K_PRED = 0, 1, 2, 3, 4

# side-table columns
(S0K, S0V, S1K, S1V, S2K, S2V, OFF, LUT, SHIFT, WIDTH, TARGET, GUARD, GNEG,
 CMP, SNAPSPACE, SNAPLEN, TAG) = range(17)
NCOL = 17


class IllegalOpcode(ValueError):
    pass


class Reg(NamedTuple):
    idx: int

    def __str__(self):
        return "RZ" if self.idx == RZ else f"R{self.idx}"


class Pred(NamedTuple):
    idx: int

    def __str__(self):
        return "PT" if self.idx == PT else f"P{self.idx}"


class Imm(NamedTuple):
    bits: int

    def __str__(self):
        return f"0x{self.bits & 0xFFFFFFFF:x}"


class Const(NamedTuple):
    offset: int

    def __str__(self):
        return f"c[0x{self.offset:x}]"


@dataclass(frozen=True)
class OperatorTag:
    """Which model operator an instruction belongs to (kind + layer)."""
    kind: str = "OTHER"
    layer: Optional[int] = None

    def __str__(self):
        return self.kind if self.layer is None else f"{self.kind}.L{self.layer}"

    def as_dict(self):
        return {"operator": self.kind, "layer": self.layer}


OPERATOR_KINDS = ("EMBEDDING", "ATTENTION", "MLP", "NORM", "LM_HEAD", "OTHER")


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    dest: Optional[int] = None
    srcs: tuple = ()
    offset: int = 0
    lut: int = 0
    shift: int = 0
    width: int = 32
    target: Optional[int] = None
    guard: Optional[int] = None
    guard_neg: bool = False
    cmp: Optional[Cmp] = None
    snap: Optional[tuple] = None          # (space, offset, length) for SNAPSHOT
    tag: OperatorTag = field(default_factory=OperatorTag)

    @property
    def mem_space(self):
        return space_of(self.opcode)

    def __str__(self):
        return disassemble(self)


@dataclass(frozen=True)
class EncodedInstruction:
    word: int
    side: tuple
    tag: OperatorTag = field(default_factory=OperatorTag)


def _operand_row(op):
    if op is None:
        return K_NONE, 0
    if isinstance(op, Reg):
        return K_REG, op.idx
    if isinstance(op, Pred):
        return K_PRED, op.idx
    if isinstance(op, Imm):
        return K_IMM, op.bits & 0xFFFFFFFF
    if isinstance(op, Const):
        return K_CONST, op.offset
    raise TypeError(f"bad operand {op!r}")


def encode(ins: Instruction, tag_id: int = 0) -> EncodedInstruction:
    srcs = tuple(ins.srcs) + (None,) * (3 - len(ins.srcs))
    if len(srcs) > 3:
        raise ValueError("at most three sources")
    kinds = [_operand_row(s) for s in srcs]
    dest = 0 if ins.dest is None else ins.dest
    if not 0 <= dest <= 255:
        raise ValueError(f"destination index {dest} does not fit the encoding")
    fields = []
    for k, v in kinds[:2]:
        fields.append(v if k in (K_REG, K_PRED) else 0)
    word = (int(ins.opcode) << 24) | (dest << 16) | (fields[0] << 8) | fields[1]
    side = [0] * NCOL
    side[S0K], side[S0V] = kinds[0]
    side[S1K], side[S1V] = kinds[1]
    side[S2K], side[S2V] = kinds[2]
    side[OFF] = ins.offset
    side[LUT] = ins.lut
    side[SHIFT] = ins.shift
    side[WIDTH] = ins.width
    side[TARGET] = -1 if ins.target is None else ins.target
    side[GUARD] = -1 if ins.guard is None else ins.guard
    side[GNEG] = int(ins.guard_neg)
    side[CMP] = -1 if ins.cmp is None else int(ins.cmp)
    if ins.snap is not None:
        side[SNAPSPACE] = int(ins.snap[0])
        side[OFF] = ins.snap[1]
        side[SNAPLEN] = ins.snap[2]
    side[TAG] = tag_id
    return EncodedInstruction(word, tuple(side), ins.tag)


def _operand_from(kind, value, byte):
    if kind == K_NONE:
        return None
    if kind == K_REG:
        return Reg(byte if byte is not None else value)
    if kind == K_PRED:
        return Pred(byte if byte is not None else value)
    if kind == K_IMM:
        return Imm(value)
    return Const(value)


def decode(e: EncodedInstruction) -> Instruction:
    """Rebuild an Instruction; register indices are taken verbatim."""
    word = int(e.word)
    ordinal = word >> 24
    if ordinal >= NUM_OPCODES:
        raise IllegalOpcode(f"opcode ordinal 0x{ordinal:02x} is not defined")
    op = Opcode(ordinal)
    side = e.side
    srcs = [
        _operand_from(side[S0K], side[S0V], (word >> 8) & 0xFF),
        _operand_from(side[S1K], side[S1V], word & 0xFF),
        _operand_from(side[S2K], side[S2V], None),
    ]
    while srcs and srcs[-1] is None:
        srcs.pop()
    snap = None
    offset = side[OFF]
    if op is Opcode.SNAPSHOT:
        snap = (Space(side[SNAPSPACE]), side[OFF], side[SNAPLEN])
        offset = 0
    return Instruction(
        opcode=op,
        dest=None if op.dest_kind is None else (word >> 16) & 0xFF,
        srcs=tuple(srcs),
        offset=offset,
        lut=side[LUT],
        shift=side[SHIFT],
        width=side[WIDTH],
        target=None if side[TARGET] < 0 else side[TARGET],
        guard=None if side[GUARD] < 0 else side[GUARD],
        guard_neg=bool(side[GNEG]),
        cmp=None if side[CMP] < 0 else Cmp(side[CMP]),
        snap=snap,
        tag=e.tag,
    )


def disassemble(ins: Instruction) -> str:
    op = ins.opcode
    name = op.name
    guard = ""
    if ins.guard is not None:
        guard = f"@{'!' if ins.guard_neg else ''}{Pred(ins.guard)} "
    if op is Opcode.SNAPSHOT:
        space, off, length = ins.snap
        return f"SNAPSHOT {ins.tag} [{Space(space).name}:0x{off:x}+0x{length:x}]"
    if op is Opcode.BRA:
        return f"{guard}BRA {ins.target}"
    if op in (Opcode.EXIT, Opcode.NOP):
        return guard + name
    if ins.cmp is not None:
        name += "." + Cmp(ins.cmp).name
    if op in (Opcode.LDG, Opcode.LDS, Opcode.LDC, Opcode.STG, Opcode.STS):
        name += f".{ins.width}"
        base = ins.srcs[0] if ins.srcs else Reg(RZ)
        addr = f"[{base}{ins.offset:+#x}]"
        if op in (Opcode.STG, Opcode.STS):
            return f"{guard}{name} {addr}, {ins.srcs[1]}"
        return f"{guard}{name} {Reg(ins.dest)}, {addr}"
    parts = []
    if ins.dest is not None:
        parts.append(str(Pred(ins.dest) if op.dest_kind == "pred" else Reg(ins.dest)))
    parts.extend(str(s) for s in ins.srcs)
    if op is Opcode.LOP3:
        parts.append(f"0x{ins.lut:02x}")
    if op in (Opcode.SHF, Opcode.LEA):
        parts.append(f"{ins.shift}")
    return f"{guard}{name} " + ", ".join(parts)


def side_array(rows):
    return np.asarray(rows, dtype=np.int64).reshape(-1, NCOL)
