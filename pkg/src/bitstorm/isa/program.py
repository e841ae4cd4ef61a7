"""Programs: encoded instruction streams plus their memory image.

A :class:`Program` is immutable once built.  :class:`Assembler` is the small
builder used by the model lowering and by the hand-written test fixtures.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoding import (NCOL, RZ, TAG, EncodedInstruction,
                       Imm, Instruction, OperatorTag, Pred, Reg, decode,
                       disassemble, encode)
from .opcodes import Cmp, Opcode, Space

MAGIC = b"BFSM"
VERSION = 1


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    offset: int
    size: int

    @property
    def end(self):
        return self.offset + self.size


@dataclass(eq=False)
class Program:
    words: np.ndarray              # uint32[n]
    side: np.ndarray               # int64[n, NCOL]
    tags: list                     # OperatorTag table indexed by side[:, TAG]
    reg_budget: int
    gmem_init: bytes
    smem_size: int = 0
    const_bank: bytes = b""
    regions: dict = field(default_factory=dict)   # name -> Region (global memory)
    writable_start: int = 0
    output: str = "output"          # region holding the observable result
    logits: str = "output"          # region compared for max deviation
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint32)
        self.side = np.ascontiguousarray(self.side, dtype=np.int64)
        self.words.flags.writeable = False
        self.side.flags.writeable = False
        self._digest = None
        self._kcode = None

    def kernel_code(self):
        """Writable copies of the code arrays (the compiled loop wants one array type)."""
        if self._kcode is None:
            self._kcode = (self.words.copy(), self.side.copy(),
                           np.frombuffer(self.const_bank, np.uint8).copy())
        return self._kcode

    def __len__(self):
        return len(self.words)

    @property
    def gmem_size(self):
        return len(self.gmem_init)

    def encoded(self, pc):
        return EncodedInstruction(int(self.words[pc]), tuple(int(v) for v in self.side[pc]),
                                  self.tags[int(self.side[pc, TAG])])

    def instruction(self, pc):
        return decode(self.encoded(pc))

    def tag_of(self, pc):
        return self.tags[int(self.side[pc, TAG])]

    def instructions(self):
        return [self.instruction(pc) for pc in range(len(self))]

    def opcodes(self):
        return (self.words >> 24).astype(np.int64)

    def disassembly(self):
        lines = []
        for pc in range(len(self)):
            lines.append(f"{pc:6d}  {disassemble(self.instruction(pc)):<48s} # {self.tag_of(pc)}")
        return "\n".join(lines) + "\n"

    def validate(self):
        n = len(self)
        for pc in range(n):
            ins = self.instruction(pc)
            if ins.opcode is Opcode.BRA and (ins.target is None or not 0 <= ins.target < n):
                raise ProgramError(f"pc {pc}: branch target {ins.target} out of range")
            regs = [s.idx for s in ins.srcs if isinstance(s, Reg)]
            if ins.dest is not None and ins.opcode.dest_kind == "reg":
                regs.append(ins.dest)
            for r in regs:
                if r != RZ and r >= self.reg_budget:
                    raise ProgramError(f"pc {pc}: register R{r} >= budget {self.reg_budget}")
            preds = [s.idx for s in ins.srcs if isinstance(s, Pred)]
            if ins.opcode.dest_kind == "pred":
                preds.append(ins.dest)
            if ins.guard is not None:
                preds.append(ins.guard)
            if any(not 0 <= p <= 7 for p in preds):
                raise ProgramError(f"pc {pc}: predicate index out of range")
            if ins.snap is not None:
                space, off, length = ins.snap
                size = self.gmem_size if space == Space.GLOBAL else self.smem_size
                if off < 0 or off + length > size:
                    raise ProgramError(f"pc {pc}: snapshot region outside memory")
        if self.gmem_size % 4 or self.smem_size % 4 or len(self.const_bank) % 4:
            raise ProgramError("memory segments must be multiples of 4 bytes")
        return self

    # ---- serialization ------------------------------------------------

    def to_bytes(self):
        meta = {
            "tags": [[t.kind, t.layer] for t in self.tags],
            "regions": {k: [r.offset, r.size] for k, r in self.regions.items()},
            "writable_start": self.writable_start,
            "output": self.output,
            "logits": self.logits,
            "meta": self.meta,
        }
        blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        head = struct.pack("<4sHHIIIIIII", MAGIC, VERSION, NCOL, len(self), self.reg_budget,
                           self.gmem_size, self.smem_size, len(self.const_bank), len(blob), 0)
        return b"".join([
            head,
            self.words.astype("<u4").tobytes(),
            self.side.astype("<i8").tobytes(),
            bytes(self.gmem_init),
            bytes(self.const_bank),
            blob,
        ])

    @classmethod
    def from_bytes(cls, data):
        hsize = struct.calcsize("<4sHHIIIIIII")
        magic, version, ncol, n, budget, gsize, ssize, csize, msize, _ = struct.unpack_from(
            "<4sHHIIIIIII", data)
        if magic != MAGIC:
            raise ProgramError("not a BFSM container")
        if version != VERSION or ncol != NCOL:
            raise ProgramError(f"unsupported BFSM version {version}")
        pos = hsize
        words = np.frombuffer(data, "<u4", n, pos)
        pos += 4 * n
        side = np.frombuffer(data, "<i8", n * NCOL, pos).reshape(n, NCOL)
        pos += 8 * n * NCOL
        gmem = bytes(data[pos:pos + gsize])
        pos += gsize
        const = bytes(data[pos:pos + csize])
        pos += csize
        meta = json.loads(bytes(data[pos:pos + msize]).decode())
        return cls(
            words=words.copy(), side=side.copy(),
            tags=[OperatorTag(k, l) for k, l in meta["tags"]],
            reg_budget=budget, gmem_init=gmem, smem_size=ssize, const_bank=const,
            regions={k: Region(*v) for k, v in meta["regions"].items()},
            writable_start=meta["writable_start"], output=meta["output"],
            logits=meta["logits"], meta=meta["meta"],
        )

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @property
    def digest(self):
        if self._digest is None:
            self._digest = hashlib.blake2b(self.to_bytes(), digest_size=8).hexdigest()
        return self._digest


class Label:
    __slots__ = ("name", "pc")

    def __init__(self, name):
        self.name = name
        self.pc = None


class Assembler:
    """Collects instructions under a current operator tag; resolves labels."""

    def __init__(self):
        self.code = []
        self.tag = OperatorTag("OTHER", None)
        self._fixups = []

    def __len__(self):
        return len(self.code)

    def label(self, name=""):
        return Label(name)

    def bind(self, label):
        label.pc = len(self.code)

    def emit(self, op, dest=None, *srcs, **kw):
        srcs = tuple(_coerce(s) for s in srcs)
        target = kw.pop("target", None)
        if isinstance(target, Label):
            self._fixups.append((len(self.code), target))
            target = -1
        self.code.append(Instruction(op, dest, srcs, target=target, tag=kw.pop("tag", self.tag), **kw))
        return len(self.code) - 1

    # shorthands used by the lowering
    def op(self, name, dest, *srcs, **kw):
        return self.emit(Opcode[name], dest, *srcs, **kw)

    def ldg(self, dest, base, offset=0, width=32, **kw):
        return self.emit(Opcode.LDG, dest, Reg(base), offset=offset, width=width, **kw)

    def stg(self, base, value, offset=0, width=32, **kw):
        return self.emit(Opcode.STG, None, Reg(base), Reg(value), offset=offset, width=width, **kw)

    def setp(self, name, pred, a, b, cmp, **kw):
        return self.emit(Opcode[name], pred, a, b, cmp=Cmp[cmp] if isinstance(cmp, str) else cmp, **kw)

    def bra(self, label, guard=None, neg=False):
        return self.emit(Opcode.BRA, None, target=label, guard=guard, guard_neg=neg)

    def snapshot(self, region, space=Space.GLOBAL):
        return self.emit(Opcode.SNAPSHOT, None, snap=(space, region.offset, region.size))

    def finish(self):
        code = list(self.code)
        for pc, lab in self._fixups:
            if lab.pc is None:
                raise ProgramError(f"unbound label {lab.name!r}")
            ins = code[pc]
            code[pc] = Instruction(**{**ins.__dict__, "target": lab.pc})
        return code


def _coerce(s):
    if isinstance(s, (Reg, Pred, Imm)) or s is None or type(s).__name__ == "Const":
        return s
    if isinstance(s, float):
        return Imm(int(np.float32(s).view(np.uint32)))
    if isinstance(s, (int, np.integer)):
        return Imm(int(s) & 0xFFFFFFFF)
    raise TypeError(f"cannot use {s!r} as an operand")


def assemble(code, gmem_init, reg_budget=None, **kw):
    """Build a Program from a list of Instructions."""
    tags = []
    index = {}
    words = np.zeros(len(code), np.uint32)
    side = np.zeros((len(code), NCOL), np.int64)
    for pc, ins in enumerate(code):
        tid = index.setdefault(ins.tag, len(index))
        if tid == len(tags):
            tags.append(ins.tag)
        e = encode(ins, tid)
        words[pc] = e.word
        side[pc] = e.side
    if reg_budget is None:
        used = [0]
        for ins in code:
            used += [s.idx for s in ins.srcs if isinstance(s, Reg) and s.idx != RZ]
            if ins.dest is not None and ins.opcode.dest_kind == "reg" and ins.dest != RZ:
                used.append(ins.dest)
        reg_budget = max(used) + 1
    prog = Program(words=words, side=side, tags=tags, reg_budget=reg_budget,
                   gmem_init=bytes(gmem_init), **kw)
    return prog.validate()
