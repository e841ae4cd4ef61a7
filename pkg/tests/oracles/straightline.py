"""Pure-Python interpreter for branch-free programs over a small opcode subset.

Used as a second route against the compiled interpreter.  Registers are
plain ints; memory is a bytearray; only 32-bit LDG/STG with base RZ occur.
"""
from dataclasses import dataclass

from . import ieee

MASK = 0xFFFFFFFF


@dataclass
class Op:
    name: str
    dest: int
    srcs: tuple          # register indices
    lut: int = 0
    shift: int = 0


def lop3(a, b, c, lut):
    out = 0
    for i in range(32):
        idx = (((a >> i) & 1) << 2) | (((b >> i) & 1) << 1) | ((c >> i) & 1)
        out |= ((lut >> idx) & 1) << i
    return out


def shf(a, b, s):
    pair = (b << 32) | a
    return (pair >> s) & MASK


def alu(op, regs):
    v = [regs[s] for s in op.srcs]
    n = op.name
    if n == "FADD":
        return ieee.fadd(v[0], v[1])
    if n == "FMUL":
        return ieee.fmul(v[0], v[1])
    if n == "FFMA":
        return ieee.ffma(v[0], v[1], v[2])
    if n == "IADD3":
        return (v[0] + v[1] + v[2]) & MASK
    if n == "IMAD":
        return (v[0] * v[1] + v[2]) & MASK
    if n == "LOP3":
        return lop3(v[0], v[1], v[2], op.lut)
    if n == "SHF":
        return shf(v[0], v[1], op.shift)
    if n == "LEA":
        return ((v[0] << op.shift) + v[1]) & MASK
    if n == "MOV":
        return v[0]
    raise ValueError(n)


ARITY = {"FADD": 2, "FMUL": 2, "FFMA": 3, "IADD3": 3, "IMAD": 3, "LOP3": 3, "SHF": 2,
         "LEA": 2, "MOV": 1}


def run(ops, inputs):
    """Registers after loading ``inputs`` into R0.. and applying ``ops``."""
    regs = {i: w & MASK for i, w in enumerate(inputs)}
    for op in ops:
        regs[op.dest] = alu(op, regs)
    return regs


def to_program(inputs, ops):
    """The same program for the compiled interpreter; every result is also stored."""
    from bitstorm.isa import RZ, Assembler, Reg, Region, assemble
    mem = bytearray(4 * (len(inputs) + len(ops)) + 64)
    for i, w in enumerate(inputs):
        mem[4 * i:4 * i + 4] = int(w).to_bytes(4, "little")
    out = 4 * len(inputs)
    a = Assembler()
    for i in range(len(inputs)):
        a.ldg(i, RZ, 4 * i)
    for op in ops:
        srcs = [Reg(s) for s in op.srcs]
        if op.name in ("SHF", "LEA"):
            a.op(op.name, op.dest, *srcs, shift=op.shift)
        elif op.name == "LOP3":
            a.op(op.name, op.dest, *srcs, lut=op.lut)
        else:
            a.op(op.name, op.dest, *srcs)
        a.stg(RZ, op.dest, out + 4 * (op.dest - len(inputs)))
    a.op("EXIT", None)
    return assemble(a.finish(), bytes(mem), regions={"output": Region(out, 4 * len(ops))},
                    writable_start=out, output="output", logits="output")
