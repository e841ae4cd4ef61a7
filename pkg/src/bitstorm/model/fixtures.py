"""Tiny hand-written programs used as exhaustive-enumeration fixtures."""
import numpy as np

from ..isa.encoding import OperatorTag, Reg, Imm, RZ
from ..isa.opcodes import Cmp
from ..isa.program import Assembler, Region, assemble

SEGMENT = 4096


def dot_inputs(n):
    i = np.arange(n)
    x = ((i + 1) * 0.375 * np.where(i % 2, -1.0, 1.0)).astype(np.float32)
    w = (1.5 - 0.25 * i).astype(np.float32)
    return x, w


def dot_product(n):
    """out = ffma-chain(x[i] * w[i]) over a runtime loop, stored to one word."""
    x, w = dot_inputs(n)
    X, W = 0, 4 * n
    OUT = 8 * n
    mem = bytearray(SEGMENT)
    mem[X:X + 4 * n] = x.tobytes()
    mem[W:W + 4 * n] = w.tobytes()
    a = Assembler()
    a.tag = OperatorTag("MLP", 0)
    a.op("MOV", 1, 0)
    a.op("MOV", 2, 0)
    top = a.label("loop")
    a.bind(top)
    a.ldg(3, 1, X)
    a.ldg(4, 1, W)
    a.op("FFMA", 2, Reg(3), Reg(4), Reg(2))
    a.op("IADD3", 1, Reg(1), Imm(4), Imm(0))
    a.setp("ISETP", 0, Reg(1), Imm(4 * n), Cmp.LT)
    a.bra(top, guard=0)
    a.tag = OperatorTag("LM_HEAD", None)
    a.stg(RZ, 2, OUT)
    a.snapshot(Region(OUT, 4))
    a.op("EXIT", None)
    regions = {"x": Region(X, 4 * n), "w": Region(W, 4 * n), "output": Region(OUT, 4)}
    return assemble(a.finish(), bytes(mem), regions=regions, writable_start=OUT,
                    output="output", logits="output", meta={"fixture": f"dot{n}"})


def dot_reference(n):
    from ..isa.fp import ffma
    x, w = dot_inputs(n)
    acc = 0
    for xi, wi in zip(x.view(np.uint32), w.view(np.uint32)):
        acc = ffma(int(xi), int(wi), acc)
    return acc


FIXTURES = {"dot4": lambda: dot_product(4), "dot8": lambda: dot_product(8)}
