import pytest
from hypothesis import given, settings, strategies as st

from bitstorm.isa import (RZ, Assembler, IllegalOpcode, Imm, Instruction, Opcode, Program,
                          Reg, Region, TrapCause, assemble, decode, encode, flip_bit, run)
from bitstorm.isa import fp
from bitstorm.isa.encoding import EncodedInstruction
from oracles import ieee, straightline
from strategies import any32, finite32, straight_programs, words

bits = st.integers(0, 31)


def _prog(build, mem=b"\0" * 64, **kw):
    a = Assembler()
    build(a)
    kw.setdefault("regions", {"output": Region(0, 4)})
    return assemble(a.finish(), mem, writable_start=0, output="output", logits="output", **kw)


# ---- bit flips -------------------------------------------------------------

def test_flip_bit_examples():
    assert flip_bit(0, 0) == 1
    assert flip_bit(0, 31) == 0x80000000
    assert flip_bit(0x3E4CCCCD, 30) == 0x7E4CCCCD
    with pytest.raises(ValueError):
        flip_bit(0, 32)


@given(words, bits)
def test_flip_bit_involution(w, b):
    once = flip_bit(w, b)
    assert once != w
    assert flip_bit(once, b) == w
    assert bin(once ^ w).count("1") == 1


# ---- encoding --------------------------------------------------------------

def _sample_instruction(op):
    if op in (Opcode.FSETP, Opcode.ISETP):
        from bitstorm.isa import Cmp
        return Instruction(op, 2, (Reg(3), Reg(4)), cmp=Cmp.GE)
    if op in (Opcode.LDG, Opcode.LDS, Opcode.LDC):
        return Instruction(op, 5, (Reg(6),), offset=16)
    if op in (Opcode.STG, Opcode.STS):
        return Instruction(op, None, (Reg(6), Reg(7)), offset=8)
    if op is Opcode.BRA:
        return Instruction(op, None, (), target=0, guard=1)
    if op in (Opcode.EXIT, Opcode.NOP):
        return Instruction(op)
    if op is Opcode.SNAPSHOT:
        return Instruction(op, snap=(0, 0, 4))
    return Instruction(op, 9, (Reg(10), Reg(11), Imm(7)), lut=0x96, shift=3)


@pytest.mark.parametrize("op", list(Opcode), ids=lambda o: o.name)
def test_encode_decode_roundtrip(op):
    ins = _sample_instruction(op)
    back = decode(encode(ins))
    assert back.opcode is op
    assert back.dest == ins.dest
    assert back.srcs[:len(ins.srcs)] == ins.srcs


def test_undefined_opcode_rejected():
    e = encode(Instruction(Opcode.MOV, 1, (Reg(2),)))
    bad = EncodedInstruction((e.word & 0x00FFFFFF) | 0xFF000000, e.side)
    with pytest.raises(IllegalOpcode):
        decode(bad)


# ---- arithmetic ------------------------------------------------------------

def test_reciprocal_of_five():
    assert fp.rcp(0x40A00000) == 0x3E4CCCCD




@settings(max_examples=300)
@given(any32, any32)
def test_fadd_fmul_match_exact_rounding(a, b):
    assert fp.fadd(a, b) == ieee.fadd(a, b)
    assert fp.fmul(a, b) == ieee.fmul(a, b)


@settings(max_examples=300)
@given(any32, any32, any32)
def test_ffma_single_rounding(a, b, c):
    assert fp.ffma(a, b, c) == ieee.ffma(a, b, c)


@settings(max_examples=200)
@given(finite32)
def test_rcp_matches_exact_rounding(a):
    assert fp.rcp(a) == ieee.rcp(a)


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.integers(0, 0xFFFF))
def test_fp16_lanes_are_independent(lo, hi, other):
    a = lo | (hi << 16)
    b = other | (other << 16)
    r = fp.hadd2(a, b)
    r2 = fp.hadd2(lo | (0x3C00 << 16), b)     # change only the high lane
    assert r & 0xFFFF == r2 & 0xFFFF


# ---- interpreter -----------------------------------------------------------

def test_dynamic_count_of_straight_line_program():
    def build(a):
        for i in range(6):
            a.op("MOV", 1 + i, i)
        a.op("EXIT", None)
    res = run(_prog(build))
    assert res.exited and res.trap is None
    assert res.dyn_count == 7


def test_misaligned_load_traps():
    def build(a):
        a.ldg(1, RZ, 2)
        a.op("EXIT", None)
    res = run(_prog(build))
    assert res.trap.cause is TrapCause.E4_MISALIGNED
    assert res.trap.pc_at_trap == 0


def test_out_of_bounds_store_traps():
    def build(a):
        a.op("MOV", 1, 7)
        a.stg(RZ, 1, 5000)
        a.op("EXIT", None)
    res = run(_prog(build))
    assert res.trap.cause is TrapCause.E1_ADDR_OOB
    assert res.trap.pc_at_trap == 1


def test_infinite_loop_reports_hang():
    def build(a):
        top = a.label("top")
        a.bind(top)
        a.op("IADD3", 1, Reg(1), Imm(1), Imm(0))
        a.bra(top)
        a.op("EXIT", None)
    res = run(_prog(build), max_dyn=1000)
    assert res.trap.cause is TrapCause.HANG
    assert res.dyn_count == 1000


def test_zero_register_discards_writes():
    def build(a):
        a.op("MOV", RZ, 1234)
        a.op("IADD3", 1, Reg(RZ), Imm(5), Imm(0))
        a.stg(RZ, 1, 0)
        a.op("EXIT", None)
    res = run(_prog(build))
    assert res.state.reg(RZ) == 0
    assert int(res.state.regs[1]) == 5


def test_run_is_deterministic(dot8):
    program, _ = dot8
    a, b = run(program), run(program)
    assert a.dyn_count == b.dyn_count
    assert bytes(a.output) == bytes(b.output)
    assert [s.digest for s in a.snapshots] == [s.digest for s in b.snapshots]


def test_bfsm_roundtrip(dot8, tmp_path):
    program, _ = dot8
    path = tmp_path / "p.bfsm"
    program.save(path)
    back = Program.load(path)
    assert back.to_bytes() == program.to_bytes()
    assert back.digest == program.digest
    assert bytes(run(back).output) == bytes(run(program).output)


# ---- differential check of random straight-line programs -------------------

@settings(max_examples=150, deadline=None)
@given(straight_programs())
def test_interpreter_matches_reference_interpreter(case):
    inputs, ops = case
    expect = straightline.run(ops, inputs)
    res = run(straightline.to_program(inputs, ops))
    assert res.exited
    for op in ops:
        assert int(res.state.regs[op.dest]) == expect[op.dest], op
