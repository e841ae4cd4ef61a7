"""Opcode table of the miniature GPU-like ISA.

Ordinals are dense (0..31) and stable: they are part of the encoding and of
every persisted program, so never reorder this table.

===========  ======  =====================================================
group        ords    mnemonics
===========  ======  =====================================================
FP32         0-7     FADD FMUL FFMA FSETP MUFU_RCP MUFU_EX2 MUFU_LG2 MUFU_RSQ
FP16         8-14    HADD2 HMUL2 HFMA2 HMMA_STEP F2H2 H2F_LO H2F_HI
INT          15-20   IMAD IADD3 LOP3 SHF LEA ISETP
MOVSEL       21-22   MOV SEL
MEM          23-27   LDG STG LDS STS LDC
CTRL         28-31   BRA EXIT NOP SNAPSHOT
===========  ======  =====================================================
"""
import enum


class Group(enum.Enum):
    FP32 = "FP32"
    FP16 = "FP16"
    INT = "INT"
    MOVSEL = "MOVSEL"
    MEM = "MEM"
    CTRL = "CTRL"


class Opcode(enum.IntEnum):
    FADD = 0
    FMUL = 1
    FFMA = 2
    FSETP = 3
    MUFU_RCP = 4
    MUFU_EX2 = 5
    MUFU_LG2 = 6
    MUFU_RSQ = 7
    HADD2 = 8
    HMUL2 = 9
    HFMA2 = 10
    HMMA_STEP = 11
    F2H2 = 12
    H2F_LO = 13
    H2F_HI = 14
    IMAD = 15
    IADD3 = 16
    LOP3 = 17
    SHF = 18
    LEA = 19
    ISETP = 20
    MOV = 21
    SEL = 22
    LDG = 23
    STG = 24
    LDS = 25
    STS = 26
    LDC = 27
    BRA = 28
    EXIT = 29
    NOP = 30
    SNAPSHOT = 31

    @property
    def group(self):
        return OPCODE_GROUP[self]

    @property
    def ordinal(self):
        return int(self)

    @property
    def dest_kind(self):
        if self in PRED_DEST:
            return "pred"
        if self in NO_DEST:
            return None
        return "reg"


NUM_OPCODES = len(Opcode)

OPCODE_GROUP = {}
for _op in Opcode:
    if _op <= Opcode.MUFU_RSQ:
        OPCODE_GROUP[_op] = Group.FP32
    elif _op <= Opcode.H2F_HI:
        OPCODE_GROUP[_op] = Group.FP16
    elif _op <= Opcode.ISETP:
        OPCODE_GROUP[_op] = Group.INT
    elif _op <= Opcode.SEL:
        OPCODE_GROUP[_op] = Group.MOVSEL
    elif _op <= Opcode.LDC:
        OPCODE_GROUP[_op] = Group.MEM
    else:
        OPCODE_GROUP[_op] = Group.CTRL

PRED_DEST = frozenset({Opcode.FSETP, Opcode.ISETP})
NO_DEST = frozenset({Opcode.STG, Opcode.STS, Opcode.BRA, Opcode.EXIT, Opcode.NOP, Opcode.SNAPSHOT})
LOADS = frozenset({Opcode.LDG, Opcode.LDS, Opcode.LDC})
STORES = frozenset({Opcode.STG, Opcode.STS})


class Cmp(enum.IntEnum):
    LT = 0
    LE = 1
    EQ = 2
    NE = 3
    GE = 4
    GT = 5


class Space(enum.IntEnum):
    GLOBAL = 0
    SHARED = 1
    CONST = 2


def space_of(op):
    if op in (Opcode.LDG, Opcode.STG):
        return Space.GLOBAL
    if op in (Opcode.LDS, Opcode.STS):
        return Space.SHARED
    if op is Opcode.LDC:
        return Space.CONST
    return None


def group_of(name):
    return Opcode[name].group.value
