"""Miniature scalar GPU-like ISA: encoding, arithmetic and interpreter."""
from .encoding import (PT, RZ, Const, EncodedInstruction, IllegalOpcode, Imm,
                       Instruction, OperatorTag, Pred, Reg, decode, disassemble,
                       encode)
from .fp import flip_bit
from .machine import (Hook, MachineState, RunResult, Snapshot, StepKind,
                      StepResult, Trap, TrapCause, run, step)
from .opcodes import Cmp, Group, Opcode, Space
from .program import Assembler, Program, ProgramError, Region, assemble

__all__ = [
    "PT", "RZ", "Const", "EncodedInstruction", "IllegalOpcode", "Imm", "Instruction",
    "OperatorTag", "Pred", "Reg", "decode", "disassemble", "encode", "flip_bit", "Hook",
    "MachineState", "RunResult", "Snapshot", "StepKind", "StepResult", "Trap", "TrapCause",
    "run", "step", "Cmp", "Group", "Opcode", "Space", "Assembler", "Program",
    "ProgramError", "Region", "assemble",
]
