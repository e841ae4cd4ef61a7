"""Machine state, traps and the Python-facing run/step API.

All execution goes through the compiled loop in :mod:`.kernel`; this module
owns array allocation and translation of kernel status words into
:class:`Trap` / :class:`RunResult` objects.
"""
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernel as K
from .encoding import EncodedInstruction, RZ
from .opcodes import Opcode


class TrapCause(str, enum.Enum):
    E1_ADDR_OOB = "E1"
    E3_REG_OOB = "E3"
    E4_MISALIGNED = "E4"
    E5_ILLEGAL_OPERAND = "E5"
    HANG = "HANG"


CAUSE_BY_CODE = {
    K.E1_ADDR_OOB: TrapCause.E1_ADDR_OOB,
    K.E3_REG_OOB: TrapCause.E3_REG_OOB,
    K.E4_MISALIGNED: TrapCause.E4_MISALIGNED,
    K.E5_ILLEGAL_OPERAND: TrapCause.E5_ILLEGAL_OPERAND,
    K.HANG: TrapCause.HANG,
}


@dataclass(frozen=True)
class Trap:
    cause: TrapCause
    pc_at_trap: int
    detail: int


@dataclass
class Snapshot:
    tag: object
    pc: int
    digest: int
    data: Optional[bytes] = None


@dataclass
class MachineState:
    pc: int
    regs: np.ndarray                # uint32[256]; index 255 is RZ
    preds: np.ndarray               # uint8[8]; index 7 is PT
    gmem: np.ndarray
    smem: np.ndarray
    dyn_count: int = 0
    trap: Optional[Trap] = None
    exited: bool = False
    nsnap: int = 0

    @classmethod
    def initial(cls, program):
        preds = np.zeros(8, np.uint8)
        preds[7] = 1
        return cls(pc=0, regs=np.zeros(256, np.uint32), preds=preds,
                   gmem=np.frombuffer(program.gmem_init, np.uint8).copy(),
                   smem=np.zeros(program.smem_size, np.uint8))

    def copy(self):
        return MachineState(self.pc, self.regs.copy(), self.preds.copy(), self.gmem.copy(),
                            self.smem.copy(), self.dyn_count, self.trap, self.exited, self.nsnap)

    @property
    def halted(self):
        return self.exited or self.trap is not None

    def reg(self, i):
        return 0 if i == RZ else int(self.regs[i])


class StepKind(enum.Enum):
    CONTINUED = "Continued"
    EXITED = "Exited"
    TRAPPED = "Trapped"


@dataclass(frozen=True)
class StepResult:
    kind: StepKind
    trap: Optional[Trap] = None


@dataclass
class RunResult:
    state: MachineState
    dyn_count: int
    trap: Optional[Trap]
    snapshots: list
    histogram: dict                 # opcode name -> dynamic count
    exited: bool = False

    @property
    def output(self):
        return self.state.gmem


class HaltedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# kernel plumbing
# ---------------------------------------------------------------------------

def _i64(rows=0, cols=None):
    return np.zeros((rows, cols) if cols else rows, np.int64)


EMPTY = {
    "faults": _i64(0, 4), "snaps": _i64(0, 2), "gsnap": _i64(0),
    "capture": np.zeros(0, np.uint8), "trace": _i64(0), "ck_dyn": _i64(0),
    "ck_meta": _i64(0, 3), "ck_regs": np.zeros((0, 256), np.uint32),
    "ck_preds": np.zeros((0, 8), np.uint8), "ck_gmem": np.zeros((0, 0), np.uint8),
    "ck_smem": np.zeros((0, 0), np.uint8), "treg": np.zeros(256, np.uint8),
    "tpred": np.zeros(8, np.uint8), "tg": np.zeros(0, np.uint8), "ts": np.zeros(0, np.uint8),
}


def make_st(state):
    st = np.zeros(K.ST_SIZE, np.int64)
    st[K.ST_PC] = state.pc
    st[K.ST_DYN] = state.dyn_count
    st[K.ST_NSNAP] = state.nsnap
    st[K.ST_FIRST_DIFF] = -1
    st[K.ST_FIRST_DIFF_PC] = -1
    return st


def make_prm(program, max_dyn, step_limit=-1, flags=0, last_fault=-1):
    prm = np.zeros(K.PRM_SIZE, np.int64)
    prm[K.P_MAX_DYN] = max_dyn
    prm[K.P_STEP_LIMIT] = step_limit
    prm[K.P_REG_BUDGET] = program.reg_budget
    prm[K.P_FLAGS] = flags
    prm[K.P_WRITABLE] = program.writable_start
    prm[K.P_LAST_FAULT] = last_fault
    return prm


def call_kernel(program, state, st, prm, hist, **arrays):
    words, side, cmem = program.kernel_code()
    a = dict(EMPTY)
    a.update(arrays)
    if "tg" not in arrays:
        a["tg"] = np.zeros(0, np.uint8)
    return K.execute(words, side, state.regs, state.preds, state.gmem, state.smem, cmem,
                     st, prm, a["faults"], a["snaps"], a["gsnap"], a["capture"], hist,
                     a["trace"], a["ck_dyn"], a["ck_meta"], a["ck_regs"], a["ck_preds"],
                     a["ck_gmem"], a["ck_smem"], a["treg"], a["tpred"], a["tg"], a["ts"])


def absorb(state, st):
    """Copy kernel status back into a MachineState."""
    state.pc = int(st[K.ST_PC])
    state.dyn_count = int(st[K.ST_DYN])
    state.nsnap = int(st[K.ST_NSNAP])
    status = int(st[K.ST_STATUS])
    if status == K.TRAPPED:
        state.trap = Trap(CAUSE_BY_CODE[int(st[K.ST_CAUSE])], int(st[K.ST_TRAP_PC]),
                          int(st[K.ST_DETAIL]))
    elif status == K.EXITED:
        state.exited = True
    return status


def histogram_dict(hist):
    return {Opcode(i).name: int(c) for i, c in enumerate(hist) if c and i < len(Opcode)}


def _is_snapshot(program, pc):
    return 0 <= pc < len(program) and (int(program.words[pc]) >> 24) == Opcode.SNAPSHOT


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

class Hook:
    """Injection callback protocol for :func:`run`.

    ``before`` may return a replacement encoding word for this dynamic
    instance; ``after`` may return a replacement value for the register or
    predicate the instruction just wrote (``dest`` is ``("reg", i)`` or
    ``("pred", i)``).  Returning ``None`` leaves things unchanged.
    """

    def before(self, dyn_index, instruction: EncodedInstruction):
        return None

    def after(self, dyn_index, dest, value):
        return None


def _snapshot_of(program, state):
    from .encoding import OFF, SNAPLEN, SNAPSPACE
    pc = state.pc
    space, off, length = (int(program.side[pc, c]) for c in (SNAPSPACE, OFF, SNAPLEN))
    buf = state.gmem if space == 0 else state.smem
    data = bytes(buf[off:off + length])
    return Snapshot(program.tag_of(pc), pc, int(K.fnv1a(buf, off, length)), data)


def step(state: MachineState, program, hook=None, max_dyn=None, _hist=None, _snaps=None):
    """Execute one instruction (a SNAPSHOT marker counts as a step, not a dyn instruction)."""
    if state.halted:
        raise HaltedError("machine already halted")
    hist = _hist if _hist is not None else np.zeros(32, np.int64)
    if max_dyn is None:
        max_dyn = np.iinfo(np.int64).max
    if _is_snapshot(program, state.pc) and state.dyn_count < max_dyn:
        snap = _snapshot_of(program, state)
        if _snaps is not None:
            _snaps.append(snap)
        state.nsnap += 1
        state.pc += 1
        return StepResult(StepKind.CONTINUED)

    faults = EMPTY["faults"]
    if hook is not None and 0 <= state.pc < len(program) and state.dyn_count < max_dyn:
        new = hook.before(state.dyn_count, program.encoded(state.pc))
        if new is not None:
            mask = (int(new) ^ int(program.words[state.pc])) & 0xFFFFFFFF
            if mask:
                faults = np.array([[state.dyn_count, 2, mask, 0]], np.int64)
    dyn = state.dyn_count
    st = make_st(state)
    st[K.ST_WKIND] = -1
    prm = make_prm(program, max_dyn, step_limit=1)
    call_kernel(program, state, st, prm, hist, faults=faults)
    status = absorb(state, st)
    if hook is not None and st[K.ST_WKIND] > 0 and status == K.RUNNING:
        d = int(st[K.ST_WIDX])
        if st[K.ST_WKIND] == 1 and d != RZ:
            v = hook.after(dyn, ("reg", d), int(state.regs[d]))
            if v is not None:
                state.regs[d] = np.uint32(int(v) & 0xFFFFFFFF)
        elif st[K.ST_WKIND] == 2 and d != 7:
            v = hook.after(dyn, ("pred", d), int(state.preds[d]))
            if v is not None:
                state.preds[d] = 1 if v else 0
    if state.trap is not None:
        return StepResult(StepKind.TRAPPED, state.trap)
    if state.exited:
        return StepResult(StepKind.EXITED)
    return StepResult(StepKind.CONTINUED)


def run(program, max_dyn=None, hook=None, state=None, capture=True):
    """Run to EXIT, trap or budget exhaustion (HANG)."""
    state = MachineState.initial(program) if state is None else state
    if max_dyn is None:
        max_dyn = 1 << 40
    hist = np.zeros(32, np.int64)
    snaps = []
    if hook is None:
        # fast path: whole run inside the compiled loop, twice if captures are wanted
        probe = state.copy()
        st = make_st(probe)
        cap = np.zeros(1, np.uint8)
        buf = np.zeros((1, 2), np.int64)
        call_kernel(program, probe, st, make_prm(program, max_dyn), np.zeros(32, np.int64),
                    snaps=buf, capture=cap)
        nsnap = int(st[K.ST_NSNAP]) - state.nsnap
        ncap = int(st[K.ST_CAPPTR])
        sbuf = np.zeros((nsnap, 2), np.int64)
        cbuf = np.zeros(ncap if capture else 0, np.uint8)
        st = make_st(state)
        st[K.ST_NSNAP] = 0
        call_kernel(program, state, st, make_prm(program, max_dyn), hist, snaps=sbuf, capture=cbuf)
        st[K.ST_NSNAP] += state.nsnap
        absorb(state, st)
        pos = 0
        for pc, dg in sbuf:
            length = int(program.side[pc][K.SNAPLEN])
            data = bytes(cbuf[pos:pos + length]) if capture else None
            pos += length
            snaps.append(Snapshot(program.tag_of(int(pc)), int(pc), int(dg), data))
    else:
        while not state.halted:
            step(state, program, hook=hook, max_dyn=max_dyn, _hist=hist, _snaps=snaps)
    return RunResult(state=state, dyn_count=state.dyn_count, trap=state.trap, snapshots=snaps,
                     histogram=histogram_dict(hist), exited=state.exited)
