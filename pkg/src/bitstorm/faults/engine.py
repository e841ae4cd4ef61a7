"""Injected-trial execution.

Every trial restarts from the latest golden checkpoint at or before its
first fault, runs with taint tracking, snapshot comparison and convergence
detection switched on, and stops early once its machine state equals the
golden state at a later checkpoint (the remainder of the run is then known
to be identical to the golden run).  Many trials are executed per call of
the compiled batch driver to keep interpreter overhead per trial small.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..isa import kernel as K
from ..isa.machine import CAUSE_BY_CODE, Trap, make_prm
from ..model.golden import logit_slots

jit = K.jit

# columns of the integer result table
R_STATUS, R_CAUSE, R_DETAIL, R_TRAP_PC, R_DYN, R_FIRST_DIFF, R_FIRST_DIFF_PC = range(7)
R_TADDR, R_TCTRL, R_WILD, R_REACHED, R_TOKENS_EQ, R_DIGEST, R_NSNAP = range(7, 14)
R_COLS = 16


@jit
def _restore(dst, src, k):
    for i in range(dst.shape[0]):
        dst[i] = src[k, i]


@jit
def _zero(a):
    for i in range(a.shape[0]):
        a[i] = 0


@jit
def _bytes_equal(a, off, b):
    for i in range(b.shape[0]):
        if a[off + i] != b[i]:
            return False
    return True


@jit
def run_batch(words, side, cmem, regs, preds, gmem, smem, prm, faults, foff,
              ck_dyn, ck_meta, ck_regs, ck_preds, ck_gmem, ck_smem,
              gsnap, gsnap_pc, gcapture, capture, cap32, gcap32, slots, hist,
              treg, tpred, tg, ts, out_off, gout, gdigest, gdyn, iout, fout):
    """Run trial ``t`` with fault rows ``faults[foff[t]:foff[t+1]]`` for every t."""
    st = np.zeros(K.ST_SIZE, np.int64)
    snaps = np.zeros((0, 2), np.int64)
    trace = np.zeros(0, np.int64)
    flags = K.F_TAINT | K.F_CMP_SNAP
    out_len = gout.shape[0]
    for t in range(foff.shape[0] - 1):
        fa = faults[foff[t]:foff[t + 1]]
        nf = fa.shape[0]
        if nf > 0:
            k = np.searchsorted(ck_dyn, fa[0, 0], side="right") - 1
            prm[K.P_LAST_FAULT] = fa[nf - 1, 0]
            prm[K.P_FLAGS] = flags | K.F_CONVERGE
        else:
            k = 0
            prm[K.P_LAST_FAULT] = -1
            prm[K.P_FLAGS] = flags
        _restore(regs, ck_regs, k)
        _restore(preds, ck_preds, k)
        _restore(gmem, ck_gmem, k)
        _restore(smem, ck_smem, k)
        _zero(st)
        st[K.ST_PC] = ck_meta[k, 0]
        st[K.ST_DYN] = ck_dyn[k]
        st[K.ST_NSNAP] = ck_meta[k, 1]
        st[K.ST_CAPPTR] = ck_meta[k, 2]
        st[K.ST_CKPTR] = k + 1
        st[K.ST_FIRST_DIFF] = -1
        st[K.ST_FIRST_DIFF_PC] = -1
        for i in range(capture.shape[0]):
            capture[i] = gcapture[i]
        _zero(treg)
        _zero(tpred)
        _zero(tg)
        _zero(ts)
        status = K.execute(words, side, regs, preds, gmem, smem, cmem, st, prm,
                           fa, snaps, gsnap, capture, hist, trace,
                           ck_dyn, ck_meta, ck_regs, ck_preds, ck_gmem, ck_smem,
                           treg, tpred, tg, ts)
        if status == K.EXITED and st[K.ST_FIRST_DIFF] < 0 and st[K.ST_NSNAP] < gsnap.shape[0]:
            # exited before producing every golden snapshot: the first missing one differs
            st[K.ST_FIRST_DIFF] = st[K.ST_NSNAP]
            st[K.ST_FIRST_DIFF_PC] = gsnap_pc[st[K.ST_NSNAP]]
        reached = 0
        for j in range(nf):
            if fa[j, 3] != 0:
                reached |= 1 << j
        iout[t, R_STATUS] = status
        iout[t, R_CAUSE] = st[K.ST_CAUSE] if status == K.TRAPPED else 0
        iout[t, R_DETAIL] = st[K.ST_DETAIL]
        iout[t, R_TRAP_PC] = st[K.ST_TRAP_PC] if status == K.TRAPPED else -1
        iout[t, R_FIRST_DIFF] = st[K.ST_FIRST_DIFF]
        iout[t, R_FIRST_DIFF_PC] = st[K.ST_FIRST_DIFF_PC]
        iout[t, R_TADDR] = st[K.ST_TADDR]
        iout[t, R_TCTRL] = st[K.ST_TCTRL]
        iout[t, R_WILD] = st[K.ST_WILD]
        iout[t, R_REACHED] = reached
        iout[t, R_NSNAP] = st[K.ST_NSNAP]
        dev = 0.0
        if status == K.CONVERGED:
            iout[t, R_DYN] = gdyn
            iout[t, R_TOKENS_EQ] = 1
            iout[t, R_DIGEST] = gdigest
        else:
            iout[t, R_DYN] = st[K.ST_DYN]
            iout[t, R_TOKENS_EQ] = 1 if _bytes_equal(gmem, out_off, gout) else 0
            iout[t, R_DIGEST] = K.fnv1a(gmem, out_off, out_len)
            if status == K.EXITED:
                for s in range(slots.shape[0]):
                    base = slots[s, 0] >> 2
                    for i in range(slots[s, 1]):
                        d = abs(np.float64(cap32[base + i]) - np.float64(gcap32[base + i]))
                        if not np.isfinite(d):
                            dev = np.inf
                        elif d > dev:
                            dev = d
        fout[t] = dev


@dataclass
class RawTrialResult:
    program_digest: str
    status: str                      # "EXITED" | "TRAPPED" | "CONVERGED"
    trap: Optional[Trap]
    dyn_count: int
    first_diff: int                  # index of first differing snapshot or -1
    first_diff_pc: int
    tainted_address: bool
    tainted_control: bool
    wild_store: bool
    reached: tuple
    tokens_equal: bool
    tokens_digest: int
    max_logit_dev: float
    first_diff_tag: Optional[object] = None     # OperatorTag of that snapshot


_STATUS = {K.EXITED: "EXITED", K.TRAPPED: "TRAPPED", K.CONVERGED: "CONVERGED",
           K.RUNNING: "RUNNING"}


class TrialContext:
    """Golden-derived state shared by all trials of one program."""

    def __init__(self, program, golden, hang_multiplier=10, interval=None):
        if golden.program_digest != program.digest:
            raise ValueError("golden trace was recorded for a different program")
        self.program = program
        self.golden = golden
        self.ck = golden.checkpoints(program, interval)
        self.words, self.side, self.cmem = program.kernel_code()
        g = self.ck
        self.regs = g.regs[0].copy()
        self.preds = g.preds[0].copy()
        self.gmem = g.gmem[0].copy()
        self.smem = g.smem[0].copy()
        self.max_dyn = golden.default_max_dyn(hang_multiplier)
        self.prm = make_prm(program, self.max_dyn)
        ncap = len(golden.capture)
        pad = (-ncap) % 4
        self.gcapture = np.frombuffer(golden.capture + b"\0" * pad, np.uint8).copy()
        self.ncap = ncap
        self.capture = np.zeros(ncap + pad, np.uint8)
        self.slots = np.array(logit_slots(program, golden.snap_pcs, golden.snap_lengths),
                              np.int64).reshape(-1, 2)
        out = program.regions[program.output]
        self.out_off = out.offset
        self.gout = np.frombuffer(golden.output, np.uint8).copy()
        self.gdigest = int(K.fnv1a(self.gout, 0, len(self.gout)))
        self.snap_pcs = np.asarray(golden.snap_pcs, np.int64)
        self.hist = np.zeros(32, np.int64)
        self.treg = np.zeros(256, np.uint8)
        self.tpred = np.zeros(8, np.uint8)
        self.tg = np.zeros(len(self.gmem), np.uint8)
        self.ts = np.zeros(len(self.smem), np.uint8)

    def run_rows(self, fault_lists):
        """Execute trials given as lists/arrays of kernel fault rows.

        Returns the integer result table, the max-logit-deviation vector and
        the (updated) concatenated fault table.
        """
        counts = [len(f) for f in fault_lists]
        foff = np.zeros(len(fault_lists) + 1, np.int64)
        foff[1:] = np.cumsum(counts)
        faults = np.zeros((int(foff[-1]), 4), np.int64)
        for i, f in enumerate(fault_lists):
            if counts[i]:
                rows = np.asarray(f, np.int64).reshape(-1, 4)
                order = np.lexsort((rows[:, 2], rows[:, 1], rows[:, 0]))
                faults[foff[i]:foff[i + 1]] = rows[order]
        iout, fout = self.run_table(faults, foff)
        return iout, fout, faults, foff

    def run_table(self, faults, foff):
        """Low-level entry: ``faults`` rows grouped per trial by ``foff``, each group sorted by dyn."""
        if len(foff) > 1 and int(np.max(np.diff(foff))) > 62:
            raise ValueError("at most 62 faults per trial")
        faults[:, 3] = 0
        n = len(foff) - 1
        iout = np.zeros((n, R_COLS), np.int64)
        fout = np.zeros(n, np.float64)
        # the kernel sees the unpadded capture; the float views cover the padding
        cap, nc = self.capture, self.ncap
        run_batch(self.words, self.side, self.cmem, self.regs, self.preds, self.gmem, self.smem,
                  self.prm, faults, foff, self.ck.dyn, self.ck.meta, self.ck.regs, self.ck.preds,
                  self.ck.gmem, self.ck.smem, self.golden.snap_digests, self.snap_pcs, self.gcapture[:nc],
                  cap[:nc], cap.view(np.float32), self.gcapture.view(np.float32),
                  self.slots, self.hist, self.treg, self.tpred, self.tg, self.ts,
                  self.out_off, self.gout, self.gdigest, self.golden.dyn_count, iout, fout)
        return iout, fout

    def results(self, fault_lists):
        iout, fout, faults, foff = self.run_rows(fault_lists)
        out = []
        for t in range(len(fault_lists)):
            out.append(self._raw(iout[t], fout[t], int(foff[t + 1] - foff[t])))
        return out

    def _raw(self, row, dev, nf):
        status = int(row[R_STATUS])
        trap = None
        if status == K.TRAPPED:
            trap = Trap(CAUSE_BY_CODE[int(row[R_CAUSE])], int(row[R_TRAP_PC]), int(row[R_DETAIL]))
        mask = int(row[R_REACHED])
        return RawTrialResult(
            program_digest=self.program.digest, status=_STATUS[status], trap=trap,
            dyn_count=int(row[R_DYN]), first_diff=int(row[R_FIRST_DIFF]),
            first_diff_pc=int(row[R_FIRST_DIFF_PC]), tainted_address=bool(row[R_TADDR]),
            tainted_control=bool(row[R_TCTRL]), wild_store=bool(row[R_WILD]),
            reached=tuple(bool(mask >> j & 1) for j in range(nf)),
            tokens_equal=bool(row[R_TOKENS_EQ]),
            tokens_digest=int(row[R_DIGEST]) & 0xFFFFFFFFFFFFFFFF, max_logit_dev=float(dev),
            first_diff_tag=self.program.tag_of(int(row[R_FIRST_DIFF_PC])) if row[R_FIRST_DIFF] >= 0 else None)


def site_row(site):
    from .sites import Target
    kind = 1 if site.target is Target.ENCODING_WORD else 0
    return (site.dyn_index, kind, site.bit, 0)


def execute_trial(ctx: TrialContext, faults) -> RawTrialResult:
    """Run one trial with the given FaultSite list (empty list: fault-free replay)."""
    rows = [site_row(s) for s in faults]
    order = sorted(range(len(rows)), key=lambda i: rows[i])
    res = ctx.results([[rows[i] for i in order]])[0]
    # report reachability in the caller's site order
    reached = [False] * len(rows)
    for pos, i in enumerate(order):
        reached[i] = res.reached[pos]
    res.reached = tuple(reached)
    return res
