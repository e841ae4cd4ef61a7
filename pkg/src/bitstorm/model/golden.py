"""Fault-free reference execution and its persisted form."""
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..isa import kernel as K
from ..isa.machine import (MachineState, Snapshot, absorb, call_kernel,
                           histogram_dict, make_prm, make_st)
from ..isa.opcodes import Opcode

GT_MAGIC = b"BFGT"
GT_VERSION = 1
SCHEMA = "bitstorm.golden/1"


class GoldenTrapped(RuntimeError):
    pass


@dataclass
class Checkpoints:
    dyn: np.ndarray          # int64[K], ascending, dyn[0] == 0
    meta: np.ndarray         # int64[K, 3]: pc, nsnap, capture pointer
    regs: np.ndarray
    preds: np.ndarray
    gmem: np.ndarray
    smem: np.ndarray

    def index_for(self, dyn):
        """Latest checkpoint taken at or before ``dyn``."""
        return int(np.searchsorted(self.dyn, dyn, side="right")) - 1


@dataclass
class GoldenTrace:
    program_digest: str
    dyn_count: int
    histogram: dict                      # opcode name -> dynamic count
    trace: np.ndarray                    # int64[dyn]: pc*2 + executed
    snap_pcs: np.ndarray                 # int64[nsnap]
    snap_digests: np.ndarray             # int64[nsnap] (FNV-1a 64, two's complement)
    capture: bytes                       # all snapshot regions back to back
    output: bytes                        # final contents of the output region
    snap_tags: list                      # OperatorTag per snapshot
    snap_lengths: np.ndarray
    logits_final: list = field(default_factory=list)
    _ck: Optional[Checkpoints] = field(default=None, repr=False)

    @property
    def tokens(self):
        return [int(t) for t in np.frombuffer(self.output, np.uint32)]

    @property
    def proportions(self):
        total = sum(self.histogram.values())
        return {k: v / total for k, v in self.histogram.items() if v}

    @property
    def snapshots(self):
        out, pos = [], 0
        for tag, pc, dg, n in zip(self.snap_tags, self.snap_pcs, self.snap_digests, self.snap_lengths):
            out.append(Snapshot(tag, int(pc), int(dg) & 0xFFFFFFFFFFFFFFFF,
                                self.capture[pos:pos + int(n)]))
            pos += int(n)
        return out

    @property
    def snap_offsets(self):
        return np.concatenate([[0], np.cumsum(self.snap_lengths)]).astype(np.int64)

    def default_max_dyn(self, multiplier=10):
        return max(1, int(multiplier * self.dyn_count))

    def checkpoints(self, program, interval=None):
        if self._ck is None:
            self._ck = compute_checkpoints(program, self, interval)
        return self._ck

    # ---- persistence ---------------------------------------------------

    def summary(self):
        return {
            "schema": SCHEMA,
            "program_digest": self.program_digest,
            "dyn_count": self.dyn_count,
            "histogram": dict(sorted(self.histogram.items(), key=lambda kv: Opcode[kv[0]])),
            "p_i": {k: v for k, v in sorted(self.proportions.items(), key=lambda kv: Opcode[kv[0]])},
            "tokens": self.tokens,
            "snapshots": [{"operator": t.kind, "layer": t.layer, "pc": int(pc),
                           "digest": f"{int(d) & 0xFFFFFFFFFFFFFFFF:016x}"}
                          for t, pc, d in zip(self.snap_tags, self.snap_pcs, self.snap_digests)],
        }

    def to_bytes(self):
        head = {"program_digest": self.program_digest, "histogram": self.histogram,
                "tags": [[t.kind, t.layer] for t in self.snap_tags],
                "logits_len": [len(x) for x in self.logits_final]}
        blob = json.dumps(head, sort_keys=True).encode()
        parts = [struct.pack("<4sHHQQQQQ", GT_MAGIC, GT_VERSION, 0, len(blob), self.dyn_count,
                             len(self.snap_pcs), len(self.capture), len(self.output)), blob,
                 self.trace.astype("<i8").tobytes(), self.snap_pcs.astype("<i8").tobytes(),
                 self.snap_digests.astype("<i8").tobytes(), self.snap_lengths.astype("<i8").tobytes(),
                 self.capture, self.output]
        parts += [np.asarray(x, "<f4").tobytes() for x in self.logits_final]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        from ..isa.encoding import OperatorTag
        fmt = "<4sHHQQQQQ"
        magic, ver, _, nblob, dyn, nsnap, ncap, nout = struct.unpack_from(fmt, data)
        if magic != GT_MAGIC or ver != GT_VERSION:
            raise ValueError("not a golden-trace container of a supported version")
        pos = struct.calcsize(fmt)
        head = json.loads(data[pos:pos + nblob])
        pos += nblob

        def take(n, dtype):
            nonlocal pos
            arr = np.frombuffer(data, dtype, n, pos).copy()
            pos += arr.nbytes
            return arr
        trace = take(dyn, "<i8").astype(np.int64)
        pcs = take(nsnap, "<i8").astype(np.int64)
        dg = take(nsnap, "<i8").astype(np.int64)
        lens = take(nsnap, "<i8").astype(np.int64)
        capture = bytes(data[pos:pos + ncap]); pos += ncap
        output = bytes(data[pos:pos + nout]); pos += nout
        logits = [take(n, "<f4").astype(np.float32) for n in head["logits_len"]]
        return cls(head["program_digest"], int(dyn), head["histogram"], trace, pcs, dg, capture,
                   output, [OperatorTag(k, l) for k, l in head["tags"]], lens, logits)

    def save(self, path, sidecar=None):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        sidecar = sidecar or str(path) + ".json"
        with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=False)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def golden_run(program, max_dyn=1 << 34) -> GoldenTrace:
    """Run fault-free with full tracing; raises GoldenTrapped if the program traps."""
    state = MachineState.initial(program)
    hist = np.zeros(32, np.int64)
    # probe pass for sizes
    probe = state.copy()
    st = make_st(probe)
    call_kernel(program, probe, st, make_prm(program, max_dyn), np.zeros(32, np.int64),
                snaps=np.zeros((1, 2), np.int64), capture=np.zeros(1, np.uint8))
    if st[K.ST_STATUS] != K.EXITED:
        absorb(probe, st)
        raise GoldenTrapped(f"fault-free run did not exit cleanly: {probe.trap}")
    dyn = int(st[K.ST_DYN])
    nsnap = int(st[K.ST_NSNAP])
    ncap = int(st[K.ST_CAPPTR])
    snaps = np.zeros((nsnap, 2), np.int64)
    capture = np.zeros(ncap, np.uint8)
    trace = np.zeros(dyn, np.int64)
    st = make_st(state)
    call_kernel(program, state, st, make_prm(program, max_dyn, flags=K.F_TRACE), hist,
                snaps=snaps, capture=capture, trace=trace)
    absorb(state, st)
    pcs = snaps[:, 0].copy()
    lengths = np.array([int(program.side[pc, K.SNAPLEN]) for pc in pcs], np.int64)
    out = program.regions[program.output]
    gt = GoldenTrace(
        program_digest=program.digest, dyn_count=dyn, histogram=histogram_dict(hist),
        trace=trace, snap_pcs=pcs, snap_digests=snaps[:, 1].copy(), capture=capture.tobytes(),
        output=state.gmem[out.offset:out.end].tobytes(),
        snap_tags=[program.tag_of(int(pc)) for pc in pcs], snap_lengths=lengths)
    gt.logits_final = extract_logits(program, gt.snap_pcs, gt.capture, lengths)
    return gt


def logit_slots(program, snap_pcs, lengths):
    """(capture offset, element count) of every snapshot that starts with the logits region."""
    reg = program.regions[program.logits]
    slots = []
    pos = 0
    for pc, n in zip(snap_pcs, lengths):
        if int(program.side[int(pc), K.OFF]) == reg.offset and int(program.side[int(pc), K.SNAPSPACE]) == 0:
            slots.append((pos, reg.size // 4))
        pos += int(n)
    return slots


def extract_logits(program, snap_pcs, capture, lengths):
    buf = np.frombuffer(capture, np.float32)
    return [buf[o // 4:o // 4 + n].copy() for o, n in logit_slots(program, snap_pcs, lengths)]


def compute_checkpoints(program, golden, interval=None):
    """Re-run fault-free, saving full machine state every ``interval`` dynamic instructions."""
    dyn = golden.dyn_count
    if interval is None:
        interval = max(32, dyn // 256)
    ck_dyn = np.arange(0, dyn, interval, dtype=np.int64)
    k = len(ck_dyn)
    state = MachineState.initial(program)
    ck = Checkpoints(ck_dyn, np.zeros((k, 3), np.int64), np.zeros((k, 256), np.uint32),
                     np.zeros((k, 8), np.uint8), np.zeros((k, len(state.gmem)), np.uint8),
                     np.zeros((k, len(state.smem)), np.uint8))
    st = make_st(state)
    nsnap = len(golden.snap_pcs)
    call_kernel(program, state, st, make_prm(program, dyn + 1, flags=K.F_SAVE_CK),
                np.zeros(32, np.int64), snaps=np.zeros((nsnap, 2), np.int64),
                capture=np.zeros(len(golden.capture), np.uint8),
                ck_dyn=ck_dyn, ck_meta=ck.meta, ck_regs=ck.regs, ck_preds=ck.preds,
                ck_gmem=ck.gmem, ck_smem=ck.smem)
    if st[K.ST_STATUS] != K.EXITED or st[K.ST_DYN] != dyn:
        raise GoldenTrapped("checkpoint replay diverged from the golden run")
    return ck
