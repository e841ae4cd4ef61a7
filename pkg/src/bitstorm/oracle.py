"""Exhaustive ground truth: every single-fault site, or every site pair."""
import json
import math
import multiprocessing
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analytics import Counts, ivf_from_counts, layer_rows, operator_rows
from .faults import engine as E
from .faults.engine import TrialContext
from .faults.sites import FaultSpec, enumerate_sites
from .isa import kernel as K
from .isa.encoding import TAG
from .isa.opcodes import Opcode

DEFAULT_CAP = 2_000_000
CHUNK = 8192
EXACT_MAGIC = b"BFEX"
EXACT_VERSION = 1

KIND_MASKED, KIND_SDC, KIND_DUE = 0, 1, 2
KIND_NAMES = ("MASKED", "SDC", "DUE")
CAUSE_NAMES = {0: None, K.E1_ADDR_OOB: "E1", K.E3_REG_OOB: "E3", K.E4_MISALIGNED: "E4",
               K.E5_ILLEGAL_OPERAND: "E5", K.HANG: "HANG"}


class SpaceTooLarge(ValueError):
    pass


class SpecMismatch(ValueError):
    pass


def _outcome_columns(iout):
    """(kind, cause, address-taint) per trial from the batch result table."""
    trapped = iout[:, E.R_STATUS] == K.TRAPPED
    kind = np.where(trapped, KIND_DUE, np.where(iout[:, E.R_TOKENS_EQ] == 0, KIND_SDC, KIND_MASKED))
    cause = np.where(trapped, iout[:, E.R_CAUSE], 0)
    return kind.astype(np.uint8), cause.astype(np.uint8), iout[:, E.R_TADDR].astype(np.uint8)


@dataclass
class ExactResult:
    """Per-site outcome table of an exhaustive single-fault enumeration."""
    program_digest: str
    spec: dict
    dyn: np.ndarray            # int64 per site
    opcode: np.ndarray         # uint8 ordinal per site
    bit: np.ndarray            # uint8 per site
    kind: np.ndarray           # uint8: 0 masked, 1 sdc, 2 due
    cause: np.ndarray          # uint8 kernel trap code (0 when not DUE)
    address: np.ndarray        # uint8: address-taint flag
    first_tag: np.ndarray      # int16 index into ``tags`` or -1
    tags: list = field(default_factory=list)   # [(kind, layer)]

    @property
    def site_count(self):
        return int(len(self.kind))

    def counts(self):
        return np.bincount(self.kind, minlength=3)

    @property
    def mvf(self):
        c = self.counts()
        return float(c[KIND_SDC] + c[KIND_DUE]) / self.site_count

    @property
    def sdc_rate(self):
        return float(self.counts()[KIND_SDC]) / self.site_count

    @property
    def due_rate(self):
        return float(self.counts()[KIND_DUE]) / self.site_count

    def exposure_weights(self):
        """Per-opcode share of sites; equals the share of fault-bearing dynamic instructions."""
        vals, counts = np.unique(self.opcode, return_counts=True)
        return {Opcode(int(v)).name: int(c) / self.site_count for v, c in zip(vals, counts)}

    def opcode_counts(self):
        out = {}
        for o in np.unique(self.opcode):
            sel = self.kind[self.opcode == o]
            c = Counts(int(len(sel)), int(np.sum(sel == KIND_SDC)), int(np.sum(sel == KIND_DUE)))
            out[Opcode(int(o)).name] = c
        return out

    def ivf_table(self, proportions):
        return ivf_from_counts(self.opcode_counts(), proportions)

    def ivf(self):
        return {op: c.abnormal_rate for op, c in self.opcode_counts().items()}

    def bit_counts(self):
        out = {}
        for b in range(32):
            sel = self.kind[self.bit == b]
            if len(sel):
                out[b] = Counts(int(len(sel)), int(np.sum(sel == KIND_SDC)), int(np.sum(sel == KIND_DUE)))
        return out

    def cause_counts(self):
        out = defaultdict(int)
        for code, n in zip(*np.unique(self.cause[self.kind == KIND_DUE], return_counts=True)):
            out[CAUSE_NAMES[int(code)]] = int(n)
        return dict(out)

    def inconsistency_table(self):
        table = {}
        for i, tag in enumerate(self.tags):
            sel = self.first_tag == i
            table[tuple(tag)] = [int(np.sum(self.kind[sel] != KIND_MASKED)), int(np.sum(sel))]
        return table

    def operator_vulnerability(self):
        return operator_rows(self.inconsistency_table())

    def layer_vulnerability(self, n_layers):
        return layer_rows(self.inconsistency_table(), n_layers)

    # ---- persistence ------------------------------------------------------

    def to_bytes(self):
        head = json.dumps({"program_digest": self.program_digest, "spec": self.spec,
                           "tags": self.tags}, sort_keys=True).encode()
        n = self.site_count
        return b"".join([
            struct.pack("<4sHHQQ", EXACT_MAGIC, EXACT_VERSION, 0, len(head), n), head,
            self.dyn.astype("<i8").tobytes(), self.opcode.astype("u1").tobytes(),
            self.bit.astype("u1").tobytes(), self.kind.astype("u1").tobytes(),
            self.cause.astype("u1").tobytes(), self.address.astype("u1").tobytes(),
            self.first_tag.astype("<i2").tobytes()])

    @classmethod
    def from_bytes(cls, data):
        fmt = "<4sHHQQ"
        magic, ver, _, nhead, n = struct.unpack_from(fmt, data)
        if magic != EXACT_MAGIC or ver != EXACT_VERSION:
            raise ValueError("not an exact-result container of a supported version")
        pos = struct.calcsize(fmt)
        head = json.loads(data[pos:pos + nhead])
        pos += nhead

        def take(dtype):
            nonlocal pos
            a = np.frombuffer(data, dtype, n, pos).copy()
            pos += a.nbytes
            return a
        dyn = take("<i8").astype(np.int64)
        cols = [take("u1") for _ in range(5)]
        first = take("<i2").astype(np.int16)
        return cls(head["program_digest"], head["spec"], dyn, *cols, first,
                   [tuple(t) for t in head["tags"]])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _tag_index(program, iout):
    """Map first-differing-snapshot pcs to a compact tag table."""
    tags, index = [], {}
    out = np.full(len(iout), -1, np.int16)
    for i in np.nonzero(iout[:, E.R_FIRST_DIFF] >= 0)[0]:
        t = program.tags[int(program.side[int(iout[i, E.R_FIRST_DIFF_PC]), TAG])]
        key = (t.kind, t.layer)
        if key not in index:
            index[key] = len(tags)
            tags.append(key)
        out[i] = index[key]
    return out, tags


_WORKER = {}


def _chunk_entry(bounds):
    lo, hi = bounds
    ctx, space = _WORKER["ctx"], _WORKER["space"]
    rows = space.rows(np.arange(lo, hi))
    foff = np.arange(hi - lo + 1, dtype=np.int64)
    iout, _ = ctx.run_table(rows, foff)
    return iout


def _run_chunks(ctx, space, n, workers, progress):
    bounds = [(lo, min(n, lo + CHUNK)) for lo in range(0, n, CHUNK)]
    _WORKER.update(ctx=ctx, space=space)
    try:
        if workers > 1 and len(bounds) > 1:
            with multiprocessing.get_context("fork").Pool(workers) as pool:
                parts = pool.map(_chunk_entry, bounds)
        else:
            parts = []
            for b in bounds:
                parts.append(_chunk_entry(b))
                if progress:
                    progress(b[1], n)
    finally:
        _WORKER.clear()
    return np.concatenate(parts) if parts else np.zeros((0, E.R_COLS), np.int64)


def exact_single(program, golden, spec: FaultSpec = None, cap=DEFAULT_CAP, workers=1,
                 ctx: Optional[TrialContext] = None, progress=None) -> ExactResult:
    """Run every admissible single-fault site of ``spec`` once."""
    spec = spec or FaultSpec()
    space = enumerate_sites(program, golden, spec)
    n = len(space)
    if n > cap:
        raise SpaceTooLarge(f"{n} sites exceed the cap of {cap}")
    ctx = ctx or TrialContext(program, golden)
    iout = _run_chunks(ctx, space, n, workers, progress)
    idx = np.arange(n)
    rows = space.rows(idx)
    kind, cause, addr = _outcome_columns(iout)
    first, tags = _tag_index(program, iout)
    return ExactResult(program.digest, spec.with_n(1).to_dict(), rows[:, 0].copy(),
                       space.opcode_of(idx).astype(np.uint8), rows[:, 2].astype(np.uint8),
                       kind, cause, addr, first, tags)


@dataclass
class PairwiseResult:
    site_count: int
    pairs: int
    masked: int
    sdc: int
    due: int

    @property
    def masked_rate(self):
        return self.masked / self.pairs

    @property
    def sdc_rate(self):
        return self.sdc / self.pairs

    @property
    def due_rate(self):
        return self.due / self.pairs

    @property
    def abnormal_rate(self):
        return (self.sdc + self.due) / self.pairs


def exact_pairwise(program, golden, spec: FaultSpec = None, cap=DEFAULT_CAP,
                   ctx: Optional[TrialContext] = None) -> PairwiseResult:
    """Every unordered pair of distinct sites, both flips applied in one run."""
    spec = (spec or FaultSpec()).with_n(2)
    space = enumerate_sites(program, golden, spec)
    n = len(space)
    pairs = n * (n - 1) // 2
    if pairs > cap:
        raise SpaceTooLarge(f"{pairs} site pairs exceed the cap of {cap}")
    ctx = ctx or TrialContext(program, golden)
    rows = space.rows(np.arange(n))
    tot = np.zeros(3, np.int64)
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        m = len(j)
        table = np.empty((2 * m, 4), np.int64)
        table[0::2] = rows[i]
        table[1::2] = rows[j]
        iout, _ = ctx.run_table(table, np.arange(0, 2 * m + 1, 2, dtype=np.int64))
        kind, _, _ = _outcome_columns(iout)
        tot += np.bincount(kind, minlength=3)
    return PairwiseResult(n, pairs, int(tot[0]), int(tot[1]), int(tot[2]))


# ---------------------------------------------------------------------------
# estimate-vs-exact comparison
# ---------------------------------------------------------------------------

@dataclass
class Deviation:
    statistic: str
    estimate: float
    exact: float
    trials: int
    abs_dev: float
    rel_dev: Optional[float]
    se: float
    passed: bool


@dataclass
class CompareReport:
    sigma: float
    rows: list
    bounds: Optional[dict] = None     # group-wise approximation check, when supplied

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


def _deviation(name, est, exact, trials, sigma):
    se = math.sqrt(exact * (1 - exact) / trials) if trials else 0.0
    dev = abs(est - exact)
    rel = dev / exact if exact else None
    ok = dev <= sigma * se if se > 0 else dev <= 1e-12
    return Deviation(name, est, exact, trials, dev, rel, se, ok)


def compare(records, exact: ExactResult, sigma=3.0, program_digest=None, spec=None,
            approx=None) -> CompareReport:
    """Sampled single-fault statistics against exhaustive values.

    Each statistic passes when it lies within ``sigma`` binomial standard
    errors (computed from the exact rate) of the exact value.  ``approx``, an
    MvfEstimate, adds the group-wise bound check against the exact MVF.
    """
    records = list(records)
    if program_digest is not None and program_digest != exact.program_digest:
        raise SpecMismatch("estimate and exact result come from different programs")
    if spec is not None:
        mine = spec.with_n(1).to_dict() if hasattr(spec, "with_n") else dict(spec, n=1)
        if mine != exact.spec:
            raise SpecMismatch(f"estimate spec {mine} differs from exact spec {exact.spec}")
    for r in records:
        if r.n_faults != 1 or r.mode != exact.spec["mode"] or r.bit_policy != exact.spec["bit"]:
            raise SpecMismatch(f"trial {r.trial} was not drawn from the exact result's site space")
    rows = []
    if records:
        n = len(records)
        abn = sum(1 for r in records if r.outcome.abnormal)
        rows.append(_deviation("mvf", abn / n, exact.mvf, n, sigma))
        per_op = defaultdict(Counts)
        for r in records:
            per_op[r.faults[0].opcode].add(r.outcome.kind)
        ex = exact.opcode_counts()
        for op in sorted(per_op, key=lambda o: int(Opcode[o])):
            c = per_op[op]
            if op not in ex:
                raise SpecMismatch(f"opcode {op} sampled but absent from the exact site space")
            rows.append(_deviation(f"ivf.{op}", c.abnormal_rate, ex[op].abnormal_rate, c.trials, sigma))
    bounds = None
    if approx is not None:
        bounds = {"v_avg": approx.v_avg, "v_min": approx.v_min, "v_max": approx.v_max,
                  "exact": exact.mvf,
                  "relative_deviation": abs(approx.v_avg - exact.mvf) / exact.mvf if exact.mvf else None,
                  "exact_in_bounds": approx.v_min <= exact.mvf <= approx.v_max,
                  "bound_violation": max(0.0, approx.v_min - exact.mvf, exact.mvf - approx.v_max)}
    return CompareReport(sigma, rows, bounds)
