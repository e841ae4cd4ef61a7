"""Fault specifications, the admissible-site space and site sampling."""
import enum
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..isa.encoding import OPERATOR_KINDS, OperatorTag, TAG
from ..isa.opcodes import NO_DEST, PRED_DEST, Opcode
from .rng import SplitMix64


class FaultSpecError(ValueError):
    """Raised for an inconsistent fault specification."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class EmptySiteSpace(ValueError):
    pass


class NotEnoughSites(ValueError):
    pass


class FaultMode(str, enum.Enum):
    VALUE = "VALUE"
    ENCODING = "ENCODING"


class Target(str, enum.Enum):
    DEST_VALUE = "DEST_VALUE"
    ENCODING_WORD = "ENCODING_WORD"
    DEST_PREDICATE = "DEST_PREDICATE"


@dataclass(frozen=True)
class BitPolicy:
    fixed: Optional[int] = None          # None means uniformly random over 0..31

    def __post_init__(self):
        if self.fixed is not None and not 0 <= self.fixed <= 31:
            raise FaultSpecError("bit", f"FIXED({self.fixed}) outside 0..31")

    @property
    def is_random(self):
        return self.fixed is None

    def __str__(self):
        return "RANDOM" if self.fixed is None else f"FIXED({self.fixed})"

    @classmethod
    def parse(cls, text):
        t = str(text).strip().upper()
        if t == "RANDOM":
            return cls()
        m = re.fullmatch(r"FIXED\(\s*(-?\d+)\s*\)", t)
        if m is None:
            raise FaultSpecError("bit", f"expected RANDOM or FIXED(n), got {text!r}")
        return cls(int(m.group(1)))


RANDOM = BitPolicy()


def FIXED(b):
    return BitPolicy(int(b))


@dataclass(frozen=True)
class FaultSpec:
    mode: FaultMode = FaultMode.VALUE
    n: int = 1
    bit_policy: BitPolicy = RANDOM
    opcodes: frozenset = frozenset()       # empty = no filter
    operators: frozenset = frozenset()
    layers: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "mode", FaultMode(self.mode))
        object.__setattr__(self, "opcodes", frozenset(self.opcodes))
        object.__setattr__(self, "operators", frozenset(self.operators))
        object.__setattr__(self, "layers", frozenset(int(x) for x in self.layers))
        if isinstance(self.bit_policy, str):
            object.__setattr__(self, "bit_policy", BitPolicy.parse(self.bit_policy))
        if self.n < 1:
            raise FaultSpecError("N", f"faults per trial must be >= 1, got {self.n}")
        for name in self.opcodes:
            if name not in Opcode.__members__:
                raise FaultSpecError("opcodes", f"unknown opcode {name!r}")
        for kind in self.operators:
            if kind not in OPERATOR_KINDS:
                raise FaultSpecError("operators", f"unknown operator kind {kind!r}")

    def with_n(self, n):
        return FaultSpec(self.mode, n, self.bit_policy, self.opcodes, self.operators, self.layers)

    def with_bit(self, policy):
        return FaultSpec(self.mode, self.n, policy, self.opcodes, self.operators, self.layers)

    def to_dict(self):
        return {"mode": self.mode.value, "n": self.n, "bit": str(self.bit_policy),
                "opcodes": sorted(self.opcodes), "operators": sorted(self.operators),
                "layers": sorted(self.layers)}


@dataclass(frozen=True)
class FaultSite:
    dyn_index: int
    target: Target
    bit: int
    opcode: str
    tag: OperatorTag = field(default_factory=OperatorTag)

    def to_dict(self, reached=None):
        d = {"dyn": self.dyn_index, "opcode": self.opcode, "target": self.target.value,
             "bit": self.bit, "operator": self.tag.kind, "layer": self.tag.layer}
        if reached is not None:
            d["reached"] = bool(reached)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["dyn"]), Target(d["target"]), int(d["bit"]), d["opcode"],
                   OperatorTag(d["operator"], d["layer"]))


class SiteSpace:
    """All admissible sites of one spec over one golden trace.

    Eligible dynamic instructions are stored once; under RANDOM bit policy
    every eligible instruction contributes 32 sites (site ``i`` is bit
    ``i % 32`` of eligible instruction ``i // 32``), under FIXED(b) one.
    Predicate destinations count like any other destination; their recorded
    bit is 0 because a predicate holds a single bit.
    """

    def __init__(self, program, spec, dyn, pcs):
        self.program = program
        self.spec = spec
        self.dyn = dyn
        self.pcs = pcs
        self.per_instr = 32 if spec.bit_policy.is_random else 1
        opc = (program.words[pcs] >> 24).astype(np.int64)
        self.is_pred = np.isin(opc, [int(o) for o in PRED_DEST])

    def __len__(self):
        return int(len(self.dyn) * self.per_instr)

    @property
    def cardinality(self):
        return len(self)

    def _bit(self, i):
        return int(i % 32) if self.per_instr == 32 else self.spec.bit_policy.fixed

    def site(self, i):
        if not 0 <= i < len(self):
            raise IndexError(i)
        j = i // self.per_instr
        pc = int(self.pcs[j])
        op = Opcode(int(self.program.words[pc]) >> 24)
        if self.spec.mode is FaultMode.ENCODING:
            target, bit = Target.ENCODING_WORD, self._bit(i)
        elif self.is_pred[j]:
            target, bit = Target.DEST_PREDICATE, 0
        else:
            target, bit = Target.DEST_VALUE, self._bit(i)
        return FaultSite(int(self.dyn[j]), target, bit, op.name, self.program.tag_of(pc))

    def rows(self, indices):
        """Kernel fault rows ``(dyn, kind, bit, 0)`` for site indices (vectorised)."""
        idx = np.asarray(indices, np.int64)
        j = idx // self.per_instr
        bits = idx % 32 if self.per_instr == 32 else np.full(len(idx), self.spec.bit_policy.fixed)
        kind = 1 if self.spec.mode is FaultMode.ENCODING else 0
        out = np.zeros((len(idx), 4), np.int64)
        out[:, 0] = self.dyn[j]
        out[:, 1] = kind
        out[:, 2] = bits
        return out

    def exposure_weights(self):
        """Share of fault-bearing dynamic instructions per opcode name (sums to 1)."""
        opc = (self.program.words[self.pcs] >> 24).astype(np.int64)
        vals, counts = np.unique(opc, return_counts=True)
        total = int(counts.sum())
        return {Opcode(int(v)).name: int(c) / total for v, c in zip(vals, counts)}

    def opcode_of(self, indices):
        j = np.asarray(indices, np.int64) // self.per_instr
        return (self.program.words[self.pcs[j]] >> 24).astype(np.int64)


def enumerate_sites(program, golden, spec: FaultSpec) -> SiteSpace:
    trace = golden.trace
    pcs = trace >> 1
    executed = (trace & 1) != 0
    n = len(program)
    op_of_pc = (np.asarray(program.words) >> 24).astype(np.int64)
    ok_pc = np.ones(n, bool)
    if spec.mode is FaultMode.VALUE:
        ok_pc &= ~np.isin(op_of_pc, [int(o) for o in NO_DEST])
    if spec.opcodes:
        ok_pc &= np.isin(op_of_pc, [int(Opcode[o]) for o in spec.opcodes])
    if spec.operators or spec.layers:
        tags = program.side[:, TAG]
        for pc in range(n):
            if not ok_pc[pc]:
                continue
            t = program.tags[int(tags[pc])]
            if spec.operators and t.kind not in spec.operators:
                ok_pc[pc] = False
            elif spec.layers and t.layer not in spec.layers:
                ok_pc[pc] = False
    mask = ok_pc[pcs]
    if spec.mode is FaultMode.VALUE:
        mask &= executed
    dyn = np.nonzero(mask)[0].astype(np.int64)
    if len(dyn) == 0:
        raise EmptySiteSpace(f"no admissible fault sites for {spec.to_dict()}")
    return SiteSpace(program, spec, dyn, pcs[dyn])


def sample_indices(space_size, n, seed):
    if n > space_size:
        raise NotEnoughSites(f"{n} distinct sites requested from a space of {space_size}")
    return SplitMix64(seed).floyd(space_size, n)


def sample_faults(space: SiteSpace, n, rng_seed):
    """``n`` distinct sites, uniform without replacement, ordered by site index."""
    return [space.site(i) for i in sample_indices(len(space), n, rng_seed)]
