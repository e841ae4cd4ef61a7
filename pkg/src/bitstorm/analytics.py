"""Vulnerability statistics folded from trial records.

Every function here is a pure fold over records (or over exact per-site
tables), so recomputing from a JSON-lines log reproduces identical numbers.
"""
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .classify import OutcomeKind
from .isa.encoding import OPERATOR_KINDS
from .isa.opcodes import Opcode

LOW_CONFIDENCE_TRIALS = 30
WEIGHT_TOLERANCE = 1e-9


class EmptyRecords(ValueError):
    pass


class MixedFaultCount(ValueError):
    pass


class UncoveredGroup(ValueError):
    pass


class WeightsNotNormalized(ValueError):
    pass


def _sample_std(values):
    if len(values) < 2:
        return None
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))


@dataclass
class Counts:
    trials: int = 0
    sdc: int = 0
    due: int = 0

    def add(self, kind):
        self.trials += 1
        if kind is OutcomeKind.SDC:
            self.sdc += 1
        elif kind is OutcomeKind.DUE:
            self.due += 1

    def merge(self, other):
        """Combined counts of two disjoint partial folds."""
        return Counts(self.trials + other.trials, self.sdc + other.sdc, self.due + other.due)

    @property
    def masked(self):
        return self.trials - self.sdc - self.due

    def rate(self, n):
        return n / self.trials if self.trials else 0.0

    @property
    def sdc_rate(self):
        return self.rate(self.sdc)

    @property
    def due_rate(self):
        return self.rate(self.due)

    @property
    def masked_rate(self):
        return self.rate(self.masked)

    @property
    def abnormal_rate(self):
        return self.rate(self.sdc + self.due)


# ---------------------------------------------------------------------------
# MVF
# ---------------------------------------------------------------------------

@dataclass
class MvfStats:
    trials: int
    masked: int
    sdc: int
    due: int
    mvf: float
    sdc_rate: float
    due_rate: float
    masked_rate: float
    std_dev: Optional[float] = None
    repeats: int = 1


def mvf(records) -> MvfStats:
    records = list(records)
    if not records:
        raise EmptyRecords("MVF of an empty record set is undefined")
    total = Counts()
    per_rep = defaultdict(Counts)
    for r in records:
        total.add(r.outcome.kind)
        per_rep[r.repeat].add(r.outcome.kind)
    std = _sample_std([c.abnormal_rate for _, c in sorted(per_rep.items())])
    return MvfStats(total.trials, total.masked, total.sdc, total.due,
                    (total.sdc + total.due) / total.trials, total.sdc_rate, total.due_rate,
                    total.masked_rate, std, len(per_rep))


# ---------------------------------------------------------------------------
# IVF and the group-wise approximation
# ---------------------------------------------------------------------------

@dataclass
class IvfEntry:
    opcode: str
    group: str
    trials: int
    sdc_rate: float
    due_rate: float
    p_i: float
    std_dev: Optional[float] = None

    @property
    def ivf(self):
        return self.sdc_rate + self.due_rate

    @property
    def low_confidence(self):
        return self.trials < LOW_CONFIDENCE_TRIALS


def _opcode_key(name):
    return int(Opcode[name])


def ivf_from_counts(counts, proportions, per_repeat=None):
    """IvfEntry rows from ``{opcode: Counts}``, ordered by opcode ordinal."""
    rows = []
    for op in sorted(counts, key=_opcode_key):
        c = counts[op]
        if c.trials == 0:
            continue
        std = None
        if per_repeat is not None:
            std = _sample_std([reps[op].abnormal_rate for _, reps in sorted(per_repeat.items())
                               if reps[op].trials > 0])
        rows.append(IvfEntry(op, Opcode[op].group.value, c.trials, c.sdc_rate, c.due_rate,
                             float(proportions.get(op, 0.0)), std))
    return rows


def ivf_table(records, weights):
    """Per-opcode SDC/DUE rates of single-fault records.

    ``weights`` supplies p_i: a ``{opcode: share}`` mapping or a GoldenTrace
    (whose full dynamic histogram is then used).
    """
    proportions = getattr(weights, "proportions", weights)
    counts = defaultdict(Counts)
    per_rep = defaultdict(lambda: defaultdict(Counts))
    for r in records:
        if r.n_faults != 1:
            raise MixedFaultCount(f"trial {r.trial} injected {r.n_faults} faults")
        op = r.faults[0].opcode
        counts[op].add(r.outcome.kind)
        per_rep[r.repeat][op].add(r.outcome.kind)
    return ivf_from_counts(counts, proportions, per_rep)


@dataclass
class GroupStats:
    group: str
    mu: float
    v_min: float
    v_max: float


@dataclass
class MvfEstimate:
    v_avg: float
    v_min: float
    v_max: float
    measured: list
    unmeasured: list
    groups: dict = field(default_factory=dict)     # group -> GroupStats
    exact: Optional[float] = None

    @property
    def exact_in_bounds(self):
        if self.exact is None:
            return None
        return self.v_min <= self.exact <= self.v_max

    @property
    def relative_deviation(self):
        if self.exact is None or self.exact == 0:
            return None
        return abs(self.v_avg - self.exact) / self.exact

    @property
    def bound_violation(self):
        """Distance of the exact value outside [v_min, v_max] (0 when inside)."""
        if self.exact is None:
            return None
        return max(0.0, self.v_min - self.exact, self.exact - self.v_max)


def default_groups(opcodes):
    return {op: Opcode[op].group.value for op in opcodes}


def approx_mvf(measured, universe, groups=None, exact=None) -> MvfEstimate:
    """Group-wise imputation of unmeasured IVFs and proportion-weighted aggregation.

    ``measured``: IvfEntry rows (or ``{opcode: ivf}``); ``universe``:
    ``{opcode: p_i}`` covering every opcode with nonzero dynamic share.
    """
    if isinstance(measured, dict):
        v = {op: float(x) for op, x in measured.items()}
    else:
        v = {e.opcode: e.ivf for e in measured}
    universe = {op: float(p) for op, p in universe.items()}
    groups = groups or default_groups(universe)
    total = sum(universe.values())
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise WeightsNotNormalized(f"proportions sum to {total!r}")
    extra = set(v) - set(universe)
    if extra:
        raise ValueError(f"measured opcodes outside the universe: {sorted(extra)}")

    by_group = defaultdict(list)
    for op, val in v.items():
        by_group[groups[op]].append(val)
    stats = {g: GroupStats(g, sum(vals) / len(vals), min(vals), max(vals))
             for g, vals in sorted(by_group.items())}

    order = sorted(universe, key=lambda o: (_opcode_key(o) if o in Opcode.__members__ else 99, o))
    unmeasured = [op for op in order if op not in v]
    for op in unmeasured:
        if groups[op] not in stats:
            raise UncoveredGroup(f"{op} is unmeasured and group {groups[op]} has no measured member")
    base = sum(universe[op] * v[op] for op in order if op in v)
    v_avg = base + sum(universe[op] * stats[groups[op]].mu for op in unmeasured)
    v_min = base + sum(universe[op] * stats[groups[op]].v_min for op in unmeasured)
    v_max = base + sum(universe[op] * stats[groups[op]].v_max for op in unmeasured)
    return MvfEstimate(v_avg, v_min, v_max, [op for op in order if op in v], unmeasured,
                       stats, exact)


# ---------------------------------------------------------------------------
# operator / layer vulnerability
# ---------------------------------------------------------------------------

@dataclass
class OperatorVuln:
    key: str
    layer: Optional[int]
    n_error: int
    n_inconsistent: int

    @property
    def v(self):
        return self.n_error / self.n_inconsistent if self.n_inconsistent else None


def _fold_inconsistent(records):
    """``{(kind, layer): [n_error, n_inconsistent]}`` keyed on the first differing snapshot."""
    table = defaultdict(lambda: [0, 0])
    for r in records:
        fi = r.outcome.first_inconsistent
        if fi is None:
            continue
        cell = table[(fi.kind, fi.layer)]
        cell[0] += 1 if r.outcome.abnormal else 0
        cell[1] += 1
    return table


def operator_rows(table):
    """Operator rows from a ``{(kind, layer): [n_error, n_inconsistent]}`` table."""
    by_kind = defaultdict(lambda: [0, 0])
    for (kind, _), (e, n) in table.items():
        by_kind[kind][0] += e
        by_kind[kind][1] += n
    return [OperatorVuln(k, None, *by_kind.get(k, (0, 0))) for k in OPERATOR_KINDS]


def layer_rows(table, n_layers):
    """Layers 0..n_layers-1, then EMBEDDING, LM_HEAD and any other layerless kinds."""
    per = defaultdict(lambda: [0, 0])
    for (kind, layer), (e, n) in table.items():
        key = ("L", layer) if layer is not None else ("K", kind)
        per[key][0] += e
        per[key][1] += n
    rows = [OperatorVuln(f"L{l}", l, *per.get(("L", l), (0, 0))) for l in range(n_layers)]
    layerless = ["EMBEDDING", "LM_HEAD"]
    layerless += sorted(k for tag, k in per if tag == "K" and k not in layerless)
    rows += [OperatorVuln(k, None, *per.get(("K", k), (0, 0))) for k in layerless]
    return rows


def operator_vulnerability(records):
    """n_error / n_inconsistent per operator kind."""
    return operator_rows(_fold_inconsistent(records))


def layer_vulnerability(records, n_layers):
    return layer_rows(_fold_inconsistent(records), n_layers)


# ---------------------------------------------------------------------------
# bit sweep and multi-fault curves
# ---------------------------------------------------------------------------

@dataclass
class RateRow:
    key: int              # bit position or fault count
    trials: int
    masked_rate: float
    sdc_rate: float
    due_rate: float


def _fixed_bit(policy):
    from .faults.sites import BitPolicy
    p = BitPolicy.parse(policy)
    if p.is_random:
        raise ValueError("bit sweep needs records from FIXED(b) campaigns")
    return p.fixed


def _rows(counts):
    return [RateRow(k, c.trials, c.masked_rate, c.sdc_rate, c.due_rate)
            for k, c in sorted(counts.items())]


def bit_sweep(records):
    counts = defaultdict(Counts)
    for r in records:
        counts[_fixed_bit(r.bit_policy)].add(r.outcome.kind)
    return _rows(counts)


def multi_fault_curve(records):
    counts = defaultdict(Counts)
    for r in records:
        counts[r.n_faults].add(r.outcome.kind)
    return _rows(counts)
