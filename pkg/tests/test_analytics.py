from functools import reduce

import pytest
from hypothesis import given, strategies as st

from bitstorm import analytics as A
from bitstorm.classify import Outcome, OutcomeKind, SdcCause
from bitstorm.faults import TrialRecord
from bitstorm.faults.sites import FaultSite, Target
from bitstorm.isa import OperatorTag
from bitstorm.isa.encoding import OPERATOR_KINDS


def outcome(kind, tag=None):
    if kind == "SDC":
        return Outcome(OutcomeKind.SDC, sdc_cause=SdcCause.NUMERIC, first_inconsistent=tag,
                       tokens_equal=False)
    if kind == "DUE":
        return Outcome(OutcomeKind.DUE, due_cause="E1", first_inconsistent=tag)
    return Outcome(OutcomeKind.MASKED, first_inconsistent=tag)


def record(kind, opcode="FADD", n=1, repeat=0, tag=None, bit="RANDOM", trial=0):
    sites = [FaultSite(k, Target.DEST_VALUE, 0, opcode) for k in range(n)]
    return TrialRecord(trial, 0, "VALUE", bit, sites, (True,) * n, outcome(kind, tag), "0", 1,
                       repeat)


def batch(sdc, due, masked, **kw):
    return ([record("SDC", **kw) for _ in range(sdc)] + [record("DUE", **kw) for _ in range(due)]
            + [record("MASKED", **kw) for _ in range(masked)])


# ---- MVF -------------------------------------------------------------------

def test_mvf_definition():
    m = A.mvf(batch(10, 20, 70))
    assert m.trials == 100 and m.mvf == pytest.approx(0.30)
    assert (m.sdc_rate, m.due_rate, m.masked_rate) == (0.10, 0.20, 0.70)
    assert m.std_dev is None
    assert A.mvf(batch(0, 0, 5)).mvf == 0


def test_mvf_dispersion_over_repeats():
    recs = batch(1, 0, 3, repeat=0) + batch(3, 0, 1, repeat=1)
    m = A.mvf(recs)
    assert m.repeats == 2
    assert m.std_dev == pytest.approx(((0.25 - 0.5) ** 2 * 2) ** 0.5)   # ddof=1


def test_mvf_of_nothing():
    with pytest.raises(A.EmptyRecords):
        A.mvf([])


# ---- IVF -------------------------------------------------------------------

def test_ivf_table_rows():
    recs = batch(2, 1, 1, opcode="FADD") + batch(0, 0, 4, opcode="LDG")
    rows = {e.opcode: e for e in A.ivf_table(recs, {"FADD": 0.5, "LDG": 0.25, "MOV": 0.25})}
    assert set(rows) == {"FADD", "LDG"}
    assert rows["FADD"].ivf == pytest.approx(0.75)
    assert rows["FADD"].group == "FP32" and rows["LDG"].group == "MEM"
    assert rows["LDG"].p_i == 0.25
    assert rows["LDG"].low_confidence


def test_ivf_rejects_multi_fault_records():
    with pytest.raises(A.MixedFaultCount):
        A.ivf_table([record("SDC", n=2)], {"FADD": 1.0})


# ---- group-wise approximation --------------------------------------------------

def test_approx_three_opcode_example():
    est = A.approx_mvf({"FFMA": 0.2, "FADD": 0.6}, {"FFMA": 0.5, "FADD": 0.25, "FMUL": 0.25})
    assert est.v_avg == pytest.approx(0.35, abs=1e-15)
    assert est.v_min == pytest.approx(0.30, abs=1e-15)
    assert est.v_max == pytest.approx(0.40, abs=1e-15)
    assert est.unmeasured == ["FMUL"]


def test_approx_with_everything_measured():
    v = {"FFMA": 0.2, "LDG": 0.9, "MOV": 0.5}
    p = {"FFMA": 0.5, "LDG": 0.3, "MOV": 0.2}
    est = A.approx_mvf(v, p)
    assert est.v_min == est.v_avg == est.v_max == pytest.approx(0.1 + 0.27 + 0.1)
    assert est.unmeasured == []


def test_approx_errors():
    with pytest.raises(A.UncoveredGroup):
        A.approx_mvf({"FFMA": 0.2}, {"FFMA": 0.5, "LDG": 0.5})
    with pytest.raises(A.WeightsNotNormalized):
        A.approx_mvf({"FFMA": 0.2}, {"FFMA": 0.5, "FADD": 0.4})


def test_single_member_group_collapses_bounds():
    est = A.approx_mvf({"FFMA": 0.2, "LDG": 0.5}, {"FFMA": 0.4, "FADD": 0.1, "LDG": 0.5})
    assert est.v_min == est.v_avg == est.v_max


FP32 = ["FADD", "FMUL", "FFMA", "MUFU_RCP", "MUFU_EX2"]
INT = ["IMAD", "IADD3", "LOP3", "SHF"]


@st.composite
def partitions(draw):
    ops = FP32 + INT
    raw = draw(st.lists(st.integers(1, 100), min_size=len(ops), max_size=len(ops)))
    total = sum(raw)
    p = {op: r / total for op, r in zip(ops, raw)}
    p[ops[-1]] = 1.0 - sum(p[o] for o in ops[:-1])
    vals = draw(st.lists(st.floats(0, 1), min_size=len(ops), max_size=len(ops)))
    # at least one measured member per group
    measured = {FP32[0], INT[0]} | {op for op in ops if draw(st.booleans())}
    return p, {op: v for op, v in zip(ops, vals) if op in measured}, dict(zip(ops, vals))


@given(partitions())
def test_bounds_are_ordered(case):
    p, v, _ = case
    est = A.approx_mvf(v, p)
    assert est.v_min <= est.v_avg + 1e-12
    assert est.v_avg <= est.v_max + 1e-12
    for g in est.groups.values():
        assert g.v_min <= g.mu <= g.v_max


@given(partitions(), st.sampled_from(FP32[1:] + INT[1:]), st.floats(0, 1))
def test_raising_a_measured_ivf_never_lowers_the_estimate(case, op, delta):
    p, v, full = case
    if op not in v:
        v = {**v, op: full[op]}
    up = dict(v)
    up[op] = min(1.0, v[op] + delta)
    a, b = A.approx_mvf(v, p), A.approx_mvf(up, p)
    assert b.v_avg >= a.v_avg - 1e-12
    assert b.v_max >= a.v_max - 1e-12


@given(partitions())
def test_full_measurement_is_exact_weighted_sum(case):
    p, _, full = case
    est = A.approx_mvf(full, p)
    want = sum(p[o] * full[o] for o in p)
    assert abs(est.v_avg - want) <= 1e-12
    assert est.v_min == est.v_avg == est.v_max


# ---- operator / layer vulnerability ---------------------------------------------

def test_operator_vulnerability_ratio():
    attn = OperatorTag("ATTENTION", 0)
    mlp = OperatorTag("MLP", 1)
    recs = (batch(2, 1, 1, tag=attn) + batch(0, 0, 3, tag=mlp) + batch(0, 0, 9))
    rows = {r.key: r for r in A.operator_vulnerability(recs)}
    assert [r.key for r in A.operator_vulnerability(recs)] == list(OPERATOR_KINDS)
    assert (rows["ATTENTION"].n_error, rows["ATTENTION"].n_inconsistent) == (3, 4)
    assert rows["ATTENTION"].v == 0.75
    assert rows["MLP"].v == 0.0
    assert rows["LM_HEAD"].v is None and rows["LM_HEAD"].n_inconsistent == 0


def test_layer_keys():
    recs = batch(1, 0, 1, tag=OperatorTag("MLP", 1)) + batch(1, 0, 0, tag=OperatorTag("LM_HEAD", None))
    rows = A.layer_vulnerability(recs, 2)
    assert [r.key for r in rows] == ["L0", "L1", "EMBEDDING", "LM_HEAD"]
    assert rows[1].v == 0.5 and rows[3].v == 1.0 and rows[0].v is None


@given(st.lists(st.tuples(st.sampled_from(["SDC", "DUE", "MASKED"]),
                          st.sampled_from(list(OPERATOR_KINDS)), st.integers(0, 3))))
def test_vulnerability_bounds(items):
    recs = [record(k, tag=OperatorTag(op, l)) for k, op, l in items]
    for r in A.operator_vulnerability(recs) + A.layer_vulnerability(recs, 4):
        assert 0 <= r.n_error <= r.n_inconsistent
        assert r.v is None or 0 <= r.v <= 1


# ---- sweeps and curves -------------------------------------------------------

def test_bit_sweep_rows():
    recs = []
    for b in range(10):
        recs += batch(b % 3, 1, 5, bit=f"FIXED({b})")
    rows = A.bit_sweep(recs)
    assert [r.key for r in rows] == list(range(10))
    assert all(r.trials == 5 + 1 + r.key % 3 for r in rows)
    with pytest.raises(ValueError):
        A.bit_sweep([record("SDC")])


def test_multi_fault_curve_partitions_outcomes():
    recs = batch(1, 2, 3, n=1) + batch(4, 4, 0, n=2)
    rows = A.multi_fault_curve(recs)
    assert [r.key for r in rows] == [1, 2]
    for r in rows:
        assert r.masked_rate + r.sdc_rate + r.due_rate == pytest.approx(1.0)


@given(st.lists(st.sampled_from(list(OutcomeKind)), max_size=60), st.data())
def test_partial_folds_merge_associatively(kinds, data):
    cuts = sorted(data.draw(st.lists(st.integers(0, len(kinds)), min_size=2, max_size=2)))
    parts = [kinds[:cuts[0]], kinds[cuts[0]:cuts[1]], kinds[cuts[1]:]]
    folds = []
    for part in parts:
        c = A.Counts()
        for k in part:
            c.add(k)
        folds.append(c)
    whole = A.Counts()
    for k in kinds:
        whole.add(k)
    left = folds[0].merge(folds[1]).merge(folds[2])
    right = folds[0].merge(folds[1].merge(folds[2]))
    assert left == right == whole == reduce(A.Counts.merge, folds, A.Counts())
