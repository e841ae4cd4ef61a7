"""Acceptance criteria 1-11.

Each test appends one ``CRITERION k: PASS|FAIL ...`` line, printed together
in the terminal summary.  The heavy fixtures (the exhaustive nano-gpt2 table
in particular) are session-scoped and shared with the other test modules.
"""
import json
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from bitstorm import analytics as A
from bitstorm import oracle as O
from bitstorm.classify import DUE_CAUSES_EMITTED, OutcomeKind, SdcCause
from bitstorm.cli import run_command
from bitstorm.faults import FIXED, FaultMode, FaultSpec, TrialContext, run_campaign
from bitstorm.isa import flip_bit
from bitstorm.isa.encoding import OPERATOR_KINDS
from bitstorm.model import build_model, golden_run, lower, preset, reference_forward


def verdict(k, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def f32(word):
    return float(np.uint32(word).view(np.float32))


# 1 -------------------------------------------------------------------------

def test_c01_exponent_flip_jumps_orders_of_magnitude():
    before = 0x3E4CCCCD
    after = flip_bit(before, 30)
    ratio = f32(after) / f32(before)
    verdict(1, after == 0x7E4CCCCD and ratio > 1e37,
            f"flip_bit(0x3e4ccccd, 30) = {after:#010x}, magnitude ratio {ratio:.3e}")


# 2 -------------------------------------------------------------------------

def test_c02_golden_is_bit_exact_against_host_reference():
    details, ok = [], True
    t0 = time.perf_counter()
    for name in ("nano-gpt2", "nano-rms"):
        model = build_model(preset(name))
        g = golden_run(lower(model, [3, 1, 4], 2))
        ref = reference_forward(model, [3, 1, 4], 2)
        logits_eq = len(g.logits_final) == len(ref.logits) and all(
            np.array_equal(a.view(np.uint32), b.view(np.uint32))
            for a, b in zip(g.logits_final, ref.logits))
        same = g.tokens == ref.tokens and logits_eq and [s.digest for s in g.snapshots] == ref.digests
        ok &= same
        details.append(f"{name} tokens={g.tokens} snapshots={len(g.snapshots)} equal={same}")
    elapsed = time.perf_counter() - t0
    verdict(2, ok and elapsed < 10, "; ".join(details) + f"; {elapsed:.1f}s")


# 3 -------------------------------------------------------------------------

def test_c03_sampled_campaign_agrees_with_exhaustive(dot8, dot8_exact):
    program, golden = dot8
    t0 = time.perf_counter()
    recs = run_campaign(program, golden, FaultSpec(), 2000, 21)
    rep = O.compare(recs, dot8_exact, sigma=3.0, program_digest=program.digest, spec=FaultSpec())
    elapsed = time.perf_counter() - t0
    worst = max(r.abs_dev / r.se for r in rep.rows if r.se > 0)
    verdict(3, rep.passed and elapsed < 120,
            f"dot8 2000 trials: mvf {rep.rows[0].estimate:.4f} vs exact {dot8_exact.mvf:.4f}, "
            f"{len(rep.rows) - 1} opcode IVFs, worst deviation {worst:.2f} SE")


# 4 -------------------------------------------------------------------------

def _random_partition(rng, weights):
    """Measured subset keeping at least one member in every opcode group."""
    groups = {}
    for op, g in A.default_groups(sorted(weights)).items():
        groups.setdefault(g, []).append(op)
    measured = set()
    for members in groups.values():
        measured.add(members[rng.integers(len(members))])
    measured |= {op for op in weights if rng.random() < 0.5}
    return measured


def test_c04_groupwise_estimate_exactness_and_bounds(gpt2_exact):
    # (a) all opcodes measured
    w = gpt2_exact.exposure_weights()
    ivf = gpt2_exact.ivf()
    full = A.approx_mvf(ivf, w)
    direct = sum(w[o] * ivf[o] for o in w)
    a_ok = (full.v_min == full.v_avg == full.v_max and abs(full.v_avg - direct) <= 1e-12
            and abs(full.v_avg - gpt2_exact.mvf) <= 1e-12)

    # (b) random measured subsets of the nano-gpt2 table
    rng = np.random.default_rng(2024)
    b_ok = True
    for _ in range(100):
        measured = _random_partition(rng, w)
        est = A.approx_mvf({o: ivf[o] for o in measured}, w)
        b_ok &= est.v_min <= est.v_avg <= est.v_max

    # (c) three opcodes, one unmeasured
    ex = A.approx_mvf({"FFMA": 0.2, "FADD": 0.6}, {"FFMA": 0.5, "FADD": 0.25, "FMUL": 0.25})
    c_ok = (abs(ex.v_avg - 0.35) < 1e-15 and abs(ex.v_min - 0.30) < 1e-15
            and abs(ex.v_max - 0.40) < 1e-15)
    verdict(4, a_ok and b_ok and c_ok,
            f"(a) full M = {full.v_avg:.12f} vs direct {direct:.12f}: {a_ok}; "
            f"(b) 100 partitions ordered: {b_ok}; "
            f"(c) ({ex.v_min:.2f}, {ex.v_avg:.2f}, {ex.v_max:.2f}): {c_ok}")


# 5 -------------------------------------------------------------------------

def test_c05_top_eight_approximation_report(gpt2_exact, gpt2_small):
    w = gpt2_exact.exposure_weights()
    ivf = gpt2_exact.ivf()
    top = sorted(w, key=lambda o: -w[o])[:8]
    est = A.approx_mvf({o: ivf[o] for o in top}, w, exact=gpt2_exact.mvf)
    rep = O.compare([], gpt2_exact, program_digest=gpt2_small[0].digest, approx=est)
    b = rep.bounds
    rel = abs(est.v_avg - gpt2_exact.mvf) / gpt2_exact.mvf
    flagged = (b["exact_in_bounds"] == (est.v_min <= gpt2_exact.mvf <= est.v_max)
               and b["relative_deviation"] == pytest.approx(rel, abs=1e-15))
    verdict(5, flagged,
            f"M = {','.join(top)}; V_avg {est.v_avg:.5f} in [{est.v_min:.5f}, {est.v_max:.5f}], "
            f"exact {gpt2_exact.mvf:.5f}, relative deviation {100 * rel:.2f}%, "
            f"exact_in_bounds={b['exact_in_bounds']}")


# 6 -------------------------------------------------------------------------

SWEEP_BITS = list(range(0, 29, 4)) + [30, 31]


def test_c06_bit_position_sweep(gpt2):
    program, golden = gpt2
    ctx = TrialContext(program, golden)
    recs = []
    for b in SWEEP_BITS:
        recs += run_campaign(program, golden, FaultSpec(bit_policy=FIXED(b)), 500, 11 + b, ctx=ctx)
    rows = {r.key: r for r in A.bit_sweep(recs)}
    sdc = {b: rows[b].sdc_rate for b in SWEEP_BITS}
    others = [sdc[b] for b in SWEEP_BITS if b != 30]
    low = [sdc[b] for b in SWEEP_BITS if b <= 12]
    low_mean = sum(low) / len(low)
    ok = sdc[30] > max(others) and sdc[31] < sdc[30] and low_mean < 0.05
    verdict(6, ok, "sdc_rate " + " ".join(f"b{b}={sdc[b]:.3f}" for b in SWEEP_BITS)
            + f"; mean over bits 0-12 {low_mean:.4f}")


# 7 -------------------------------------------------------------------------

def test_c07_two_faults_are_at_least_as_harmful(dot4):
    single = O.exact_single(*dot4)
    pair = O.exact_pairwise(*dot4)
    verdict(7, pair.abnormal_rate >= single.mvf,
            f"dot4 abnormal N=1 {single.mvf:.5f} ({single.site_count} sites), "
            f"N=2 {pair.abnormal_rate:.5f} ({pair.pairs} pairs)")


# 8 -------------------------------------------------------------------------

def _invariant_failures(recs):
    bad = []
    kinds = [r.outcome.kind for r in recs]
    m = A.mvf(recs)
    if (m.masked, m.sdc, m.due) != tuple(kinds.count(k) for k in OutcomeKind) or \
            m.masked + m.sdc + m.due != len(recs):
        bad.append("partition")
    for r in recs:
        o = r.outcome
        if o.kind is OutcomeKind.DUE and o.due_cause not in DUE_CAUSES_EMITTED:
            bad.append(f"trial {r.trial} cause {o.due_cause}")
        if o.kind is OutcomeKind.DUE and o.due_cause in ("E2", "E6", "E7"):
            bad.append(f"trial {r.trial} emitted {o.due_cause}")
        if o.kind is OutcomeKind.SDC and (o.first_inconsistent is None
                                         or o.sdc_cause not in (SdcCause.NUMERIC, SdcCause.ADDRESS)):
            bad.append(f"trial {r.trial} SDC without differing snapshot or sub-cause")
    return bad


def test_c08_outcome_partition_and_cause_schema(gpt2, dot8):
    program, golden = gpt2
    ctx = TrialContext(program, golden)
    campaigns = {
        "gpt2 VALUE N=1": run_campaign(program, golden, FaultSpec(), 1500, 3, ctx=ctx),
        "gpt2 ENCODING N=1": run_campaign(program, golden, FaultSpec(mode=FaultMode.ENCODING),
                                          1500, 4, ctx=ctx),
        "gpt2 VALUE N=3": run_campaign(program, golden, FaultSpec(n=3), 500, 5, ctx=ctx),
        "dot8 VALUE N=2": run_campaign(*dot8, FaultSpec(n=2), 1000, 6),
    }
    bad, causes = [], set()
    for name, recs in campaigns.items():
        bad += [f"{name}: {b}" for b in _invariant_failures(recs)]
        causes |= {r.outcome.due_cause for r in recs if r.outcome.due_cause}
    trials = sum(len(r) for r in campaigns.values())
    verdict(8, not bad, f"{trials} trials over {len(campaigns)} campaigns, DUE causes seen "
            f"{sorted(causes)}" + (f"; violations {bad[:3]}" if bad else ""))


# 9 -------------------------------------------------------------------------

def test_c09_operator_vulnerability_invariants(gpt2):
    program, golden = gpt2
    ctx = TrialContext(program, golden)
    wide = run_campaign(program, golden, FaultSpec(), 2000, 9, ctx=ctx)
    head = run_campaign(program, golden, FaultSpec(operators={"LM_HEAD"}), 1000, 10, ctx=ctx)
    rows = []
    for recs in (wide, head):
        rows += A.operator_vulnerability(recs) + A.layer_vulnerability(recs, preset("nano-gpt2").L)
    in_range = all(0 <= r.n_error <= r.n_inconsistent and (r.v is None or 0 <= r.v <= 1)
                   for r in rows)
    lm = {r.key: r for r in A.operator_vulnerability(head)}["LM_HEAD"]
    keys = [r.key for r in A.operator_vulnerability(head)]
    ok = in_range and keys == list(OPERATOR_KINDS) and lm.n_inconsistent > 0
    verdict(9, ok, f"{len(rows)} rows in range: {in_range}; LM_HEAD-filtered campaign "
            f"n_error={lm.n_error} n_inconsistent={lm.n_inconsistent} v={lm.v}")


# 10 ------------------------------------------------------------------------

DETERMINISM_CFG = """
[model]
preset = nano-gpt2
prompt = [3, 1]
steps = 1
[faults]
N_grid = [1, 2]
[campaign]
trials = 512
repeats = 4
seed = 77
"""


def _tree_bytes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_c10_worker_count_does_not_change_outputs(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DETERMINISM_CFG)
    trees = {}
    for w in (1, 8):
        out = tmp_path / f"w{w}"
        assert run_command(["campaign", "--config", str(cfg), "--workers", str(w),
                            "--out", str(out)]) == 0
        assert run_command(["report", str(out)]) == 0
        trees[w] = _tree_bytes(out)
    a, b = trees[1], trees[8]
    logs = sorted(k for k in a if k.endswith(".jsonl"))
    reports = sorted(k for k in a if k.startswith("report"))
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    lines = sum(a[k].count(b"\n") for k in logs)
    verdict(10, not differing and logs and reports,
            f"workers 1 vs 8: {len(logs)} JSONL logs ({lines} trials) and {len(reports)} report "
            f"files byte-identical" + (f"; differing {differing}" if differing else ""))


# 11 ------------------------------------------------------------------------

def test_c11_norm_variants_side_by_side(tmp_path):
    runs = []
    for name in ("nano-gpt2", "nano-rms"):
        out = tmp_path / name
        assert run_command(["campaign", "--preset", name, "--trials", "1500", "--repeats", "3",
                            "--seed", "31", "--out", str(out)]) == 0
        assert run_command(["report", str(out)]) == 0
        runs.append(str(out))
    table = tmp_path / "norms.csv"
    assert run_command(["analyze", *runs, "--labels", "layernorm", "rmsnorm",
                        "--out", str(table)]) == 0
    rows = [l.split(",") for l in table.read_text().splitlines()]
    body = {r[0]: (int(r[1]), float(r[2])) for r in rows[1:]}
    ok = (rows[0][:3] == ["run", "trials", "mvf"] and set(body) == {"layernorm", "rmsnorm"}
          and all(n >= 1000 and 0 < v < 1 for n, v in body.values()))
    mvfs = {}
    for k, n in zip(("layernorm", "rmsnorm"), ("nano-gpt2", "nano-rms")):
        o = json.loads((tmp_path / n / "report" / "report.json").read_text())["outcomes"]
        mvfs[k] = (o["SDC"] + o["DUE"]) / o["trials"]
    ok &= all(abs(mvfs[k] - body[k][1]) < 1e-9 for k in body)
    verdict(11, ok, " | ".join(f"{k}: {n} trials, MVF {v:.4f}" for k, (n, v) in body.items()))
