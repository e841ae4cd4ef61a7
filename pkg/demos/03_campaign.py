"""A small single-fault campaign and the tables folded from it."""
from bitstorm import analytics as A
from bitstorm.faults import FaultSpec, TrialContext, enumerate_sites, run_campaign
from bitstorm.model import build_model, golden_run, lower, preset

cfg = preset("nano-gpt2")
program = lower(build_model(cfg), [3, 1, 4], 2)
golden = golden_run(program)
ctx = TrialContext(program, golden)

spec = FaultSpec()
recs = run_campaign(program, golden, spec, 3000, seed := 42, repeats=3, ctx=ctx)
m = A.mvf(recs)
print(f"seed {seed}: {m.trials} trials, MVF {m.mvf:.4f} "
      f"(SDC {m.sdc_rate:.4f}, DUE {m.due_rate:.4f}), std over repeats {m.std_dev:.4f}")

weights = enumerate_sites(program, golden, spec).exposure_weights()
print("\nper-opcode vulnerability:")
for e in A.ivf_table(recs, weights):
    flag = " (few trials)" if e.low_confidence else ""
    print(f"  {e.opcode:<10} p={e.p_i:.3f} ivf={e.ivf:.3f} n={e.trials}{flag}")

print("\noperator vulnerability (errors among inconsistent trials):")
for r in A.operator_vulnerability(recs):
    v = "-" if r.v is None else f"{r.v:.3f}"
    print(f"  {r.key:<10} {r.n_error:>4}/{r.n_inconsistent:<4} {v}")
