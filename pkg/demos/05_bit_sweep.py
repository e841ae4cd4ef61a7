"""SDC rate by flipped bit position on nano-gpt2."""
from bitstorm import analytics as A
from bitstorm.faults import FIXED, FaultSpec, TrialContext, run_campaign
from bitstorm.model import build_model, golden_run, lower, preset

program = lower(build_model(preset("nano-gpt2")), [3, 1, 4], 2)
golden = golden_run(program)
ctx = TrialContext(program, golden)

recs = []
for bit in list(range(0, 29, 4)) + [30, 31]:
    recs += run_campaign(program, golden, FaultSpec(bit_policy=FIXED(bit)), 500, 11 + bit, ctx=ctx)
for row in A.bit_sweep(recs):
    bar = "#" * int(round(row.sdc_rate * 100))
    print(f"bit {row.key:>2}  sdc {row.sdc_rate:6.3f}  due {row.due_rate:6.3f}  {bar}")
