"""Sampled estimates against exhaustive enumeration on the 8-element dot product."""
from bitstorm import analytics as A
from bitstorm import oracle as O
from bitstorm.faults import FaultSpec, run_campaign
from bitstorm.model import FIXTURES, golden_run

program = FIXTURES["dot8"]()
golden = golden_run(program)
exact = O.exact_single(program, golden)
print(f"{exact.site_count} sites, exact MVF {exact.mvf:.4f}, DUE causes {exact.cause_counts()}")

recs = run_campaign(program, golden, FaultSpec(), 2000, 21)
w = exact.exposure_weights()
ivf = exact.ivf()
# measure only the two most frequent opcodes and impute the rest group-wise
top = sorted(w, key=lambda o: -w[o])[:2]
print(f"measured opcodes: {top}")
try:
    est = A.approx_mvf({o: ivf[o] for o in top}, w, exact=exact.mvf)
except A.UncoveredGroup as err:
    print(f"group-wise estimate unavailable: {err}")
    est = None
rep = O.compare(recs, exact, program_digest=program.digest, spec=FaultSpec(), approx=est)
for row in rep.rows:
    print(f"  {row.statistic:<12} sampled {row.estimate:.4f} exact {row.exact:.4f} "
          f"|dev|/se {row.abs_dev / row.se if row.se else 0:.2f} {'ok' if row.passed else 'FAIL'}")
print(f"verdict: {'pass' if rep.passed else 'fail'}")

pair = O.exact_pairwise(*(lambda p: (p, golden_run(p)))(FIXTURES["dot4"]()))
print(f"\ndot4 with two faults: abnormal rate {pair.abnormal_rate:.4f} over {pair.pairs} pairs")
