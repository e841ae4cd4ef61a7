"""Seeded Monte-Carlo campaigns and the JSON-lines trial log."""
import json
import math
import multiprocessing
from dataclasses import dataclass
from typing import Optional

from ..classify import Outcome, OutcomeKind, SdcCause, classify
from ..isa.encoding import OperatorTag
from .engine import TrialContext
from .rng import SplitMix64, splitmix64
from .sites import FaultSite, FaultSpec, enumerate_sites

TRIAL_SCHEMA = "bitstorm.trial/1"
BATCH = 256


@dataclass
class TrialRecord:
    trial: int
    seed: int
    mode: str
    bit_policy: str
    faults: list                    # FaultSite, in sampling (site-index) order
    reached: tuple
    outcome: Outcome
    tokens_digest: str
    dyn_count: int
    repeat: int = 0

    @property
    def n_faults(self):
        return len(self.faults)

    def to_dict(self):
        o = self.outcome
        fi = o.first_inconsistent
        dev = o.max_logit_dev
        return {
            "schema": TRIAL_SCHEMA,
            "trial": self.trial,
            "seed": self.seed,
            "repeat": self.repeat,
            "mode": self.mode,
            "bit_policy": self.bit_policy,
            "n_faults": self.n_faults,
            "sites": [s.to_dict(r) for s, r in zip(self.faults, self.reached)],
            "outcome": o.kind.value,
            "due_cause": o.due_cause,
            "sdc_cause": o.sdc_cause.value if o.sdc_cause else None,
            "first_inconsistent": None if fi is None else {"operator": fi.kind, "layer": fi.layer},
            "tokens_equal": o.tokens_equal,
            "tokens_digest": self.tokens_digest,
            "max_logit_dev": dev if math.isfinite(dev) else "inf",
            "dyn_count": self.dyn_count,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != TRIAL_SCHEMA:
            raise ValueError(f"unsupported trial record schema {d.get('schema')!r}")
        fi = d["first_inconsistent"]
        dev = d["max_logit_dev"]
        outcome = Outcome(OutcomeKind(d["outcome"]), due_cause=d["due_cause"],
                          sdc_cause=SdcCause(d["sdc_cause"]) if d["sdc_cause"] else None,
                          first_inconsistent=None if fi is None else OperatorTag(fi["operator"], fi["layer"]),
                          max_logit_dev=math.inf if dev == "inf" else float(dev),
                          tokens_equal=bool(d["tokens_equal"]))
        return cls(d["trial"], d["seed"], d["mode"], d["bit_policy"],
                   [FaultSite.from_dict(s) for s in d["sites"]],
                   tuple(bool(s["reached"]) for s in d["sites"]), outcome,
                   d["tokens_digest"], d["dyn_count"], d.get("repeat", 0))


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json())
            fh.write("\n")


def read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TrialRecord.from_dict(json.loads(line)))
    return out


def trial_seed(campaign_seed, t):
    return splitmix64((int(campaign_seed) ^ int(t)) & ((1 << 64) - 1))


def _repeat_of(t, trials, repeats):
    return t * repeats // trials


def _run_range(ctx, space, spec, lo, hi, trials, campaign_seed, repeats):
    records = []
    golden = ctx.golden
    for start in range(lo, hi, BATCH):
        stop = min(hi, start + BATCH)
        seeds, picks = [], []
        for t in range(start, stop):
            seed = trial_seed(campaign_seed, t)
            seeds.append(seed)
            picks.append(SplitMix64(seed).floyd(len(space), spec.n))
        raws = ctx.results([space.rows(p) for p in picks])
        for t, seed, p, raw in zip(range(start, stop), seeds, picks, raws):
            records.append(TrialRecord(
                trial=t, seed=seed, mode=spec.mode.value, bit_policy=str(spec.bit_policy),
                faults=[space.site(i) for i in p], reached=raw.reached,
                outcome=classify(raw, golden), tokens_digest=f"{raw.tokens_digest:016x}",
                dyn_count=raw.dyn_count, repeat=_repeat_of(t, trials, repeats)))
    return records


_WORKER = {}


def _worker_entry(args):
    lo, hi = args
    w = _WORKER
    recs = _run_range(w["ctx"], w["space"], w["spec"], lo, hi, w["trials"], w["seed"], w["repeats"])
    return [r.to_dict() for r in recs]


def run_campaign(program, golden, spec: FaultSpec, trials, campaign_seed, workers=1,
                 repeats=1, hang_multiplier=10, ctx: Optional[TrialContext] = None):
    """Run ``trials`` injected trials; records come back ordered by trial index.

    Trial ``t`` samples its sites from a stream seeded with
    ``splitmix64(campaign_seed ^ t)``, so the result does not depend on how
    trials are spread over worker processes.  ``repeats`` splits the trial
    range into that many contiguous sub-campaigns (used for dispersion).
    """
    if trials < 0:
        raise ValueError("trials must be >= 0")
    if trials == 0:
        return []
    repeats = max(1, min(int(repeats), trials))
    ctx = ctx or TrialContext(program, golden, hang_multiplier)
    space = enumerate_sites(program, golden, spec)
    if spec.n > len(space):
        from .sites import NotEnoughSites
        raise NotEnoughSites(f"{spec.n} distinct sites requested from a space of {len(space)}")
    workers = max(1, int(workers))
    if workers == 1 or trials < 2 * BATCH:
        return _run_range(ctx, space, spec, 0, trials, trials, campaign_seed, repeats)
    chunk = max(BATCH, -(-trials // (4 * workers)))
    ranges = [(lo, min(trials, lo + chunk)) for lo in range(0, trials, chunk)]
    _WORKER.update(ctx=ctx, space=space, spec=spec, trials=trials, seed=campaign_seed,
                   repeats=repeats)
    try:
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_worker_entry, ranges)
    finally:
        _WORKER.clear()
    return [TrialRecord.from_dict(d) for part in parts for d in part]
