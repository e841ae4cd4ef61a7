"""``bitstorm`` command line: golden, trace, campaign, enumerate, analyze, report, compare."""
import argparse
import json
import os
import sys

from .. import __version__
from .. import analytics as A
from .. import oracle as O
from .. import reports as R
from ..faults.campaign import read_jsonl, run_campaign, write_jsonl
from ..faults.engine import TrialContext
from ..faults.sites import (BitPolicy, EmptySiteSpace, FaultMode, FaultSpec, FaultSpecError,
                            NotEnoughSites, enumerate_sites)
from ..isa.opcodes import Opcode
from ..isa.program import Program
from ..model import FIXTURES, GoldenTrace, build_model, golden_run, lower
from ..model.config import ConfigInvalid
from .config import ParseError, ValidationError, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_EXEC, EXIT_VERDICT = 0, 1, 2, 3
MANIFEST_SCHEMA = "bitstorm.manifest/1"
PROGRAM_FILE = "program.bfsm"
GOLDEN_FILE = "golden.bgt"
MANIFEST_FILE = "manifest.json"
EXACT_FILE = "exact.bfex"

CONFIG_ERRORS = (ParseError, ValidationError, ConfigInvalid, FaultSpecError, EmptySiteSpace,
                 NotEnoughSites)


class UsageError(Exception):
    pass


class VerdictFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flags that mirror config keys: (flag, key, help)
CONFIG_FLAGS = [
    ("--preset", "preset", "model preset or fixture name (nano-gpt2, nano-rms, dot4, dot8)"),
    ("--norm", "norm", "normalization override (LAYERNORM_PRE_POST or RMSNORM_PRE)"),
    ("--mlp", "mlp", "MLP override (GELU or SILU_GATED)"),
    ("--weight-seed", "weight_seed", "weight generator seed override"),
    ("--prompt", "prompt", "prompt tokens, comma separated"),
    ("--steps", "steps", "generated tokens"),
    ("--mode", "mode", "VALUE or ENCODING"),
    ("--n", "n", "faults per trial"),
    ("--n-grid", "n_grid", "list of fault counts, one sub-campaign each"),
    ("--bit", "bit", "RANDOM or FIXED(b)"),
    ("--bit-grid", "bit_grid", "list of bit policies, one sub-campaign each"),
    ("--opcodes", "opcodes", "opcode filter"),
    ("--operators", "operators", "operator-kind filter"),
    ("--layers", "layers", "layer filter"),
    ("--trials", "trials", "trials per sub-campaign"),
    ("--repeats", "repeats", "contiguous repeat blocks per sub-campaign"),
    ("--seed", "seed", "campaign seed"),
    ("--workers", "workers", "worker processes"),
    ("--hang-multiplier", "hang_multiplier", "hang budget as a multiple of the golden length"),
    ("--cap", "cap", "exhaustive enumeration cap"),
]


def _add_config_flags(p):
    p.add_argument("--config", help="config file")
    for flag, key, hlp in CONFIG_FLAGS:
        p.add_argument(flag, dest="cfg_" + key, metavar="V", help=hlp)
    p.add_argument("--out", "-o", dest="cfg_dir", metavar="DIR", help="output directory")


def load_config(args, env=None):
    text = ""
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    overrides = [(k[4:], v) for k, v in sorted(vars(args).items())
                 if k.startswith("cfg_") and v is not None]
    return parse_config(text, overrides, env)


def build_program(cfg):
    if cfg.is_fixture:
        return FIXTURES[cfg.preset]()
    return lower(build_model(cfg.model_config()), cfg.prompt, cfg.steps)


def n_layers_of(cfg):
    mc = cfg.model_config()
    return mc.L if mc is not None else 0


def _err(msg):
    print(f"bitstorm: {msg}", file=sys.stderr)


def _load_run(rundir):
    """(program, golden, manifest) of a run directory."""
    program = Program.load(os.path.join(rundir, PROGRAM_FILE))
    golden = GoldenTrace.load(os.path.join(rundir, GOLDEN_FILE))
    path = os.path.join(rundir, MANIFEST_FILE)
    manifest = None
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("schema") != MANIFEST_SCHEMA:
            raise ValueError(f"unsupported manifest schema {manifest.get('schema')!r}")
    return program, golden, manifest


def _load_campaigns(rundir, manifest):
    return [(c["name"], read_jsonl(os.path.join(rundir, c["file"]))) for c in manifest["campaigns"]]


def _write_golden(outdir, program, golden):
    os.makedirs(outdir, exist_ok=True)
    program.save(os.path.join(outdir, PROGRAM_FILE))
    golden.save(os.path.join(outdir, GOLDEN_FILE))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_golden(args):
    cfg = load_config(args)
    program = build_program(cfg)
    golden = golden_run(program)
    _write_golden(cfg.outdir, program, golden)
    print(f"dyn_count {golden.dyn_count}  tokens {golden.tokens}  -> {cfg.outdir}")
    return EXIT_OK


def instruction_mix(golden):
    total = sum(golden.histogram.values())
    rows = [(op, Opcode[op].group.value, n, n / total)
            for op, n in golden.histogram.items() if n]
    rows.sort(key=lambda r: (-r[2], int(Opcode[r[0]])))
    return rows


def cmd_trace(args):
    if args.golden:
        golden = GoldenTrace.load(args.golden)
    else:
        cfg = load_config(args)
        golden = golden_run(build_program(cfg))
    rows = instruction_mix(golden)
    print(f"{'opcode':<8} {'group':<8} {'count':>12} {'share':>10}")
    for op, grp, n, p in rows:
        print(f"{op:<8} {grp:<8} {n:>12d} {p:>10.4%}")
    print(f"{'total':<17} {golden.dyn_count:>12d}")
    if args.csv:
        R.write_text(args.csv, R._csv_text("opcode,group,count,p_i", rows))
    return EXIT_OK


def cmd_campaign(args):
    cfg = load_config(args)
    program = build_program(cfg)
    golden = golden_run(program)
    _write_golden(cfg.outdir, program, golden)
    ctx = TrialContext(program, golden, cfg.hang_multiplier)
    base = cfg.fault_spec()
    entries = []
    for sub in cfg.plan():
        spec = sub.spec(base)
        records = run_campaign(program, golden, spec, cfg.trials, sub.seed, workers=cfg.workers,
                               repeats=cfg.repeats, ctx=ctx)
        fname = f"trials_{sub.name}.jsonl"
        write_jsonl(records, os.path.join(cfg.outdir, fname))
        entries.append({"name": sub.name, "file": fname, "seed": sub.seed, "spec": spec.to_dict(),
                        "trials": len(records)})
        m = A.mvf(records)
        print(f"{sub.name:<14} trials {m.trials:>7d}  mvf {m.mvf:.4f}  sdc {m.sdc_rate:.4f}  "
              f"due {m.due_rate:.4f}")
    manifest = {"schema": MANIFEST_SCHEMA, "tool": "bitstorm", "version": __version__,
                "config_digest": cfg.digest(), "config": cfg.echo(), "n_layers": n_layers_of(cfg),
                "program_digest": program.digest, "campaigns": entries}
    R.write_text(os.path.join(cfg.outdir, MANIFEST_FILE), json.dumps(manifest, indent=1) + "\n")
    return EXIT_OK


def emit_exact(exact, golden, outdir, n_layers):
    """CSV summaries of an exhaustive result, using the report headers."""
    os.makedirs(outdir, exist_ok=True)
    c = exact.counts()
    mvf_row = ("exact", 1, exact.spec["bit"], exact.site_count, int(c[0]), int(c[1]), int(c[2]),
               exact.mvf, exact.sdc_rate, exact.due_rate, float(c[0]) / exact.site_count, None, 1)
    bits = [(b, k.trials, k.masked_rate, k.sdc_rate, k.due_rate)
            for b, k in sorted(exact.bit_counts().items())]
    files = {
        "exact_mvf.csv": (R.HEADERS["mvf.csv"], [mvf_row]),
        "exact_ivf.csv": (R.HEADERS["ivf.csv"], R.ivf_rows(exact.ivf_table(exact.exposure_weights()))),
        "exact_bitsweep.csv": (R.HEADERS["bitsweep.csv"], bits),
        "exact_operator.csv": (R.HEADERS["operator.csv"], R.vuln_rows(exact.operator_vulnerability())),
        "exact_layer.csv": (R.HEADERS["layer.csv"], R.vuln_rows(exact.layer_vulnerability(n_layers))),
    }
    for name, (header, rows) in files.items():
        R.write_text(os.path.join(outdir, name), R._csv_text(header, rows))
    return sorted(files)


def cmd_enumerate(args):
    cfg = load_config(args)
    program = build_program(cfg)
    golden = golden_run(program)
    _write_golden(cfg.outdir, program, golden)
    spec = cfg.fault_spec()
    if args.pairwise:
        res = O.exact_pairwise(program, golden, spec, cap=cfg.cap)
        single = O.exact_single(program, golden, spec, cap=cfg.cap)
        out = {"sites": res.site_count, "pairs": res.pairs,
               "n1": {"masked": single.counts()[0] / single.site_count, "sdc": single.sdc_rate,
                      "due": single.due_rate, "abnormal": single.mvf},
               "n2": {"masked": res.masked_rate, "sdc": res.sdc_rate, "due": res.due_rate,
                      "abnormal": res.abnormal_rate}}
        out = json.loads(json.dumps(out), parse_float=lambda s: R._jnum(float(s)))
        R.write_text(os.path.join(cfg.outdir, "exact_pairwise.json"), json.dumps(out, indent=1) + "\n")
        print(json.dumps(out, indent=1))
        return EXIT_OK
    exact = O.exact_single(program, golden, spec, cap=cfg.cap, workers=cfg.workers)
    exact.save(os.path.join(cfg.outdir, EXACT_FILE))
    emit_exact(exact, golden, cfg.outdir, n_layers_of(cfg))
    print(f"sites {exact.site_count}  mvf {exact.mvf:.6f}  sdc {exact.sdc_rate:.6f}  "
          f"due {exact.due_rate:.6f}  -> {cfg.outdir}")
    return EXIT_OK


def _print_table(title, header, rows):
    print(f"== {title}")
    cols = header.split(",")
    cells = [cols] + [[R.fmt(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    for row in cells:
        print("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    print()


def cmd_analyze(args):
    runs = []
    for d in args.rundir:
        _, golden, manifest = _load_run(d)
        if manifest is None:
            raise FileNotFoundError(f"{d} has no {MANIFEST_FILE}")
        runs.append((d, golden, manifest, _load_campaigns(d, manifest)))
    if len(runs) == 1:
        d, golden, manifest, campaigns = runs[0]
        weights = run_weights(Program.load(os.path.join(d, PROGRAM_FILE)), golden, manifest)
        tables, _, _ = R.build_tables(campaigns, golden, manifest["n_layers"], weights)
        for name, rows in tables.items():
            _print_table(name[:-4], R.HEADERS[name], rows)
        return EXIT_OK
    labels = [args.labels[i] if args.labels and i < len(args.labels) else d
              for i, (d, *_rest) in enumerate(runs)]
    named = [(lab, R.single_fault_random([r for _, recs in c for r in recs]))
             for lab, (_, _, _, c) in zip(labels, runs)]
    text, rows = R.mvf_comparison(named)
    _print_table("mvf comparison", text.splitlines()[0], rows)
    if args.out:
        R.write_text(args.out, text)
    return EXIT_OK


def _spec_of(d):
    return FaultSpec(FaultMode(d["mode"]), d["n"], BitPolicy.parse(d["bit"]), frozenset(d["opcodes"]),
                     frozenset(d["operators"]), frozenset(d["layers"]))


def run_weights(program, golden, manifest):
    """Exposure weights of the run's fault spec (mode and filters; N and bit do not matter)."""
    if not manifest["campaigns"]:
        return None
    return enumerate_sites(program, golden, _spec_of(manifest["campaigns"][0]["spec"])).exposure_weights()


def cmd_report(args):
    program, golden, manifest = _load_run(args.rundir)
    if manifest is None:
        raise FileNotFoundError(f"{args.rundir} has no {MANIFEST_FILE}")
    outdir = args.out or os.path.join(args.rundir, "report")
    files = R.emit_reports(_load_campaigns(args.rundir, manifest), golden, outdir,
                           manifest["n_layers"], manifest["config"], manifest["config_digest"],
                           run_weights(program, golden, manifest))
    print(f"{len(files)} files -> {outdir}")
    return EXIT_OK


def cmd_compare(args):
    program, golden, manifest = _load_run(args.rundir)
    if manifest is None:
        raise FileNotFoundError(f"{args.rundir} has no {MANIFEST_FILE}")
    if manifest["program_digest"] != program.digest:
        raise O.SpecMismatch("manifest and program disagree")
    singles = [c for c in manifest["campaigns"] if c["spec"]["n"] == 1]
    if not singles:
        raise O.SpecMismatch("no single-fault sub-campaign to compare")
    exact_path = args.exact or os.path.join(args.rundir, EXACT_FILE)
    cache = {}
    verdict = True
    summary = []
    for c in singles:
        spec = _spec_of(c["spec"])
        key = json.dumps(spec.to_dict(), sort_keys=True)
        if key not in cache:
            exact = O.ExactResult.load(exact_path) if os.path.exists(exact_path) else None
            if exact is None or (exact.spec != spec.to_dict() and not args.exact):
                exact = O.exact_single(program, golden, spec, cap=args.cap)
            cache[key] = exact
        exact = cache[key]
        records = read_jsonl(os.path.join(args.rundir, c["file"]))
        approx = None
        entries = A.ivf_table(records, exact.exposure_weights())
        try:
            approx = A.approx_mvf(entries, exact.exposure_weights(), exact=exact.mvf)
        except A.UncoveredGroup:
            pass
        rep = O.compare(records, exact, sigma=args.sigma, program_digest=program.digest,
                        spec=spec, approx=approx)
        print(f"== {c['name']}  (sigma {args.sigma:g})")
        _print_table("deviations", "statistic,estimate,exact,trials,abs_dev,rel_dev,se,pass",
                     [(r.statistic, r.estimate, r.exact, r.trials, r.abs_dev, r.rel_dev, r.se, r.passed)
                      for r in rep.rows])
        if rep.bounds:
            b = rep.bounds
            print(f"group-wise estimate: v_avg {b['v_avg']:.6f}  [{b['v_min']:.6f}, {b['v_max']:.6f}]  "
                  f"exact {b['exact']:.6f}  in bounds: {b['exact_in_bounds']}")
        verdict &= rep.passed
        summary.append({"campaign": c["name"], "passed": rep.passed,
                        "rows": [{k: R._jnum(v) if not isinstance(v, bool) else v
                                  for k, v in vars(r).items()} for r in rep.rows],
                        "bounds": None if rep.bounds is None else
                        {k: R._jnum(v) if not isinstance(v, bool) else v for k, v in rep.bounds.items()}})
    if args.json:
        R.write_text(args.json, json.dumps({"passed": verdict, "campaigns": summary}, indent=1) + "\n")
    print("verdict:", "PASS" if verdict else "FAIL")
    if not verdict:
        raise VerdictFailed()
    return EXIT_OK


def make_parser():
    p = _Parser(prog="bitstorm", description=__doc__)
    p.add_argument("--version", action="version", version=f"bitstorm {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("golden", help="build, lower and run fault-free; save program and golden trace")
    _add_config_flags(s)
    s.set_defaults(func=cmd_golden)

    s = sub.add_parser("trace", help="print the dynamic instruction distribution")
    _add_config_flags(s)
    s.add_argument("--golden", help="read an existing golden trace instead of building one")
    s.add_argument("--csv", help="also write the table as CSV")
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("campaign", help="run injection campaigns and write JSON-lines logs")
    _add_config_flags(s)
    s.set_defaults(func=cmd_campaign)

    s = sub.add_parser("enumerate", help="exhaustive single-fault (or pairwise) enumeration")
    _add_config_flags(s)
    s.add_argument("--pairwise", action="store_true", help="enumerate all site pairs (tiny programs)")
    s.set_defaults(func=cmd_enumerate)

    s = sub.add_parser("analyze", help="fold trial logs into analytics tables")
    s.add_argument("rundir", nargs="+")
    s.add_argument("--labels", nargs="*", help="labels for a multi-run MVF comparison")
    s.add_argument("--out", help="write the multi-run comparison CSV here")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("report", help="emit CSV, JSON and plot-data reports")
    s.add_argument("rundir")
    s.add_argument("--out", help="report directory (default RUNDIR/report)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("compare", help="sampled estimates against exhaustive values")
    s.add_argument("rundir")
    s.add_argument("--exact", help="exhaustive result file (computed when absent)")
    s.add_argument("--sigma", type=float, default=3.0)
    s.add_argument("--cap", type=int, default=O.DEFAULT_CAP)
    s.add_argument("--json", help="write the deviation report as JSON")
    s.set_defaults(func=cmd_compare)
    return p


def run_command(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as e:
        _err(f"usage: {e}")
        return EXIT_CONFIG
    except CONFIG_ERRORS as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    except VerdictFailed:
        return EXIT_VERDICT
    except Exception as e:     # anything else is an execution failure
        _err(f"{type(e).__name__}: {e}")
        return EXIT_EXEC


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
