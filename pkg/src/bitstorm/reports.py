"""CSV, JSON and plot-data report files.

Every file is UTF-8 with "\\n" line endings and a fixed column order; floats
are printed with 9 significant digits.  All content is a pure function of
the records, the golden trace and the config echo, so regenerating from the
JSON-lines logs reproduces the same bytes.
"""
import json
import math
import os
from collections import Counter
from typing import Optional

from . import __version__
from . import analytics as A
from .faults.sites import BitPolicy
from .isa.opcodes import Opcode

REPORT_SCHEMA = "bitstorm.report/1"

HEADERS = {
    "ivf.csv": "opcode,group,trials,sdc_rate,due_rate,ivf,p_i,std_dev,low_confidence",
    "mvf.csv": "campaign,n_faults,bit_policy,trials,masked,sdc,due,mvf,sdc_rate,due_rate,masked_rate,std_dev,repeats",
    "approx_mvf.csv": "v_avg,v_min,v_max,n_measured,n_unmeasured,unmeasured,status",
    "operator.csv": "operator,n_error,n_inconsistent,v_operator",
    "layer.csv": "layer,n_error,n_inconsistent,v_layer",
    "bitsweep.csv": "bit,trials,masked_rate,sdc_rate,due_rate",
    "multifault.csv": "n_faults,trials,masked_rate,sdc_rate,due_rate",
}
PLOT_HEADER = "series,x,y"


def fmt(x):
    """Cell text: 9 significant digits for floats, empty for None."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return "{:.9g}".format(x)
    return str(x)


def _jnum(x):
    if x is None or isinstance(x, (int, bool, str)):
        return x
    if math.isfinite(x):
        return float("{:.9g}".format(x))
    return "inf" if x > 0 else "-inf"


def _csv_text(header, rows):
    lines = [header]
    for r in rows:
        cells = []
        for c in r:
            s = fmt(c)
            if any(ch in s for ch in ',"\n'):
                s = '"' + s.replace('"', '""') + '"'
            cells.append(s)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# record slicing
# ---------------------------------------------------------------------------

def _is_random(r):
    return BitPolicy.parse(r.bit_policy).is_random


def single_fault_random(records):
    """N=1 records used for IVF; RANDOM-bit ones when present, else all N=1."""
    ones = [r for r in records if r.n_faults == 1]
    rnd = [r for r in ones if _is_random(r)]
    return rnd or ones


def _slices(campaigns):
    return [(name, recs) for name, recs in campaigns if recs]


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def mvf_rows(campaigns):
    rows = []
    for name, recs in _slices(campaigns):
        m = A.mvf(recs)
        rows.append((name, recs[0].n_faults, recs[0].bit_policy, m.trials, m.masked, m.sdc, m.due,
                     m.mvf, m.sdc_rate, m.due_rate, m.masked_rate, m.std_dev, m.repeats))
    return rows


def ivf_rows(entries):
    return [(e.opcode, e.group, e.trials, e.sdc_rate, e.due_rate, e.ivf, e.p_i, e.std_dev,
             e.low_confidence) for e in entries]


def approx_row(entries, weights):
    """Single row of the group-wise estimate, or a status row when it is undefined."""
    if not entries:
        return None, []
    try:
        est = A.approx_mvf(entries, weights)
    except A.UncoveredGroup as e:
        return None, [(None, None, None, len(entries), None, None, f"uncovered: {e}")]
    return est, [(est.v_avg, est.v_min, est.v_max, len(est.measured), len(est.unmeasured),
                  " ".join(est.unmeasured), "ok")]


def vuln_rows(rows):
    return [(r.key, r.n_error, r.n_inconsistent, r.v) for r in rows]


def rate_rows(rows):
    return [(r.key, r.trials, r.masked_rate, r.sdc_rate, r.due_rate) for r in rows]


def outcome_distribution(records):
    kinds = Counter(r.outcome.kind.value for r in records)
    due = Counter(r.outcome.due_cause for r in records if r.outcome.due_cause)
    sdc = Counter(r.outcome.sdc_cause.value for r in records if r.outcome.sdc_cause)
    return {
        "trials": len(records),
        "MASKED": kinds.get("MASKED", 0), "SDC": kinds.get("SDC", 0), "DUE": kinds.get("DUE", 0),
        "due_causes": {k: due[k] for k in sorted(due)},
        "sdc_causes": {k: sdc[k] for k in sorted(sdc)},
    }


def _rows_to_dicts(header, rows):
    keys = header.split(",")
    return [{k: _jnum(v) for k, v in zip(keys, r)} for r in rows]


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def build_tables(campaigns, golden, n_layers, weights=None):
    """All report tables as ``{filename: rows}`` plus auxiliary objects.

    ``weights`` are the p_i used for IVF rows and the group-wise estimate;
    they default to the golden dynamic histogram.
    """
    weights = golden.proportions if weights is None else weights
    records = [r for _, recs in campaigns for r in recs]
    singles = single_fault_random(records)
    entries = A.ivf_table(singles, weights) if singles else []
    est, approx = approx_row(entries, weights)
    fixed = [r for r in records if r.n_faults == 1 and not _is_random(r)]
    rnd = [r for r in records if _is_random(r)]
    tables = {
        "ivf.csv": ivf_rows(entries),
        "mvf.csv": mvf_rows(campaigns),
        "approx_mvf.csv": approx,
        "operator.csv": vuln_rows(A.operator_vulnerability(records)) if records else [],
        "layer.csv": vuln_rows(A.layer_vulnerability(records, n_layers)) if records else [],
        "bitsweep.csv": rate_rows(A.bit_sweep(fixed)),
        "multifault.csv": rate_rows(A.multi_fault_curve(rnd)),
    }
    return tables, records, est


def plot_series(tables, golden):
    """Long-form (series, x, y) data for each figure-style chart."""
    p = {}
    dist = sorted(golden.histogram.items(), key=lambda kv: int(Opcode[kv[0]]))
    total = sum(golden.histogram.values()) or 1
    p["plot_instruction_mix.csv"] = [("p_i", op, n / total) for op, n in dist if n]
    p["plot_multifault.csv"] = [(s, r[0], r[i]) for r in tables["multifault.csv"]
                                for s, i in (("masked", 2), ("sdc", 3), ("due", 4))]
    p["plot_mvf.csv"] = [(s, r[0], r[i]) for r in tables["mvf.csv"]
                         for s, i in (("mvf", 7), ("sdc", 8), ("due", 9), ("std_dev", 11))]
    p["plot_ivf.csv"] = [(s, r[0], r[i]) for r in tables["ivf.csv"]
                         for s, i in (("sdc", 3), ("due", 4), ("ivf", 5))]
    p["plot_approx_mvf.csv"] = [(s, "approx", r[i]) for r in tables["approx_mvf.csv"]
                                if r[6] == "ok" for s, i in (("v_avg", 0), ("v_min", 1), ("v_max", 2))]
    p["plot_bitsweep.csv"] = [(s, r[0], r[i]) for r in tables["bitsweep.csv"]
                              for s, i in (("sdc", 3), ("due", 4))]
    p["plot_operator.csv"] = [("v_operator", r[0], r[3]) for r in tables["operator.csv"] if r[3] is not None]
    p["plot_layer.csv"] = [("v_layer", r[0], r[3]) for r in tables["layer.csv"] if r[3] is not None]
    return p


def report_json(campaigns, golden, tables, records, echo: Optional[dict], config_digest=None,
                weights=None):
    return {
        "schema": REPORT_SCHEMA,
        "environment": {"tool": "bitstorm", "version": __version__, "config_digest": config_digest},
        "config": echo,
        "golden": {"program_digest": golden.program_digest, "dyn_count": golden.dyn_count,
                   "tokens": golden.tokens,
                   "histogram": dict(sorted(golden.histogram.items(), key=lambda kv: int(Opcode[kv[0]]))),
                   "p_i": {k: _jnum(v) for k, v in
                           sorted(golden.proportions.items(), key=lambda kv: int(Opcode[kv[0]]))}},
        "exposure_weights": None if weights is None else
        {k: _jnum(v) for k, v in sorted(weights.items(), key=lambda kv: int(Opcode[kv[0]]))},
        "campaigns": [{"name": n, "trials": len(r)} for n, r in campaigns],
        "outcomes": outcome_distribution(records),
        "tables": {name[:-4]: _rows_to_dicts(HEADERS[name], rows) for name, rows in tables.items()},
    }


def emit_reports(campaigns, golden, outdir, n_layers, echo=None, config_digest=None, weights=None):
    """Write every report file into ``outdir``; returns the sorted list of file names.

    ``campaigns`` is a list of ``(name, records)`` in plan order.
    """
    campaigns = [(n, list(r)) for n, r in campaigns]
    os.makedirs(outdir, exist_ok=True)
    tables, records, _ = build_tables(campaigns, golden, n_layers, weights)
    written = []
    for name, rows in tables.items():
        write_text(os.path.join(outdir, name), _csv_text(HEADERS[name], rows))
        written.append(name)
    for name, rows in plot_series(tables, golden).items():
        write_text(os.path.join(outdir, name), _csv_text(PLOT_HEADER, rows))
        written.append(name)
    rep = report_json(campaigns, golden, tables, records, echo, config_digest, weights)
    write_text(os.path.join(outdir, "report.json"), json.dumps(rep, indent=1) + "\n")
    written.append("report.json")
    return sorted(written)


def mvf_comparison(named_runs):
    """Side-by-side MVF table for several runs: ``[(label, records)]``."""
    header = "run,trials,mvf,sdc_rate,due_rate,masked_rate,std_dev"
    rows = []
    for label, recs in named_runs:
        m = A.mvf(recs)
        rows.append((label, m.trials, m.mvf, m.sdc_rate, m.due_rate, m.masked_rate, m.std_dev))
    return _csv_text(header, rows), rows
