import json
import os
import subprocess
import sys

import pytest

from bitstorm.cli import ParseError, ValidationError, parse_config, run_command
from bitstorm.cli.config import WORKERS_ENV
from bitstorm.faults import FIXED, RANDOM, FaultMode, read_jsonl

DOT8 = """
[model]
preset = dot8
[campaign]
trials = 300
repeats = 3
seed = 5
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---- config parsing ----------------------------------------------------------

def test_defaults():
    cfg = parse_config("", env={})
    assert cfg.preset == "nano-gpt2"
    assert cfg.prompt == [3, 1, 4] and cfg.steps == 2
    assert cfg.mode is FaultMode.VALUE and cfg.n == 1 and cfg.bit == RANDOM
    assert cfg.workers == 1
    assert [s.name for s in cfg.plan()] == ["n1_random"]


def test_sections_values_and_comments():
    cfg = parse_config("""
# campaign settings
[faults]
mode = ENCODING
bit = FIXED(30)     # trailing comment
opcodes = FFMA, LDG
[campaign]
trials = 50
""", env={})
    assert cfg.mode is FaultMode.ENCODING
    assert cfg.bit == FIXED(30)
    assert cfg.opcodes == ["FFMA", "LDG"]
    assert cfg.trials == 50


def test_sectionless_keys_resolve_to_their_section():
    cfg = parse_config("trials = 7\nN = 2\n", env={})
    assert cfg.trials == 7 and cfg.n == 2


def test_bit_out_of_range():
    with pytest.raises(ValidationError) as e:
        parse_config("[faults]\nbit = FIXED(32)\n", env={})
    assert e.value.field == "bit"


def test_grids_expand_to_sub_campaigns():
    cfg = parse_config("[faults]\nN_grid = [1, 2]\nbit_grid = [RANDOM, FIXED(30)]\n", env={})
    plan = cfg.plan()
    assert [s.name for s in plan] == ["n1_random", "n1_bit30", "n2_random", "n2_bit30"]
    assert len({s.seed for s in plan}) == 4
    with pytest.raises(ValidationError):
        parse_config("[faults]\nN = 1\nN_grid = [1, 2]\n", env={})


def test_parse_error_position():
    with pytest.raises(ParseError) as e:
        parse_config("[campaign]\ntrials 5\n", env={})
    assert (e.value.line, e.value.col) == (2, 1)
    with pytest.raises(ParseError) as e:
        parse_config("[nonsense]\n", env={})
    assert e.value.line == 1


def test_unknown_key_and_misplaced_key():
    with pytest.raises(ValidationError):
        parse_config("[campaign]\nfoo = 1\n", env={})
    with pytest.raises(ValidationError):
        parse_config("[model]\ntrials = 1\n", env={})


def test_invalid_values():
    for text in ("[campaign]\ntrials = 0\n", "[model]\nprompt = [99]\n",
                 "[model]\npreset = nano-gpt7\n", "[faults]\nopcodes = FOO\n",
                 "[model]\nsteps = 40\n"):
        with pytest.raises(ValidationError):
            parse_config(text, env={})


def test_workers_from_environment():
    assert parse_config("", env={WORKERS_ENV: "4"}).workers == 4
    assert parse_config("[campaign]\nworkers = 2\n", env={WORKERS_ENV: "4"}).workers == 2
    with pytest.raises(ValidationError):
        parse_config("", env={WORKERS_ENV: "zero"})


def test_echo_ignores_workers_and_output():
    a = parse_config("[campaign]\nworkers = 1\n[output]\ndir = a\n", env={})
    b = parse_config("[campaign]\nworkers = 8\n[output]\ndir = b\n", env={})
    assert a.echo() == b.echo() and a.digest() == b.digest()


# ---- commands ----------------------------------------------------------------

def test_golden_and_trace(tmp_path, capsys):
    out = tmp_path / "g"
    assert run_command(["golden", "--preset", "dot8", "--out", str(out)]) == 0
    assert {"program.bfsm", "golden.bgt", "golden.bgt.json"} <= set(os.listdir(out))
    csv = tmp_path / "mix.csv"
    assert run_command(["trace", "--golden", str(out / "golden.bgt"), "--csv", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "opcode,group,count,p_i"
    assert "LDG" in capsys.readouterr().out


def test_exit_codes_for_bad_input(tmp_path):
    assert run_command(["campaign", "--preset", "dot8", "--trials", "0", "--out", str(tmp_path)]) == 1
    assert run_command(["campaign", "--config", write(tmp_path, "[campaign]\ntrials 3\n")]) == 1
    assert run_command(["bogus"]) == 1
    assert run_command(["report", str(tmp_path / "missing")]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "bitstorm", "campaign", "--preset", "dot8",
                          "--opcodes", "EXIT", "--out", str(tmp_path)], capture_output=True)
    assert res.returncode == 1


@pytest.fixture(scope="module")
def dot8_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("dot8run")
    cfg = write(d, DOT8)
    assert run_command(["campaign", "--config", cfg, "--out", str(d / "run")]) == 0
    return d / "run"


def test_campaign_outputs(dot8_run):
    manifest = json.loads((dot8_run / "manifest.json").read_text())
    assert manifest["schema"] == "bitstorm.manifest/1"
    (entry,) = manifest["campaigns"]
    recs = read_jsonl(dot8_run / entry["file"])
    assert len(recs) == entry["trials"] == 300
    assert {r.repeat for r in recs} == {0, 1, 2}


def test_report_is_reproducible_from_logs(dot8_run, tmp_path):
    assert run_command(["report", str(dot8_run), "--out", str(tmp_path / "a")]) == 0
    assert run_command(["report", str(dot8_run), "--out", str(tmp_path / "b")]) == 0
    files = sorted(os.listdir(tmp_path / "a"))
    assert "report.json" in files and "ivf.csv" in files and "plot_bitsweep.csv" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["schema"] == "bitstorm.report/1"
    o = rep["outcomes"]
    assert o["MASKED"] + o["SDC"] + o["DUE"] == o["trials"] == 300


def test_empty_tables_are_header_only(dot8_run, tmp_path):
    run_command(["report", str(dot8_run), "--out", str(tmp_path)])
    # no FIXED-bit campaign was run, so the sweep has no rows
    assert (tmp_path / "bitsweep.csv").read_text() == "bit,trials,masked_rate,sdc_rate,due_rate\n"


def test_analyze_single_and_multi(dot8_run, tmp_path, capsys):
    assert run_command(["analyze", str(dot8_run)]) == 0
    assert "== mvf" in capsys.readouterr().out
    out = tmp_path / "cmp.csv"
    assert run_command(["analyze", str(dot8_run), str(dot8_run), "--labels", "a", "b",
                        "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("run,trials,mvf")
    assert rows[1].split(",")[1:] == rows[2].split(",")[1:]


def test_multifault_rows_sum_to_one(tmp_path):
    d = tmp_path / "mf"
    assert run_command(["campaign", "--preset", "dot4", "--n-grid", "1,2,3", "--trials", "200",
                        "--out", str(d)]) == 0
    assert run_command(["report", str(d)]) == 0
    lines = (d / "report" / "multifault.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2", "3"]
    for line in lines[1:]:
        m, s, u = map(float, line.split(",")[2:])
        assert abs(m + s + u - 1) < 1e-8


def test_compare_pass_and_fail(dot8_run, tmp_path):
    assert run_command(["enumerate", "--config", write(tmp_path, DOT8), "--out", str(dot8_run)]) == 0
    assert (dot8_run / "exact.bfex").exists()
    assert run_command(["compare", str(dot8_run), "--json", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text())["passed"] is True

    # a sampler that only ever hits loads, filed under an unfiltered spec
    biased = tmp_path / "biased"
    assert run_command(["campaign", "--preset", "dot8", "--opcodes", "LDG", "--trials", "2000",
                        "--out", str(biased)]) == 0
    mpath = biased / "manifest.json"
    m = json.loads(mpath.read_text())
    m["campaigns"][0]["spec"]["opcodes"] = []
    mpath.write_text(json.dumps(m))
    assert run_command(["compare", str(biased)]) == 3
