import json

import numpy as np
import pytest

from bitstorm.isa import run
from bitstorm.model import (ConfigInvalid, GoldenTrace, ModelConfig, build_model, golden_run,
                            lower, preset, reference_forward)

# sha256 over the weight arrays; a change here means every frozen value below moved too
WEIGHT_DIGESTS = {
    "nano-gpt2": "ac033a02ac64436a32eb434778925478e98dfc1e7a6f97b6c717c7de92c19b01",
    "nano-rms": "8768bc8564b24dc898c1f61570253f2a0d25ae2a62ff844a2d87630b291e67cf",
}


@pytest.mark.parametrize("name", sorted(WEIGHT_DIGESTS))
def test_weights_are_reproducible(name):
    a, b = build_model(preset(name)), build_model(preset(name))
    assert a.digest() == b.digest() == WEIGHT_DIGESTS[name]


def test_other_seed_changes_weights():
    cfg = preset("nano-gpt2")
    assert build_model(cfg.with_(seed=8)).digest() != WEIGHT_DIGESTS["nano-gpt2"]


def test_head_count_must_divide_hidden_size():
    with pytest.raises(ConfigInvalid):
        ModelConfig("bad", L=1, HS=30, AH=4, VS=16, CL=8)


@pytest.mark.parametrize("prompt,steps", [([], 1), ([3], -1), ([99], 1), ([1] * 30, 5)])
def test_bad_sequences_rejected(gpt2_model, prompt, steps):
    with pytest.raises(ConfigInvalid):
        lower(gpt2_model, prompt, steps)


def test_lowering_is_deterministic(gpt2_model):
    a = lower(gpt2_model, [3, 1, 4], 2)
    b = lower(gpt2_model, [3, 1, 4], 2)
    assert a.to_bytes() == b.to_bytes()


@pytest.mark.parametrize("name", ["nano-gpt2", "nano-rms"])
def test_golden_matches_host_reference(name):
    model = build_model(preset(name))
    program = lower(model, [3, 1, 4], 2)
    g = golden_run(program)
    ref = reference_forward(model, [3, 1, 4], 2)
    assert g.tokens == ref.tokens
    assert len(g.tokens) == 2
    assert len(g.logits_final) == len(ref.logits)
    for got, want in zip(g.logits_final, ref.logits):
        assert got.view(np.uint32).tolist() == want.view(np.uint32).tolist()
    assert [s.digest for s in g.snapshots] == ref.digests


def test_kv_cache_agrees_with_full_recompute(gpt2_model):
    a = reference_forward(gpt2_model, [3, 1, 4], 2, use_cache=True)
    b = reference_forward(gpt2_model, [3, 1, 4], 2, use_cache=False)
    assert a.tokens == b.tokens
    for x, y in zip(a.logits, b.logits):
        assert np.array_equal(x, y)


def test_golden_trace_shape(gpt2):
    program, g = gpt2
    assert g.dyn_count == 126500
    assert g.tokens == [28, 28]
    assert sum(g.histogram.values()) == g.dyn_count
    assert sum(g.proportions.values()) == pytest.approx(1.0, abs=1e-12)
    assert g.histogram["EXIT"] == 1
    assert g.program_digest == program.digest
    assert run(program).dyn_count == g.dyn_count


def test_norm_variants_differ_in_instruction_mix(gpt2):
    _, g = gpt2
    model = build_model(preset("nano-rms"))
    g2 = golden_run(lower(model, [3, 1, 4], 2))
    # RMS normalisation has no mean subtraction and only pre-norms
    assert g2.histogram["MUFU_RSQ"] < g.histogram["MUFU_RSQ"]
    assert g2.histogram["FADD"] < g.histogram["FADD"]


def test_zero_generation_steps(gpt2_model):
    g = golden_run(lower(gpt2_model, [3, 1, 4], 0))
    assert g.tokens == []
    assert len(g.logits_final) == 1
    ref = reference_forward(gpt2_model, [3, 1, 4], 0)
    assert np.array_equal(g.logits_final[0], ref.logits[0])


def test_golden_trace_persistence(gpt2_small, tmp_path):
    _, g = gpt2_small
    path = tmp_path / "golden.bgt"
    g.save(path)
    back = GoldenTrace.load(path)
    assert back.to_bytes() == g.to_bytes()
    assert back.tokens == g.tokens
    side = json.loads((tmp_path / "golden.bgt.json").read_text())
    assert side["dyn_count"] == g.dyn_count
    assert side["program_digest"] == g.program_digest
    assert sum(side["histogram"].values()) == g.dyn_count
