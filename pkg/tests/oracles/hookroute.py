"""Fault injection through the interpreter's per-instruction Hook.

This route never touches the batch engine, checkpoints or taint logic; it
steps the machine one instruction at a time and flips bits from callbacks.
"""
from bitstorm.faults.sites import Target
from bitstorm.isa import Hook, run


class FlipHook(Hook):
    """Second injection route: flips bits from inside the step loop."""

    def __init__(self, sites):
        self.value, self.word = {}, {}
        for s in sites:
            table = self.word if s.target is Target.ENCODING_WORD else self.value
            # a predicate holds one bit, so every site on it flips that bit
            bit = 0 if s.target is Target.DEST_PREDICATE else s.bit
            table[s.dyn_index] = table.get(s.dyn_index, 0) ^ (1 << bit)

    def before(self, dyn, ins):
        mask = self.word.get(dyn)
        return None if mask is None else int(ins.word) ^ mask

    def after(self, dyn, dest, value):
        mask = self.value.get(dyn)
        if mask is None:
            return None
        if dest[0] == "pred":
            return int(value) ^ (mask & 1)
        return int(value) ^ mask


def outcome(program, golden, sites):
    """(kind, due cause) of one trial executed through the per-step hook."""
    res = run(program, max_dyn=golden.default_max_dyn(10), hook=FlipHook(sites))
    if res.trap is not None:
        return ("DUE", res.trap.cause.value)
    out = program.regions[program.output]
    tokens_equal = bytes(res.state.gmem[out.offset:out.end]) == golden.output
    return ("MASKED" if tokens_equal else "SDC", None)
