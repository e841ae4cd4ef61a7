"""Build the nano-gpt2 model, lower it to the toy ISA and inspect the fault-free run."""
from bitstorm.model import build_model, golden_run, lower, preset, reference_forward

model = build_model(preset("nano-gpt2"))
program = lower(model, [3, 1, 4], 2)
golden = golden_run(program)
ref = reference_forward(model, [3, 1, 4], 2)

print(f"static instructions: {len(program.instructions())}")
print(f"dynamic instructions: {golden.dyn_count}")
print(f"generated tokens: {golden.tokens} (host reference {ref.tokens})")
print(f"operator snapshots: {len(golden.snapshots)}, "
      f"all equal to the reference: {[s.digest for s in golden.snapshots] == ref.digests}")
print("\ninstruction mix:")
for op, p in sorted(golden.proportions.items(), key=lambda kv: -kv[1])[:10]:
    print(f"  {op:<10} {p:7.3%}")
