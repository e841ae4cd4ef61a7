"""Why one bit can matter: flipping the top exponent bit of a small float."""
import numpy as np

from bitstorm.isa import flip_bit


def as_float(word):
    return float(np.uint32(word).view(np.float32))


word = 0x3E4CCCCD          # 0.2f
print(f"{'bit':>4} {'word':>10} {'value':>14} {'ratio':>10}")
for bit in (0, 8, 16, 22, 23, 29, 30, 31):
    flipped = flip_bit(word, bit)
    ratio = as_float(flipped) / as_float(word)
    print(f"{bit:>4} {flipped:#010x} {as_float(flipped):>14.6g} {ratio:>10.3g}")
