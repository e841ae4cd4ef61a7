"""SplitMix64 stream and the index samplers built on it.

The algorithms are fixed so that campaigns replay bit-for-bit on any host:

* ``SplitMix64.next()``: state += 0x9E3779B97F4A7C15, then the standard
  xor-shift/multiply finaliser on the new state.
* ``splitmix64(x)``: the first output of a stream whose state starts at x.
* ``below(n)``: rejection sampling.  Draws whose value is under
  ``2**64 mod n`` are discarded, the survivor is reduced modulo n.
* ``floyd(n, k)``: Robert Floyd's k-of-n subset algorithm
  (for j in n-k .. n-1: t = below(j+1); take t unless already taken, else j).
  The result is returned sorted ascending.
"""
MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def _mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(x):
    return _mix((int(x) + GAMMA) & MASK64)


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next(self):
        self.state = (self.state + GAMMA) & MASK64
        return _mix(self.state)

    def below(self, n):
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) % n
        while True:
            r = self.next()
            if r >= threshold:
                return r % n

    def floyd(self, n, k):
        """k distinct integers from [0, n), uniformly, ascending."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        chosen = set()
        for j in range(n - k, n):
            t = self.below(j + 1)
            chosen.add(j if t in chosen else t)
        return sorted(chosen)
