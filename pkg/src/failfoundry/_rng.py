"""Small portable PRNG used where results must be reproducible bit-for-bit
across platforms (undersampling, fold assignment)."""

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator over unsigned 64-bit integers."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randbelow(self, n):
        """Unbiased integer in ``[0, n)`` by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n


def partial_shuffle(items, k, seed):
    """Return ``k`` items drawn without replacement by a partial Fisher-Yates
    shuffle. The order of the returned items is the draw order."""
    pool = list(items)
    n = len(pool)
    k = min(k, n)
    rng = SplitMix64(seed)
    for i in range(k):
        j = i + rng.randbelow(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def derive_seed(seed, *counters):
    """Derive a child seed from ``seed`` and integer counters."""
    s = int(seed) & _MASK64
    for c in counters:
        s = SplitMix64(s ^ ((int(c) * 0xD1B54A32D192ED03) & _MASK64)).next_u64()
    return s & 0x7FFFFFFFFFFFFFFF
