"""Portable 64-bit PRNG used for dataset shuffling.

xoshiro256** seeded through splitmix64, implemented with plain Python ints so
the stream is identical on every platform and numpy version.
"""

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** generator.

    >>> Xoshiro256(0).next_u64() == Xoshiro256(0).next_u64()
    True
    """

    def __init__(self, seed: int):
        sm = seed & _MASK
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK + 1 - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def permutation(n: int, seed: int) -> list[int]:
    idx = list(range(n))
    Xoshiro256(seed).shuffle(idx)
    return idx


def derive_seed(seed: int, stream: int) -> int:
    """Child seed for an independent sub-task (Monte-Carlo trial, CV fold, ...)."""
    _, a = splitmix64((seed & _MASK) ^ ((stream * 0xD1B54A32D192ED03) & _MASK))
    return a
