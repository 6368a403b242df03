"""Deterministic, cross-platform random streams.

Every stochastic step in the toolkit draws from a xoshiro256** generator
whose state is expanded from a 64-bit seed via splitmix64. Streams are
derived from a base seed plus string/int key parts, so (seed, sample_id)
or (seed, model_id, repeat) name the same stream on any platform and in
any execution order.

Derivation rule: starting from ``x = seed``, each key part updates
``x = mix64(x XOR fnv1a64(utf8(str(part))))`` where mix64 is the
splitmix64 output scrambler; the final x seeds the splitmix64 sequence
producing the four xoshiro256** state words.
"""
from __future__ import annotations

_MASK = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def _splitmix_next(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def mix64(x: int) -> int:
    """One splitmix64 step applied to x; used to fold key parts together."""
    _, z = _splitmix_next(x & _MASK)
    return z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 state expansion."""

    def __init__(self, seed: int):
        state = seed & _MASK
        s = []
        for _ in range(4):
            state, word = _splitmix_next(state)
            s.append(word)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive, without modulo bias."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        limit = ((1 << 64) // span) * span
        while True:
            u = self.next_u64()
            if u < limit:
                return lo + (u % span)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn without replacement from range(n).

        Partial Fisher-Yates over a sparse swap table, so it is O(k) even
        for large n.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from population of {n}")
        swapped: dict[int, int] = {}
        out = []
        for i in range(k):
            j = self.randint(i, n - 1)
            vj = swapped.get(j, j)
            out.append(vj)
            swapped[j] = swapped.get(i, i)
        return out


def derive_stream(seed: int, *parts: str | int) -> Xoshiro256StarStar:
    """Named random stream for (seed, *parts)."""
    x = seed & _MASK
    for part in parts:
        x = mix64(x ^ fnv1a64(str(part).encode("utf-8")))
    return Xoshiro256StarStar(x)
