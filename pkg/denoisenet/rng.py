"""Counter-based random numbers with a fixed, documented algorithm.

Every draw is a pure function of ``(key, counter)``, so two implementations
that follow the recipe below produce identical noise fields and patch
sequences:

  key      = mix64(seed * 0x9E3779B97F4A7C15 + stream * 0xD1B54A32D192ED03)
  word(i)  = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)          (mod 2**64)
  mix64(z) = SplitMix64 finalizer:
               z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
               z = (z ^ (z >> 27)) * 0x94D049BB133111EB
               z =  z ^ (z >> 31)
  uniform  = ((word >> 11) + 0.5) * 2**-53                      in (0, 1)

Normals use the basic Box-Muller form on consecutive uniform pairs
(u1, u2) = (u[2k], u[2k+1]):

  z[2k]   = sqrt(-2 ln u1) * cos(2 pi u2)
  z[2k+1] = sqrt(-2 ln u1) * sin(2 pi u2)

An odd request still consumes a whole pair; the trailing sine value is
dropped.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_MUL = 0xD1B54A32D192ED03
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = 0xFFFFFFFFFFFFFFFF

# Named streams keep independent consumers of one seed apart.
STREAM_NOISE = 1
STREAM_TRAIN = 2
STREAM_SPLIT = 3
STREAM_INIT = 4
STREAM_SYNTH = 5


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_key(seed: int, stream: int = 0) -> int:
    raw = (int(seed) * int(_GOLDEN) + int(stream) * _STREAM_MUL) & _MASK
    return int(mix64(np.array([raw], dtype=np.uint64))[0])


class CounterRNG:
    """Stateful cursor over the counter-mode stream of one (seed, stream) key."""

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = derive_key(seed, stream)
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"CounterRNG(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def words(self, n: int) -> np.ndarray:
        index = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return mix64(np.uint64(self.key) + index * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        bits = self.words(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * (2.0 ** -53)

    def random(self) -> float:
        return float(self.uniform(1)[0])

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, high: int, n: int | None = None):
        """Uniform integers in ``[0, high)``; a scalar when ``n`` is None."""
        if high < 1:
            raise ValueError(f"high must be >= 1, got {high}")
        count = 1 if n is None else n
        values = np.minimum(np.floor(self.uniform(count) * high), high - 1).astype(np.int64)
        return int(values[0]) if n is None else values

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
