"""Counter-based splitmix64 generator.

Every random quantity in the package (weight init, shuffles, noise, sub-seeds)
comes from this generator so that results are reproducible bit for bit and
can be re-derived by any other implementation.

Algorithm, with all arithmetic modulo 2**64::

    state_k = seed + k * 0x9E3779B97F4A7C15        (k = 1, 2, 3, ...)
    z = state_k
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out_k = z ^ (z >> 31)

Derived draws:

* uniform double in [0, 1): ``(out >> 11) * 2**-53``
* integer in [0, n]: ``out % (n + 1)``
* standard normal: Box-Muller on consecutive pairs (u1, u2) of uniforms,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; one normal per pair.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z):
    """Splitmix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful stream over the splitmix64 sequence for ``seed``."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self, n):
        ks = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + ks * GOLDEN
        self.state = (self.state + n * int(GOLDEN)) & _MASK
        return mix64(states)

    def uniform(self, n):
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n):
        u = self.uniform(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def integers_upto(self, bounds):
        """One draw in [0, b] for each inclusive upper bound ``b``."""
        bounds = np.asarray(bounds, dtype=np.uint64)
        return (self.next_u64(len(bounds)) % (bounds + np.uint64(1))).astype(np.int64)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``.

        Walks i = n-1 .. 1, swapping position i with j drawn in [0, i].
        """
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        js = self.integers_upto(np.arange(n - 1, 0, -1))
        for i, j in zip(range(n - 1, 0, -1), js):
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def derive_seed(seed, ordinal):
    """Sub-seed for item ``ordinal`` of a stream rooted at ``seed``."""
    with np.errstate(over="ignore"):
        z = np.uint64(int(seed) & _MASK) + np.uint64(ordinal + 1) * GOLDEN
    return int(mix64(np.array([z]))[0])
