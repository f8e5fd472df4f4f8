"""Small shared helpers: primes and seeded random streams."""
import numpy as np


def is_prime(n):
    n = int(n)
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def primes_up_to(n):
    return [p for p in range(2, int(n) + 1) if is_prime(p)]


def make_rng(seed=None, *keys):
    """Counter-based generator for ``(seed, *keys)``.

    Every (seed, key path) pair names an independent Philox stream, so
    per-trial draws do not depend on evaluation order. An existing
    ``Generator`` passed without keys is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        if not keys:
            return seed
        seed = int(seed.integers(2**63))
    seq = np.random.SeedSequence(0 if seed is None else int(seed),
                                 spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def complex_gaussian(rng, size, scale=1.0):
    """Circularly symmetric complex Gaussian with ``E|z|^2 = scale**2``."""
    z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return z * (scale / np.sqrt(2.0))
