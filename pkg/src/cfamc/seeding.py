"""Counter-based 64-bit seed derivation.

Child seeds are produced by folding each integer component into a running
state with the SplitMix64 finalizer::

    state = mix64(master ^ GOLDEN)
    for c in components:
        state = mix64(state ^ mix64(c + GOLDEN))

where ``mix64`` is the SplitMix64 output function. The derivation is
stateless, so any worker can compute the seed of any frame independently.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

# role tags keep seed streams of different consumers disjoint
ROLE_SYMBOLS = 1
ROLE_PLAN = 2
ROLE_NOISE = 3
ROLE_SPLIT = 4
ROLE_SHUFFLE = 5
ROLE_INIT = 6
ROLE_MC = 7


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *components: int) -> int:
    """Return a 64-bit child seed for ``(master, *components)``."""
    state = mix64((int(master) ^ GOLDEN) & MASK64)
    for c in components:
        state = mix64(state ^ mix64((int(c) + GOLDEN) & MASK64))
    return state
