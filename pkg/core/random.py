import numpy as np


def make_rng(seed=None):
    """
    Build the root random stream for a run.

    Args:
        seed (int, optional): Seed. ``None`` draws fresh OS entropy.
    """
    return np.random.default_rng(seed)


def spawn(rng, n):
    """Return ``n`` independent child streams of ``rng``."""
    return rng.spawn(n)


def generator_state(rng):
    """JSON-friendly snapshot of a generator's bit-generator state."""
    return rng.bit_generator.state


def restore_generator(state):
    """Rebuild a generator from ``generator_state`` output."""
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
