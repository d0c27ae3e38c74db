"""Counter-based random streams.

Uniform variates are addressed by position in a Philox stream keyed by
``(seed, stream)``. Trajectory ``i`` of an ensemble owns the counter block
starting at ``i * ceil(n_steps / 4)`` (each Philox counter yields four 64-bit
words, one per double), so any contiguous slice of trajectories can be drawn
independently and the result does not depend on how work is split.
"""

import numpy as np

UNBIASED_STREAM = 0
BIASED_STREAM = 1
SSE_STREAM = 2


def _generator(seed, stream, block):
    bitgen = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64),
                              counter=np.array([block, 0, 0, 0], dtype=np.uint64))
    return np.random.Generator(bitgen)


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


class TrajectoryStreams:
    """Per-trajectory uniform streams for ``n_steps``-step trajectories."""

    def __init__(self, seed, stream=UNBIASED_STREAM):
        self.seed = check_seed(seed)
        self.stream = int(stream)

    def uniforms(self, start, stop, n_steps):
        """Uniforms for trajectories ``start..stop-1``, shape ``(stop-start, n_steps)``."""
        blocks = -(-n_steps // 4)
        count = stop - start
        if count <= 0:
            return np.empty((0, n_steps))
        gen = _generator(self.seed, self.stream, start * blocks)
        return gen.random(count * blocks * 4).reshape(count, blocks * 4)[:, :n_steps]


def step_uniforms(seed, stream, step, count):
    """Uniforms for all ``count`` trajectories at time step ``step`` (step-major addressing)."""
    blocks = -(-count // 4)
    return _generator(check_seed(seed), stream, step * blocks).random(count)
