"""Uniform random streams with deterministic substream spawning.

Every sampler in the package draws plain uniforms from one of these
stream objects, so seeding policy lives in exactly one place.  Parallel
work splits a root seed into independent child streams through
``numpy``'s ``SeedSequence`` spawning; chunk results are then combined
in fixed chunk order, which makes multi-threaded runs reproducible.

Uniforms are returned on the half-open interval (0, 1]: the lower
endpoint is excluded so logarithms of uniforms are always finite.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import StreamExhaustedError


class UniformStream:
    """Interface: a source of i.i.d. uniforms on (0, 1]."""

    def next_uniform(self) -> float:
        raise NotImplementedError

    def uniforms(self, n: int) -> np.ndarray:
        """Return ``n`` uniforms as a 1-d array."""
        return np.array([self.next_uniform() for _ in range(int(n))])


class PcgStream(UniformStream):
    """PCG64-backed uniform stream.

    Parameters
    ----------
    seed : int or numpy.random.SeedSequence
        Root entropy.  Child streams created by :meth:`spawn` are
        statistically independent of the parent and of each other.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self.seed = self._seq.entropy
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def next_uniform(self) -> float:
        return 1.0 - self._gen.random()

    def uniforms(self, n: int) -> np.ndarray:
        # Generator.random() covers [0, 1); flip to (0, 1].
        return 1.0 - self._gen.random(int(n))

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, n: int) -> list["PcgStream"]:
        """Create ``n`` independent child streams."""
        return [PcgStream(s) for s in self._seq.spawn(int(n))]


class SequenceStream(UniformStream):
    """Replays a fixed list of uniforms; used for hand-traced tests."""

    def __init__(self, values: Sequence[float]):
        self._values = [float(v) for v in values]
        self._pos = 0

    def next_uniform(self) -> float:
        if self._pos >= len(self._values):
            raise StreamExhaustedError(
                "fixed uniform sequence exhausted after "
                f"{len(self._values)} draws"
            )
        v = self._values[self._pos]
        self._pos += 1
        return v

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.next_uniform() for _ in range(int(n))])

    @property
    def remaining(self) -> int:
        return len(self._values) - self._pos


def spawn_streams(seed: int, n: int) -> list[PcgStream]:
    """Split ``seed`` into ``n`` independent child streams.

    Chunked simulations give chunk ``i`` the ``i``-th child, and always
    combine chunk outputs in index order, so the result is invariant to
    how chunks are scheduled across threads.
    """
    root = np.random.SeedSequence(int(seed))
    return [PcgStream(s) for s in root.spawn(int(n))]
