"""Counter-based random streams keyed by integer tuples.

Every source of randomness in the package is addressed by a key: a tuple
of (possibly negative) integers naming a position in the recursive
estimator tree, plus a 64-bit counter within the stream.  Distinct keys
give statistically independent streams, and the same (key, counter) pair
reproduces the same draws on any machine and under any worker layout,
which is what makes the estimators bit-reproducible.

Implementation: the key is zigzag-encoded into a numpy ``SeedSequence``
spawn key over a root entropy value, feeding a Philox counter-based bit
generator.  Philox supports O(1) skip-ahead, which realizes the counter
field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "zigzag"]


def zigzag(k: int) -> int:
    """Map a signed integer to a unique nonnegative one.

    0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ...  SeedSequence spawn keys
    must be nonnegative, while tree keys carry signed level tags.
    """
    k = int(k)
    return 2 * k if k >= 0 else -2 * k - 1


@dataclass(frozen=True)
class RngStream:
    """A value-type handle on one keyed random stream.

    Parameters
    ----------
    entropy : int
        Root seed shared by a whole experiment.
    key : tuple of int
        Position in the estimator tree; empty for the root.
    counter : int
        Skip-ahead offset (in generator draws) within the stream.
    """

    entropy: int
    key: tuple = ()
    counter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "key", tuple(int(k) for k in self.key))
        if self.counter < 0:
            raise ValueError("counter must be nonnegative")

    def child(self, *parts: int) -> "RngStream":
        """Derive the stream whose key appends `parts`, counter reset."""
        return RngStream(self.entropy, self.key + tuple(int(p) for p in parts))

    def advanced(self, delta: int) -> "RngStream":
        """Same key, counter moved forward by `delta` draws."""
        return RngStream(self.entropy, self.key, self.counter + int(delta))

    def generator(self) -> np.random.Generator:
        """Materialize the stream as a numpy Generator.

        Each call returns a fresh generator positioned at `counter`;
        draws from one returned generator do not affect another.
        """
        ss = np.random.SeedSequence(
            entropy=self.entropy, spawn_key=tuple(zigzag(k) for k in self.key)
        )
        bg = np.random.Philox(ss)
        if self.counter:
            bg.advance(self.counter)
        return np.random.Generator(bg)
