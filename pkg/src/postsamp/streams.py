"""Reproducible random streams for partitionable Monte Carlo work.

A :class:`SeededStream` is a value object: a 64-bit seed plus a path of
labels (ints or strings).  The underlying bit generator is counter-based
(Philox), keyed by a digest of ``(seed, path)``, so

* the same ``(seed, path)`` always replays the same variate sequence,
  across runs, processes, and thread counts;
* distinct paths give statistically independent sequences.

Code that wants to parallelize should split a stream with :meth:`child`
(one child per partition) rather than sharing a generator, so results do
not depend on scheduling.  Streams are immutable; calling
:meth:`generator` twice restarts the same sequence.

Gaussian variates come from numpy's ziggurat implementation, which is
fixed for a given numpy build.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

__all__ = ["SeededStream"]

_DOMAIN = b"postsamp.stream.v1"


def _encode_component(component) -> bytes:
    """Serialize one path component to a stable, unambiguous byte string."""
    if isinstance(component, (bool, np.bool_)):
        raise TypeError("stream path components must be int or str, not bool")
    if isinstance(component, (int, np.integer)):
        return b"i" + struct.pack("<q", int(component))
    if isinstance(component, str):
        raw = component.encode("utf-8")
        return b"s" + struct.pack("<I", len(raw)) + raw
    raise TypeError(
        f"stream path components must be int or str, got {type(component).__name__}"
    )


@dataclass(frozen=True)
class SeededStream:
    """Immutable handle on one reproducible random stream.

    Parameters
    ----------
    seed:
        Unsigned 64-bit experiment seed.
    path:
        Tuple of labels locating this stream below the seed, e.g.
        ``("recovery", context_index, replicate_index)``.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self) -> None:
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        object.__setattr__(self, "seed", seed)
        path = tuple(self.path)
        for component in path:
            _encode_component(component)  # validate eagerly
        object.__setattr__(self, "path", path)

    def child(self, *components) -> "SeededStream":
        """Return the stream at ``path + components`` under the same seed."""
        return SeededStream(self.seed, self.path + components)

    def key(self) -> int:
        """128-bit Philox key derived from (seed, path) via SHA-256."""
        digest = hashlib.sha256()
        digest.update(_DOMAIN)
        digest.update(struct.pack("<Q", self.seed))
        for component in self.path:
            digest.update(_encode_component(component))
        return int.from_bytes(digest.digest()[:16], "little")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.key()))
