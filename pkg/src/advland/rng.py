"""Reproducible named random streams.

Every stochastic component takes an explicit stream; a stream is addressed by
(root seed, derivation path) so reruns and parallel evaluation orders cannot
change the numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    """A random stream derived from a root seed and a slash-separated path.

    The same ``(seed, path)`` pair always yields the same generator; distinct
    paths yield independent generators (the PCG64 seed is a SHA-256 digest of
    the pair).
    """

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: str = ""):
        self.seed = int(seed)
        self.path = path

    def child(self, name) -> "RngStream":
        name = str(name)
        return RngStream(self.seed, f"{self.path}/{name}" if self.path else name)

    def generator(self) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{self.path}".encode()).digest()
        return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path!r})"
