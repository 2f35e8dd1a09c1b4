"""Deterministic random streams.

Every stochastic routine takes a ``Stream``: a (master seed, stream id path)
pair that is turned into an independent Philox generator.  Replicas derive
child streams with :meth:`Stream.child`, so results never depend on the
order in which replicas are executed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

SEED_ENV_VAR = "STRETCHPERC_SEED"
DEFAULT_SEED = 20190521


def default_seed() -> int:
    value = os.environ.get(SEED_ENV_VAR)
    return int(value) if value is not None else DEFAULT_SEED


@dataclass(frozen=True)
class Stream:
    """A named, splittable random stream.

    Parameters
    ----------
    seed : int
        Master seed of the run.
    path : tuple of int
        Stream id path below the master seed.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *ids: int) -> "Stream":
        return Stream(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def __str__(self) -> str:
        return f"{self.seed}:" + ".".join(str(i) for i in self.path)


def as_generator(stream) -> np.random.Generator:
    """Accept a Stream, a Generator, an int seed or None."""
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, Stream):
        return stream.generator()
    if stream is None:
        return Stream(default_seed()).generator()
    return Stream(int(stream)).generator()


def as_stream(stream) -> Stream:
    if isinstance(stream, Stream):
        return stream
    if stream is None:
        return Stream(default_seed())
    if isinstance(stream, np.random.Generator):
        raise TypeError("a Stream (not a Generator) is required to derive replica streams")
    return Stream(int(stream))
