"""
Deterministic randomness for every generation stage.

A master seed fans out into named substreams. Each substream is a NumPy
``Generator`` over the Philox4x64-10 counter-based bit generator, keyed by a
128-bit BLAKE2b digest of the seed and the stream lineage::

    digest = blake2b(b"lafs-stream-v1"
                     || seed as u64 little-endian
                     || for each (label, index):
                            len(label) as u16 LE || label UTF-8 || index as u64 LE,
                     digest_size=16)
    key    = int.from_bytes(digest, "little")
    stream = Generator(Philox(key=key))          # counter starts at 0

Streams depend only on (seed, lineage), never on creation order or thread, so
per-entity generation can run in any order or in parallel.
"""

import hashlib
import logging
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from src.errors import InvalidArgumentError

rng_logger = logging.getLogger('lafs.randomness')

STREAM_DOMAIN = b"lafs-stream-v1"
MASK64 = (1 << 64) - 1

LineageStep = Tuple[str, int]
Lineage = Tuple[LineageStep, ...]


def lineage_key(seed: int, lineage: Sequence[LineageStep]) -> int:
    """Hash (seed, lineage) into a 128-bit Philox key"""
    if not 0 <= int(seed) <= MASK64:
        raise InvalidArgumentError(f"seed must fit in 64 unsigned bits, got {seed}")
    digest = hashlib.blake2b(digest_size=16)
    digest.update(STREAM_DOMAIN)
    digest.update(int(seed).to_bytes(8, 'little'))
    for label, index in lineage:
        encoded = label.encode('utf-8')
        if len(encoded) > 0xFFFF:
            raise InvalidArgumentError("lineage label too long")
        if index < 0 or index > MASK64:
            raise InvalidArgumentError(f"lineage index must be an unsigned 64-bit value, got {index}")
        digest.update(len(encoded).to_bytes(2, 'little'))
        digest.update(encoded)
        digest.update(int(index).to_bytes(8, 'little'))
    return int.from_bytes(digest.digest(), 'little')


class RandomStream:
    """Single-owner random substream identified by its lineage"""

    __slots__ = ('seed', 'lineage', 'generator')

    def __init__(self, seed: int, lineage: Iterable[LineageStep]):
        self.seed = int(seed)
        self.lineage: Lineage = tuple((str(label), int(index)) for label, index in lineage)
        self.generator = np.random.Generator(np.random.Philox(key=lineage_key(self.seed, self.lineage)))

    def __repr__(self):
        path = '/'.join(f"{label}:{index}" for label, index in self.lineage)
        return f'<RandomStream seed={self.seed} {path}>'

    def normal(self, mu: float, sigma: float) -> float:
        return draw_normal(self, mu, sigma)

    def normals(self, mus, sigmas) -> np.ndarray:
        """
        One normal draw per element of the broadcast (mus, sigmas) arrays

        Cells with sigma == 0 come back as exactly mu; the stream advances by
        one standard normal per cell either way.
        """
        mus = np.asarray(mus, dtype=np.float64)
        sigmas = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), mus.shape)
        if np.any(sigmas < 0):
            raise InvalidArgumentError("sigma must be ≥ 0")
        z = self.generator.standard_normal(mus.shape)
        return np.where(sigmas == 0, mus, mus + sigmas * z)

    def bernoulli(self, p: float) -> int:
        return draw_bernoulli(self, p)

    def bernoullis(self, probs) -> np.ndarray:
        """One Bernoulli trial per probability, as an int8 array of 0/1"""
        probs = np.asarray(probs, dtype=np.float64)
        if np.any((probs < 0) | (probs > 1)):
            raise InvalidArgumentError("probability must lie in [0,1]")
        return (self.generator.random(probs.shape) < probs).astype(np.int8)

    def uniform_subset(self, population: int, count: int) -> np.ndarray:
        return draw_uniform_subset(self, population, count)


class RandomRoot:
    """Factory for substreams of one master seed"""

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= MASK64:
            raise InvalidArgumentError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)

    def stream(self, *lineage: LineageStep) -> RandomStream:
        return derive_stream(self.seed, lineage)

    def __repr__(self):
        return f'<RandomRoot seed={self.seed}>'


def derive_stream(seed: int, lineage: Iterable[LineageStep]) -> RandomStream:
    """
    Create the substream for (seed, lineage)

    Args:
        seed: 64-bit unsigned master seed
        lineage: ordered (label, index) path, e.g. [("bias", 3), ("item", 17)]

    Returns:
        A fresh RandomStream positioned at the start of its sequence
    """
    return RandomStream(seed, lineage)


def draw_normal(stream: RandomStream, mu: float, sigma: float) -> float:
    """Draw from Normal(mu, sigma); sigma == 0 yields exactly mu"""
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be ≥ 0, got {sigma}")
    z = stream.generator.standard_normal()
    if sigma == 0:
        return float(mu)
    return float(mu + sigma * z)


def draw_bernoulli(stream: RandomStream, p: float) -> int:
    """Return 1 with probability p, else 0"""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"probability must lie in [0,1], got {p}")
    return int(stream.generator.random() < p)


def draw_uniform_subset(stream: RandomStream, population: int, count: int) -> np.ndarray:
    """
    Sample ``count`` distinct indices from ``range(population)``

    Every subset of that size is equally likely. The result is sorted
    ascending so downstream scoring sees a canonical order.
    """
    if population < 0 or count < 0:
        raise InvalidArgumentError("population and count must be non-negative")
    if count > population:
        raise InvalidArgumentError(f"cannot draw {count} distinct items from {population}")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    chosen = stream.generator.choice(population, size=count, replace=False)
    return np.sort(chosen.astype(np.int64))


Seedish = Union[int, RandomRoot]


def as_root(seed_or_root: Seedish) -> RandomRoot:
    """Accept either a bare seed or an existing RandomRoot"""
    if isinstance(seed_or_root, RandomRoot):
        return seed_or_root
    return RandomRoot(seed_or_root)
