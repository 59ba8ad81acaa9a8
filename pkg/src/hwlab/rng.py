"""Counter-based random streams keyed by ``(seed, stream, chunk)``.

Every batch is cut into fixed-size chunks. Chunk ``j`` of stream ``s`` always
draws from ``Philox`` keyed by ``SeedSequence(seed, spawn_key=(s, j))``, so the
output does not depend on how chunks are scheduled over threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

CHUNK = 1 << 16

_threads = 1


def set_threads(n: int) -> None:
    """Bound the worker pool used by :func:`map_chunks`."""
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


@dataclass(frozen=True)
class SeedSpec:
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if int(self.stream) < 0:
            raise ValueError("stream must be nonnegative")

    def child(self, offset: int) -> "SeedSpec":
        """A distinct stream derived from this one (used for independent halves)."""
        return SeedSpec(self.seed, self.stream * 1009 + 1 + int(offset))

    def generator(self, chunk: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(chunk)))
        return np.random.Generator(np.random.Philox(ss))


def as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    if seed is None:
        return SeedSpec()
    if isinstance(seed, (tuple, list)):
        return SeedSpec(*seed)
    return SeedSpec(int(seed))


def chunk_sizes(n: int, chunk: int = CHUNK) -> list[int]:
    n = int(n)
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn, n: int, seed: SeedSpec, chunk: int = CHUNK) -> list:
    """Call ``fn(rng, size, index)`` on every chunk; results come back in chunk order."""
    sizes = chunk_sizes(n, chunk)
    jobs = [(seed.generator(j), size, j) for j, size in enumerate(sizes)]
    if _threads == 1 or len(jobs) == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def pairwise_sum(values) -> float:
    """Fixed binary-tree reduction of per-chunk partial sums."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
