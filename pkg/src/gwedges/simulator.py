"""Tree realizations, edge censuses and replicate farms.

Edges are particle lifespans: a branch event with a single child still ends
the parent's edge.  Pendant edges belong to particles alive at the horizon
(their length is censored there); every other edge is interior.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .model import BirthDeathParams, ModelParams, as_model
from .rng import ReplicateSeed, seed_to_u64

DEFAULT_PARTICLE_CAP = 10_000_000
CHUNK_SIZE = 256

DUMP_HEADER = ("id", "parent_id", "birth_time", "end_time", "censored", "offspring_count")


class Overflow(RuntimeError):
    """A replicate would create more particles than the configured cap."""


class EdgeClass(str, enum.Enum):
    PENDANT = "pendant"
    INTERIOR = "interior"
    ALL = "all"

    @property
    def index(self) -> int:
        return _CLASS_INDEX[self]


_CLASS_INDEX = {EdgeClass.PENDANT: 0, EdgeClass.INTERIOR: 1, EdgeClass.ALL: 2}
EDGE_CLASSES = tuple(EdgeClass)


@dataclass(frozen=True)
class EdgeRecord:
    id: int
    parent_id: int | None
    birth_time: float
    end_time: float
    censored: bool
    offspring_count: int

    @property
    def length(self) -> float:
        return self.end_time - self.birth_time

    @property
    def pendant(self) -> bool:
        return self.censored


@dataclass(frozen=True, eq=False)
class SimTree:
    """Censused realization of the tree up to ``horizon_t``.

    Edge data is columnar; ``parent`` is -1 for the root.  Ids are row
    indices, in queue order (parents before children).
    """

    horizon_t: float
    parent: np.ndarray
    birth_time: np.ndarray
    end_time: np.ndarray
    censored: np.ndarray
    offspring_count: np.ndarray
    growth_rate: float
    seed: ReplicateSeed | None = None

    n_alive: int = field(init=False)
    martingale_value: float = field(init=False)

    def __post_init__(self):
        for name in ("parent", "birth_time", "end_time", "censored", "offspring_count"):
            getattr(self, name).setflags(write=False)
        n_alive = int(np.count_nonzero(self.censored))
        object.__setattr__(self, "n_alive", n_alive)
        object.__setattr__(
            self, "martingale_value", math.exp(-self.growth_rate * self.horizon_t) * n_alive
        )

    @property
    def survived(self) -> bool:
        return self.n_alive > 0

    @property
    def n_edges(self) -> int:
        return len(self.parent)

    @property
    def lengths(self) -> np.ndarray:
        return self.end_time - self.birth_time

    @property
    def edges(self) -> list[EdgeRecord]:
        return [self.edge(i) for i in range(self.n_edges)]

    def edge(self, i: int) -> EdgeRecord:
        p = int(self.parent[i])
        return EdgeRecord(
            i,
            None if p < 0 else p,
            float(self.birth_time[i]),
            float(self.end_time[i]),
            bool(self.censored[i]),
            int(self.offspring_count[i]),
        )

    def snapshot(self, s: float) -> SimTree:
        """The tree as it stood at time ``s <= horizon_t``, re-censored at ``s``.

        A particle belongs to the snapshot iff it was born by ``s``; it is
        pendant iff it was still alive at ``s``.
        """
        if not 0.0 <= s <= self.horizon_t:
            raise ValueError(f"snapshot time {s} outside [0, {self.horizon_t}]")
        keep = self.birth_time <= s
        cens = self.censored[keep] | (self.end_time[keep] > s)
        return SimTree(
            horizon_t=float(s),
            parent=self.parent[keep].copy(),
            birth_time=self.birth_time[keep].copy(),
            end_time=np.where(cens, s, self.end_time[keep]),
            censored=cens,
            offspring_count=np.where(cens, 0, self.offspring_count[keep]),
            growth_rate=self.growth_rate,
            seed=self.seed,
        )

    def write_dump(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DUMP_HEADER)
            for i in range(self.n_edges):
                p = int(self.parent[i])
                w.writerow(
                    (
                        i,
                        "" if p < 0 else p,
                        f"{self.birth_time[i]:.17g}",
                        f"{self.end_time[i]:.17g}",
                        "true" if self.censored[i] else "false",
                        int(self.offspring_count[i]),
                    )
                )


def read_dump(path: str | Path, horizon_t: float, growth_rate: float = 0.0) -> SimTree:
    """Load a tree written by :meth:`SimTree.write_dump`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != DUMP_HEADER:
        raise ValueError(f"{path}: not an edge dump (bad header)")
    body = rows[1:]
    ids = [int(r[0]) for r in body]
    if ids != list(range(len(body))):
        raise ValueError(f"{path}: edge ids must be 0..n-1 in order")
    return SimTree(
        horizon_t=float(horizon_t),
        parent=np.array([int(r[1]) if r[1] else -1 for r in body], dtype=np.int64),
        birth_time=np.array([float(r[2]) for r in body]),
        end_time=np.array([float(r[3]) for r in body]),
        censored=np.array([r[4] == "true" for r in body], dtype=bool),
        offspring_count=np.array([int(r[5]) for r in body], dtype=np.int64),
        growth_rate=growth_rate,
    )


def simulate_tree(
    params: ModelParams | BirthDeathParams,
    t: float,
    seed: ReplicateSeed | int,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
) -> SimTree:
    """Simulate the tree to horizon ``t``; deterministic in ``(params, t, seed)``."""
    params = as_model(params)
    if not (t >= 0.0 and math.isfinite(t)):
        raise ValueError("horizon t must be finite and nonnegative")
    if particle_cap < 1:
        raise ValueError("particle_cap must be >= 1")
    if not isinstance(seed, ReplicateSeed):
        seed = ReplicateSeed(int(seed))
    n, parent, birth, end, cens, kids = _kernels.simulate_records(
        params.beta, params.offspring.cdf, seed.key(), float(t), int(particle_cap)
    )
    if n == _kernels.OVERFLOW:
        raise Overflow(
            f"replicate {seed.replicate} exceeded particle_cap={particle_cap} before t={t}"
        )
    return SimTree(float(t), parent, birth, end, cens, kids, params.growth_rate, seed)


@dataclass(frozen=True, eq=False)
class EdgeCensus:
    thresholds: np.ndarray
    pendant_counts: np.ndarray
    interior_counts: np.ndarray
    all_counts: np.ndarray
    pendant_lengths_desc: np.ndarray
    interior_lengths_desc: np.ndarray
    all_lengths_desc: np.ndarray

    def counts(self, edge_class: EdgeClass | str) -> np.ndarray:
        return getattr(self, f"{EdgeClass(edge_class).value}_counts")

    def lengths_desc(self, edge_class: EdgeClass | str) -> np.ndarray:
        return getattr(self, f"{EdgeClass(edge_class).value}_lengths_desc")


def _count_at_least(sorted_asc: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return len(sorted_asc) - np.searchsorted(sorted_asc, thresholds, side="left")


def census(tree: SimTree, thresholds) -> EdgeCensus:
    """Counts of edges of length >= l per class for each threshold l."""
    thr = np.sort(np.atleast_1d(np.asarray(thresholds, dtype=np.float64)))
    if thr.size == 0:
        raise ValueError("census needs at least one threshold")
    lengths = tree.lengths
    pend = np.sort(lengths[tree.censored])
    inter = np.sort(lengths[~tree.censored])
    every = np.sort(lengths)
    return EdgeCensus(
        thresholds=thr,
        pendant_counts=_count_at_least(pend, thr),
        interior_counts=_count_at_least(inter, thr),
        all_counts=_count_at_least(every, thr),
        pendant_lengths_desc=pend[::-1].copy(),
        interior_lengths_desc=inter[::-1].copy(),
        all_lengths_desc=every[::-1].copy(),
    )


def kth_longest(c: EdgeCensus, edge_class: EdgeClass | str, k: int) -> float | None:
    """Length of the k-th longest edge of the class; ties take consecutive ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    desc = c.lengths_desc(edge_class)
    return float(desc[k - 1]) if k <= len(desc) else None


@dataclass(frozen=True, eq=False)
class BatchCensus:
    """Per-replicate census of a replicate farm.

    ``alive[r, g]`` is the population at ``times[g]``; ``counts[r, g, c, j]``
    the number of class-``c`` edges of length >= ``thresholds[j]``;
    ``top[r, g, c, i]`` the (i+1)-th longest class-``c`` length, NaN when
    fewer than i+1 such edges exist.
    """

    times: np.ndarray
    thresholds: np.ndarray
    alive: np.ndarray
    counts: np.ndarray
    top: np.ndarray
    particles: np.ndarray
    master_seed: int

    @property
    def replicates(self) -> int:
        return self.alive.shape[0]


def simulate_batch(
    params: ModelParams | BirthDeathParams,
    times,
    replicates: int,
    master_seed: int,
    thresholds=(),
    kmax: int = 0,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
    threads: int = 1,
) -> BatchCensus:
    """Simulate ``replicates`` independent trees and census each on the fly.

    Replicate ``r`` is the same realization :func:`simulate_tree` returns for
    ``ReplicateSeed(master_seed, r)``.  Chunking is fixed, so results do not
    depend on ``threads``.
    """
    params = as_model(params)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=np.float64))
    if times.size == 0 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("snapshot times must be nonempty, nonnegative and ascending")
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    G, L, K = len(times), len(thresholds), int(kmax)
    alive = np.zeros((replicates, G), np.int64)
    counts = np.zeros((replicates, G * 3 * L), np.int64)
    top = np.full((replicates, G * 3 * K), -1.0)
    created = np.zeros(replicates, np.int64)
    abort = np.zeros(1, np.int64)
    seed = seed_to_u64(master_seed)
    cdf = params.offspring.cdf

    def work(lo: int) -> None:
        hi = min(lo + CHUNK_SIZE, replicates)
        _kernels.census_chunk(
            params.beta, cdf, seed, lo, hi, times, thresholds, K, int(particle_cap),
            abort, alive[lo:hi], counts[lo:hi], top[lo:hi], created[lo:hi],
        )

    starts = range(0, replicates, CHUNK_SIZE)
    if threads <= 1:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))

    if abort[0]:
        bad = np.flatnonzero(created == _kernels.OVERFLOW)
        raise Overflow(
            f"replicate {int(bad[0])} exceeded particle_cap={particle_cap} before t={times[-1]}"
        )
    top[top < 0.0] = np.nan
    return BatchCensus(
        times=times,
        thresholds=thresholds,
        alive=alive,
        counts=counts.reshape(replicates, G, 3, L),
        top=top.reshape(replicates, G, 3, K),
        particles=created,
        master_seed=int(master_seed),
    )
