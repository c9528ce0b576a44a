"""Client populations, per-round sampling, and sampling statistics.

Rank direction indices are 1-based in the docs and 0-based in arrays: the
entry ``p[i - 1]`` is the coverage of direction ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ranklab.errors import LabError


@dataclass(frozen=True)
class RankConfig:
    levels: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(int(x) for x in self.levels)
        probs = tuple(float(x) for x in self.probs)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probs", probs)
        if not levels or len(levels) != len(probs):
            raise LabError("config", "levels and probs must be non-empty and of equal length")
        if levels[0] < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise LabError("config", f"levels must be strictly increasing positive integers: {levels}")
        if any(p <= 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise LabError("config", f"probs must be positive and sum to 1: {probs}")

    @classmethod
    def uniform(cls, levels) -> "RankConfig":
        levels = tuple(levels)
        return cls(levels, tuple(1.0 / len(levels) for _ in levels))

    @property
    def r_max(self) -> int:
        return self.levels[-1]


@dataclass(frozen=True)
class ClientPopulation:
    """Clients ``0..K-1`` with their LoRA rank and local sample count."""

    ranks: np.ndarray
    samples: np.ndarray
    levels: tuple[int, ...]

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64)
        samples = np.asarray(self.samples, dtype=np.int64)
        ranks.setflags(write=False)
        samples.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "levels", tuple(int(x) for x in self.levels))
        if ranks.ndim != 1 or ranks.size == 0 or samples.shape != ranks.shape:
            raise LabError("population", "ranks and samples must be equal-length 1-D sequences")
        if not set(ranks.tolist()) <= set(self.levels):
            raise LabError("population", "every client rank must be a configured level")
        if self.r_max not in ranks:
            raise LabError("population", "no client holds r_max")
        if np.any(samples < 1):
            raise LabError("population", "sample counts must be positive")

    @property
    def k(self) -> int:
        return int(self.ranks.size)

    @property
    def r_max(self) -> int:
        return self.levels[-1]

    @property
    def r1(self) -> int:
        """Shared rank: the smallest rank actually held by a client."""
        return int(self.ranks.min())

    def with_samples(self, samples) -> "ClientPopulation":
        return ClientPopulation(self.ranks, np.asarray(samples), self.levels)


@dataclass(frozen=True)
class CoverageProfile:
    p: np.ndarray  # p[i-1] = fraction of clients with rank >= i

    @property
    def r_max(self) -> int:
        return int(self.p.size)


@dataclass(frozen=True)
class CollapseForecast:
    q: np.ndarray
    gamma: float
    c0: float
    beta: float
    r1: int
    coverage: CoverageProfile = field(repr=False)


def _level_counts(config: RankConfig, k: int) -> list[int]:
    exact = [round(k * p, 9) for p in config.probs]
    counts = [math.floor(x) for x in exact]
    remainder = k - sum(counts)
    # largest fractional part first; ties go to the higher level
    order = sorted(range(len(counts)), key=lambda j: (-(exact[j] - counts[j]), -j))
    for j in order[:remainder]:
        counts[j] += 1
    if counts[-1] == 0:
        donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
        counts[donor] -= 1
        counts[-1] += 1
    return counts


def assign_ranks(config: RankConfig, k: int, seed: int, samples=None) -> ClientPopulation:
    """Proportional rank assignment followed by a seeded shuffle of client order."""
    if k < len(config.levels):
        raise LabError("population", f"k={k} is smaller than the number of rank levels")
    counts = _level_counts(config, k)
    ranks = np.repeat(np.asarray(config.levels, dtype=np.int64), counts)
    rng = np.random.default_rng(seed)
    ranks = ranks[rng.permutation(k)]
    if samples is None:
        samples = np.ones(k, dtype=np.int64)
    return ClientPopulation(ranks, np.asarray(samples), config.levels)


def coverage(pop: ClientPopulation) -> CoverageProfile:
    idx = np.arange(1, pop.r_max + 1)
    counts = (pop.ranks[None, :] >= idx[:, None]).sum(axis=1)
    return CoverageProfile(counts / pop.k)


def support_counts(pop: ClientPopulation, sampled) -> np.ndarray:
    """N_i for i = 1..r_max: number of sampled clients with rank >= i."""
    ranks = pop.ranks[np.asarray(sampled, dtype=np.intp)]
    hist = np.bincount(ranks, minlength=pop.r_max + 1)
    # clients with rank >= i = sum of hist[i:]
    return np.cumsum(hist[::-1])[::-1][1:]


def sample_round(pop: ClientPopulation, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``m``-subset of client ids without replacement, sorted ascending."""
    if not 1 <= m <= pop.k:
        raise LabError("sample", f"m={m} outside [1, {pop.k}]")
    return np.sort(rng.choice(pop.k, size=m, replace=False))


def sample_rounds(pop: ClientPopulation, m: int, rng: np.random.Generator, trials: int) -> np.ndarray:
    """``trials`` independent uniform ``m``-subsets as a (trials, m) array."""
    if not 1 <= m <= pop.k:
        raise LabError("sample", f"m={m} outside [1, {pop.k}]")
    if m == pop.k:
        return np.tile(np.arange(pop.k), (trials, 1))
    keys = rng.random((trials, pop.k))
    return np.sort(np.argpartition(keys, m - 1, axis=1)[:, :m], axis=1)


def sampled_support_counts(pop: ClientPopulation, subsets: np.ndarray) -> np.ndarray:
    """Batched :func:`support_counts`: (trials, m) subsets -> (trials, r_max) counts."""
    ranks = pop.ranks[subsets]
    out = np.empty((subsets.shape[0], pop.r_max), dtype=np.int64)
    for level_lo, level_hi in _level_spans(pop.levels):
        n = (ranks >= level_hi).sum(axis=1)
        out[:, level_lo - 1:level_hi] = n[:, None]
    return out


def _level_spans(levels):
    prev = 0
    for h in levels:
        yield prev + 1, h
        prev = h


def h_factor(p: float, k: int, m: int) -> float:
    """Second moment of the supporting fraction N/M under hypergeometric sampling."""
    if not (0.0 <= p <= 1.0) or k < 2 or not (1 <= m <= k):
        raise LabError("domain", f"h_factor(p={p}, K={k}, M={m})")
    tau = (k - m) / (m * (k - 1))
    return p * p + tau * p * (1.0 - p)


def forecast(pop: ClientPopulation, m: int, beta: float, e0) -> CollapseForecast:
    e0 = np.asarray(e0, dtype=np.float64)
    if e0.ndim == 0:
        e0 = np.full(pop.r_max, float(e0))
    if e0.shape != (pop.r_max,):
        raise LabError("domain", f"e0 must have length r_max={pop.r_max}")
    if beta <= 0:
        raise LabError("domain", "beta must be positive")
    cov = coverage(pop)
    r1 = pop.r1
    if r1 == pop.r_max:
        raise LabError("no heterogeneity", "all clients share one rank")
    head = float(e0[:r1].sum())
    if head <= 0:
        raise LabError("degenerate", "zero shared-rank energy")
    q = np.array([beta**2 * h_factor(float(p), pop.k, m) for p in cov.p])
    return CollapseForecast(
        q=q,
        gamma=float(q[r1] / q[r1 - 1]),
        c0=float(e0[r1:].sum()) / head,
        beta=float(beta),
        r1=r1,
        coverage=cov,
    )
