"""Idealized fixed-basis spectrum dynamics and the rank-collapse oracles.

Under a fixed singular basis with direction-preserving client updates, the
global spectrum evolves by a per-direction multiplier each round:

* FedAvg: ``sigma_i <- beta * (N_i / M) * sigma_i`` where ``N_i`` counts sampled
  clients holding direction ``i``;
* rank-partitioned aggregation: ``sigma_i <- beta * sigma_i`` while the
  partition containing ``i`` has a contributor, else ``0`` (or the old value in
  carry-over mode).

Expected energies then follow ``e_i(t) = e_i(0) * q_i**t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ranklab.aggregate import PartitionPlan
from ranklab.errors import LabError
from ranklab.population import (
    ClientPopulation,
    CollapseForecast,
    CoverageProfile,
    h_factor,
    sample_rounds,
    sampled_support_counts,
    support_counts,
)


@dataclass(frozen=True)
class SpectrumState:
    sigma: np.ndarray
    round: int = 0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.ndim != 1 or not np.all(np.isfinite(sigma)) or np.any(sigma < 0):
            raise LabError("numeric", "sigma must be a finite non-negative vector")
        object.__setattr__(self, "sigma", sigma)

    @property
    def energies(self) -> np.ndarray:
        return self.sigma**2


@dataclass(frozen=True)
class EnergyTrace:
    """Per-round energies with cumulative sums and ratios at the tracked ranks."""

    energies: np.ndarray  # rounds x r_max
    ranks: tuple[int, ...]
    r1: int

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.energies, axis=1)

    @property
    def rho(self) -> dict[int, np.ndarray]:
        cum = self.cumulative
        total = cum[:, -1]
        safe = np.where(total > 0, total, 1.0)
        return {r: np.where(total > 0, cum[:, r - 1] / safe, np.nan) for r in self.ranks}

    @property
    def higher_rank_share(self) -> np.ndarray:
        return 1.0 - self.rho[self.r1]

    @classmethod
    def from_energies(cls, energies, ranks) -> "EnergyTrace":
        energies = np.atleast_2d(np.asarray(energies, dtype=np.float64))
        ranks = tuple(int(r) for r in ranks)
        return cls(energies=energies, ranks=ranks, r1=ranks[0])


@dataclass(frozen=True)
class MeanFieldParams:
    qprime: np.ndarray
    delta_sq: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.qprime, dtype=np.float64))
        d = np.broadcast_to(np.asarray(self.delta_sq, dtype=np.float64), q.shape).copy()
        if np.any(d < 0) or np.any(q < 0):
            raise LabError("domain", "qprime and delta_sq must be non-negative")
        object.__setattr__(self, "qprime", q)
        object.__setattr__(self, "delta_sq", d)

    @classmethod
    def from_coverage(
        cls,
        cov: CoverageProfile,
        k: int,
        m: int,
        delta_sq=0.0,
        lam: float = 1.0,
        kappa_beta_sq=1.0,
    ) -> "MeanFieldParams":
        """``q'_i = (1 + lam) * h(p_i) * E[kappa_i^2 beta_i^2]``."""
        if lam <= 0:
            raise LabError("domain", "lam must be positive")
        h = np.array([h_factor(float(p), k, m) for p in cov.p])
        return cls(qprime=(1.0 + lam) * h * np.asarray(kappa_beta_sq, dtype=np.float64), delta_sq=delta_sq)


@dataclass(frozen=True)
class MeanFieldBound:
    bounds: np.ndarray  # (t_max + 1) x r
    floor: np.ndarray  # delta^2 / (1 - q') where q' < 1, nan elsewhere


def energy_ratio(e, r: int) -> float:
    e = np.asarray(e, dtype=np.float64)
    if not 1 <= r <= e.size:
        raise LabError("rank", f"r={r} outside [1, {e.size}]")
    total = float(e.sum())
    if total <= 0:
        raise LabError("degenerate", "zero total energy")
    return float(e[:r].sum()) / total


def step_fedavg_idealized(state: SpectrumState, sampled, pop: ClientPopulation, beta: float) -> SpectrumState:
    m = len(sampled)
    if m == 0:
        raise LabError("sample", "empty sampled set")
    n = support_counts(pop, sampled)
    return SpectrumState(state.sigma * (beta * n / m), state.round + 1)


def _partition_alive(n: np.ndarray, plan: PartitionPlan) -> np.ndarray:
    """Per-direction indicator that the enclosing partition has a contributor.

    ``n`` holds support counts N_i (last axis = direction); C_h is non-empty iff N_h > 0.
    """
    alive = np.empty(n.shape, dtype=bool)
    for l, h in plan.partitions:
        alive[..., l - 1:h] = (n[..., h - 1] > 0)[..., None]
    return alive


def step_raflora_idealized(
    state: SpectrumState,
    sampled,
    pop: ClientPopulation,
    plan: PartitionPlan,
    beta: float,
    carry_over: bool = False,
) -> SpectrumState:
    if len(sampled) == 0:
        raise LabError("sample", "empty sampled set")
    alive = _partition_alive(support_counts(pop, sampled), plan)
    dead = state.sigma if carry_over else 0.0
    return SpectrumState(np.where(alive, state.sigma * beta, dead), state.round + 1)


def iterate_idealized(
    strategy: str,
    pop: ClientPopulation,
    m: int,
    beta: float,
    sigma0,
    rounds: int,
    trials: int,
    rng: np.random.Generator,
    plan: PartitionPlan | None = None,
    carry_over: bool = False,
):
    """Yield the (trials, r_max) sigma array for rounds 0..rounds.

    Round ``t`` draws one (trials, m) batch of subsets; per trial the arithmetic is
    identical to repeated calls of the single-step functions.
    """
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    if sigma0.shape != (pop.r_max,):
        raise LabError("shape", f"sigma0 must have length {pop.r_max}")
    if strategy not in ("fedavg", "raflora"):
        raise LabError("config", f"unknown idealized strategy {strategy!r}")
    if strategy == "raflora" and plan is None:
        raise LabError("config", "raflora simulation needs a partition plan")
    sigma = np.tile(sigma0, (trials, 1))
    yield sigma
    for _ in range(rounds):
        n = sampled_support_counts(pop, sample_rounds(pop, m, rng, trials))
        if strategy == "fedavg":
            sigma = sigma * (beta * n / m)
        else:
            dead = sigma if carry_over else 0.0
            sigma = np.where(_partition_alive(n, plan), sigma * beta, dead)
        yield sigma


def simulate_idealized(*args, **kwargs) -> np.ndarray:
    """All rounds of :func:`iterate_idealized` stacked as (trials, rounds+1, r_max)."""
    return np.stack(list(iterate_idealized(*args, **kwargs)), axis=1)


def one_step_multipliers(
    strategy: str,
    pop: ClientPopulation,
    m: int,
    beta: float,
    rng: np.random.Generator,
    trials: int,
    plan: PartitionPlan | None = None,
    chunk: int = 20000,
) -> np.ndarray:
    """Per-trial one-step multipliers sigma_i'/sigma_i as a (trials, r_max) array."""
    parts = []
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        n = sampled_support_counts(pop, sample_rounds(pop, m, rng, size))
        if strategy == "fedavg":
            parts.append(beta * n / m)
        elif strategy == "raflora":
            parts.append(np.where(_partition_alive(n, plan), beta, 0.0))
        else:
            raise LabError("config", f"unknown idealized strategy {strategy!r}")
        done += size
    return np.concatenate(parts, axis=0)


def closed_form_energy(e0, fc: CollapseForecast, t: int) -> np.ndarray:
    if t < 0:
        raise LabError("domain", "t must be non-negative")
    return np.asarray(e0, dtype=np.float64) * fc.q**t


def closed_form_trace(e0, fc: CollapseForecast, rounds: int, ranks) -> EnergyTrace:
    e = np.stack([closed_form_energy(e0, fc, t) for t in range(rounds + 1)])
    return EnergyTrace.from_energies(e, ranks)


def theorem_bound(fc: CollapseForecast, t: int) -> float:
    if not np.isfinite(fc.gamma) or fc.r1 >= fc.q.size:
        raise LabError("no heterogeneity", "collapse rate undefined for homogeneous ranks")
    if t < 0:
        raise LabError("domain", "t must be non-negative")
    return fc.c0 * fc.gamma**t


def first_round_below(fc: CollapseForecast, level: float, t_max: int = 10**6) -> int | None:
    for t in range(t_max + 1):
        if theorem_bound(fc, t) < level:
            return t
    return None


def mean_field_bound(e0, params: MeanFieldParams, t_max: int) -> MeanFieldBound:
    """Iterate ``b(t+1) = q' b(t) + delta^2`` from ``b(0) = e0``."""
    if t_max < 0:
        raise LabError("domain", "t_max must be non-negative")
    q, d = params.qprime, params.delta_sq
    b = np.empty((t_max + 1, q.size))
    b[0] = np.broadcast_to(np.asarray(e0, dtype=np.float64), q.shape)
    for t in range(t_max):
        b[t + 1] = q * b[t] + d
    with np.errstate(divide="ignore", invalid="ignore"):
        floor = np.where(q < 1.0, d / (1.0 - q), np.nan)
    return MeanFieldBound(bounds=b, floor=floor)
