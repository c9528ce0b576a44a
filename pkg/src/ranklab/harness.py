"""Desk-scale federated LoRA training on synthetic matrix-regression tasks.

Every client fits ``B @ A`` to its own target by full-gradient descent on
``0.5 * ||B A - target||_F^2``. Client targets are the shared target rotated on
both sides by ``expm(S)`` with ``S`` a random skew-symmetric generator whose
RMS rotation angle is ``eta * pi / 2``, so ``eta = 0`` gives identical clients and
rotations never change the target energy. The generators vanish on the
target's leading ``r_1`` singular directions: the shared head is common to all
clients and only the higher-rank directions drift.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from ranklab.aggregate import (
    GlobalLora,
    LoraUpdate,
    PartitionPlan,
    aggregate_flexlora,
    aggregate_flora,
    aggregate_hetlora,
    aggregate_raflora,
    broadcast_truncate,
    make_partition_plan,
    partition_contributors,
    svd_reallocate,
)
from ranklab.errors import LabError
from ranklab.linalg import frobenius_sq
from ranklab.population import ClientPopulation, RankConfig, assign_ranks, sample_round

STRATEGIES = ("hetlora", "flora", "flexlora", "raflora")
DIVERGENCE_LOSS = 1e12


@dataclass(frozen=True)
class ExperimentConfig:
    k_clients: int = 100
    m_per_round: int = 10
    rounds: int = 100
    levels: tuple[int, ...] = (8, 16, 32, 48, 64)
    probs: tuple[float, ...] | None = None  # None -> uniform over levels
    d: int = 128
    n: int = 128
    strategy: str = "raflora"
    eta: float = 0.2
    local_steps: int = 4
    learning_rate: float = 0.005
    seed: int = 0
    carry_over: bool = False
    sample_counts: tuple[int, ...] | None = None  # None -> one sample per client
    spectrum: str | tuple[float, ...] = "uniform"  # "uniform", "balanced" or explicit values
    init: str = "random"  # global A^(0): "random" orthonormal rows or "aligned" with the target
    flora_init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(x) for x in self.levels))
        if self.probs is not None:
            object.__setattr__(self, "probs", tuple(float(x) for x in self.probs))
        if self.sample_counts is not None:
            object.__setattr__(self, "sample_counts", tuple(int(x) for x in self.sample_counts))
        if not isinstance(self.spectrum, str):
            object.__setattr__(self, "spectrum", tuple(float(x) for x in self.spectrum))
        self.rank_config  # validates levels / probs
        if self.strategy not in STRATEGIES:
            raise LabError("config", f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 1 <= self.m_per_round <= self.k_clients:
            raise LabError("config", "need 1 <= m_per_round <= k_clients")
        if self.r_max > min(self.d, self.n):
            raise LabError("config", f"r_max={self.r_max} exceeds min(d, n)")
        if self.learning_rate <= 0 or self.local_steps < 1 or self.rounds < 0:
            raise LabError("config", "learning_rate > 0, local_steps >= 1, rounds >= 0 required")
        if not 0.0 <= self.eta <= 1.0:
            raise LabError("config", "eta must lie in [0, 1]")
        if self.init not in ("random", "aligned"):
            raise LabError("config", f"unknown init {self.init!r}")
        if self.sample_counts is not None and len(self.sample_counts) != self.k_clients:
            raise LabError("config", "sample_counts needs one entry per client")
        self.spectrum_values  # validates spectrum

    @property
    def r_max(self) -> int:
        return self.levels[-1]

    @property
    def rank_config(self) -> RankConfig:
        if self.probs is None:
            return RankConfig.uniform(self.levels)
        return RankConfig(self.levels, self.probs)

    @property
    def spectrum_values(self) -> np.ndarray:
        r1, r_max = self.levels[0], self.r_max
        if self.spectrum == "uniform":
            return np.ones(r_max)
        if self.spectrum == "balanced":
            if r1 == r_max:
                return np.ones(r_max)
            # head directions carry the same total energy as the tail
            s = np.ones(r_max)
            s[:r1] = np.sqrt((r_max - r1) / r1)
            return s
        if isinstance(self.spectrum, str):
            raise LabError("config", f"unknown spectrum {self.spectrum!r}")
        s = np.asarray(self.spectrum, dtype=np.float64)
        if s.shape != (r_max,) or np.any(s <= 0) or np.any(np.diff(s) > 0):
            raise LabError("config", "spectrum must list r_max positive non-increasing values")
        return s

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticTask:
    d: int
    n: int
    shared_target: np.ndarray
    client_targets: tuple[np.ndarray, ...]
    eta: float
    left_basis: np.ndarray  # d x r_max
    right_basis: np.ndarray  # n x r_max
    spectrum: np.ndarray


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    strategy: str
    loss: float
    buckets: tuple[float, ...]
    rho_r1: float
    higher_rank_share: float


def _streams(seed: int):
    """Independent generators for task, population, sampling and client init."""
    task, pop, sampling, init = np.random.SeedSequence(seed).spawn(4)
    return (
        np.random.default_rng(task),
        np.random.default_rng(pop),
        np.random.default_rng(sampling),
        np.random.default_rng(init),
    )


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def _rotation(rng: np.random.Generator, fixed: np.ndarray, eta: float) -> np.ndarray:
    """Rotation with RMS angle ``eta * pi / 2`` on the orthogonal complement of ``fixed``."""
    dim, k = fixed.shape
    g = rng.standard_normal((dim, dim))
    proj = np.eye(dim) - fixed @ fixed.T
    s = proj @ (g - g.T) @ proj
    rms_angle = np.sqrt(frobenius_sq(s) / (dim - k))
    return expm(s * (eta * np.pi / 2 / rms_angle))


def generate_task(config: ExperimentConfig) -> SyntheticTask:
    rng = _streams(config.seed)[0]
    s = config.spectrum_values
    u = _orthonormal(rng, config.d, config.r_max)
    v = _orthonormal(rng, config.n, config.r_max)
    shared = (u * s) @ v.T
    r1 = config.levels[0]
    targets = []
    for _ in range(config.k_clients):
        if config.eta == 0.0:
            targets.append(shared.copy())
            continue
        left = _rotation(rng, u[:, :r1], config.eta)
        right = _rotation(rng, v[:, :r1], config.eta)
        targets.append(left @ shared @ right.T)
    return SyntheticTask(config.d, config.n, shared, tuple(targets), config.eta, u, v, s)


def lora_gradients(b: np.ndarray, a: np.ndarray, target: np.ndarray):
    """Loss and gradients of ``0.5 * ||b a - target||^2`` w.r.t. ``b`` and ``a``."""
    resid = b @ a - target
    return 0.5 * frobenius_sq(resid), resid @ a.T, b.T @ resid


def local_train(init_b, init_a, target, steps: int, lr: float, client_id: int = 0, samples: int = 1) -> LoraUpdate:
    b = np.array(init_b, dtype=np.float64)
    a = np.array(init_a, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if b.shape[1] != a.shape[0] or (b.shape[0], a.shape[1]) != target.shape:
        raise LabError("shape", f"b{b.shape} a{a.shape} target{target.shape}")
    if steps < 1:
        raise LabError("config", "steps must be >= 1")
    for _ in range(steps):
        loss, gb, ga = lora_gradients(b, a, target)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise LabError("diverged", f"local loss {loss:g}")
        b = b - lr * gb
        a = a - lr * ga
    loss = 0.5 * frobenius_sq(b @ a - target)
    if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise LabError("diverged", f"local loss {loss:g}")
    return LoraUpdate(client_id=client_id, b=b, a=a, samples=samples)


def energy_buckets(g: GlobalLora, plan: PartitionPlan) -> np.ndarray:
    """Share of ``sum sigma^2`` falling in each partition of ``plan``."""
    e = g.singular_values() ** 2
    if e.size != plan.r_max:
        raise LabError("shape", f"global rank {e.size} != plan r_max {plan.r_max}")
    total = float(e.sum())
    if total <= 0:
        raise LabError("degenerate", "zero global update")
    return np.array([e[l - 1:h].sum() / total for l, h in plan.partitions])


@dataclass
class FederatedRun:
    """Mutable state of one federated run; ``step()`` advances one round."""

    config: ExperimentConfig
    task: SyntheticTask = field(init=False)
    population: ClientPopulation = field(init=False)
    plan: PartitionPlan = field(init=False)
    global_lora: GlobalLora = field(init=False)
    base: np.ndarray = field(init=False)
    round: int = field(init=False, default=0)

    def __post_init__(self):
        cfg = self.config
        self.task = generate_task(cfg)
        _, pop_rng, self._sample_rng, self._init_rng = _streams(cfg.seed)
        pop_seed = int(pop_rng.integers(2**63))
        self.population = assign_ranks(cfg.rank_config, cfg.k_clients, pop_seed, samples=cfg.sample_counts)
        self.plan = make_partition_plan(cfg.levels)
        if cfg.init == "aligned":
            ag = self.task.right_basis.T.copy()
        else:
            ag = _orthonormal(self._init_rng, cfg.n, cfg.r_max).T
        self.global_lora = GlobalLora(bg=np.zeros((cfg.d, cfg.r_max)), ag=ag)
        self.base = np.zeros((cfg.d, cfg.n))

    @property
    def model(self) -> np.ndarray:
        """Current global weight delta (W_pre is zero)."""
        if self.config.strategy == "flora":
            return self.base
        return self.global_lora.product()

    def client_init(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        r_k = int(self.population.ranks[k])
        if self.config.strategy == "flora":
            cfg = self.config
            a = self._init_rng.standard_normal((r_k, cfg.n)) * (cfg.flora_init_scale / np.sqrt(cfg.n))
            return np.zeros((cfg.d, r_k)), a
        return broadcast_truncate(self.global_lora, r_k)

    def client_target(self, k: int) -> np.ndarray:
        target = self.task.client_targets[k]
        return target - self.base if self.config.strategy == "flora" else target

    def local_updates(self, sampled) -> list[LoraUpdate]:
        cfg = self.config
        updates = []
        for k in sampled:
            k = int(k)
            b0, a0 = self.client_init(k)
            updates.append(
                local_train(
                    b0, a0, self.client_target(k), cfg.local_steps, cfg.learning_rate,
                    client_id=k, samples=int(self.population.samples[k]),
                )
            )
        return updates

    def aggregate(self, updates) -> np.ndarray:
        cfg = self.config
        if cfg.strategy == "flexlora":
            return aggregate_flexlora(updates)
        if cfg.strategy == "flora":
            return aggregate_flora(updates)
        if cfg.strategy == "hetlora":
            return aggregate_hetlora(updates, cfg.r_max)
        dw = aggregate_raflora(updates, self.plan)
        if cfg.carry_over:
            g = self.global_lora
            for (l, h), contrib in zip(self.plan.partitions, partition_contributors(updates, self.plan)):
                if not contrib:
                    dw = dw + g.bg[:, l - 1:h] @ g.ag[l - 1:h, :]
        return dw

    def step(self) -> RoundMetrics:
        cfg = self.config
        sampled = sample_round(self.population, cfg.m_per_round, self._sample_rng)
        dw = self.aggregate(self.local_updates(sampled))
        if cfg.strategy == "flora":
            self.base = self.base + dw
        self.global_lora = svd_reallocate(dw, cfg.r_max)
        self.round += 1
        buckets = energy_buckets(self.global_lora, self.plan)
        rho_r1 = float(buckets[0])
        return RoundMetrics(
            round=self.round,
            strategy=cfg.strategy,
            loss=frobenius_sq(self.model - self.task.shared_target),
            buckets=tuple(float(x) for x in buckets),
            rho_r1=rho_r1,
            higher_rank_share=min(1.0, max(0.0, 1.0 - rho_r1)),
        )


def run_experiment(config: ExperimentConfig) -> list[RoundMetrics]:
    run = FederatedRun(config)
    return [run.step() for _ in range(config.rounds)]


def run_strategies(config: ExperimentConfig, strategies=STRATEGIES) -> dict[str, list[RoundMetrics]]:
    return {s: run_experiment(replace(config, strategy=s)) for s in strategies}
