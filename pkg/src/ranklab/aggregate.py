"""Heterogeneous-rank aggregation strategies on real LoRA factors.

All four aggregators return the full ``d x n`` aggregated update; the caller
re-factorises it with :func:`svd_reallocate`. Client terms are always summed in
ascending ``client_id`` order so that permuting the input list does not change
the floating-point result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ranklab.errors import LabError
from ranklab.linalg import as_matrix, svd_truncate


@dataclass(frozen=True)
class LoraUpdate:
    client_id: int
    b: np.ndarray  # d x r_k
    a: np.ndarray  # r_k x n
    samples: int = 1

    def __post_init__(self):
        b, a = as_matrix(self.b), as_matrix(self.a)
        if b.shape[1] != a.shape[0]:
            raise LabError("shape", f"b{b.shape} and a{a.shape} disagree on rank")
        if int(self.samples) < 1:
            raise LabError("shape", "samples must be positive")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "samples", int(self.samples))

    @property
    def rank(self) -> int:
        return self.b.shape[1]

    def product(self) -> np.ndarray:
        return self.b @ self.a


@dataclass(frozen=True)
class GlobalLora:
    bg: np.ndarray  # d x r_max, columns sigma_i * u_i
    ag: np.ndarray  # r_max x n, rows v_i^T

    def __post_init__(self):
        if self.bg.ndim != 2 or self.ag.ndim != 2 or self.bg.shape[1] != self.ag.shape[0]:
            raise LabError("shape", f"bg{self.bg.shape} / ag{self.ag.shape}")

    @property
    def r_max(self) -> int:
        return self.bg.shape[1]

    def product(self) -> np.ndarray:
        return self.bg @ self.ag

    def singular_values(self) -> np.ndarray:
        """Singular values carried in the column norms of ``bg``."""
        return np.linalg.norm(self.bg, axis=0)


@dataclass(frozen=True)
class PartitionPlan:
    boundaries: tuple[int, ...]
    partitions: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        bounds = tuple(int(h) for h in self.boundaries)
        if not bounds or bounds[0] < 1 or any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise LabError("config", f"boundaries must be strictly increasing positive integers: {bounds}")
        object.__setattr__(self, "boundaries", bounds)
        prev = (0,) + bounds[:-1]
        object.__setattr__(self, "partitions", tuple((p + 1, h) for p, h in zip(prev, bounds)))

    @property
    def r_max(self) -> int:
        return self.boundaries[-1]

    @property
    def r1(self) -> int:
        return self.boundaries[0]


def make_partition_plan(levels) -> PartitionPlan:
    """Partitions ``[prev(h)+1, h]`` for every rank boundary ``h``."""
    return PartitionPlan(tuple(levels))


def _ordered(updates) -> list[LoraUpdate]:
    ups = sorted(updates, key=lambda u: u.client_id)
    if not ups:
        raise LabError("shape", "no updates to aggregate")
    d, n = ups[0].b.shape[0], ups[0].a.shape[1]
    for u in ups:
        if u.b.shape[0] != d or u.a.shape[1] != n:
            raise LabError("shape", f"client {u.client_id} has inconsistent d x n")
    return ups


def _weights(ups) -> np.ndarray:
    n = np.array([u.samples for u in ups], dtype=np.float64)
    return n / n.sum()


def broadcast_truncate(g: GlobalLora, r_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading ``r_k`` columns of ``bg`` and rows of ``ag`` (copies, no rescaling)."""
    if not 1 <= r_k <= g.r_max:
        raise LabError("rank", f"r_k={r_k} outside [1, {g.r_max}]")
    return g.bg[:, :r_k].copy(), g.ag[:r_k, :].copy()


def aggregate_flexlora(updates) -> np.ndarray:
    """Sample-weighted average of the full products ``b_k a_k``."""
    ups = _ordered(updates)
    w = _weights(ups)
    out = np.zeros((ups[0].b.shape[0], ups[0].a.shape[1]))
    for wk, u in zip(w, ups):
        out += wk * u.product()
    return out


def aggregate_hetlora(updates, r_max: int) -> np.ndarray:
    """Zero-pad factors to ``r_max``, average B and A separately, multiply."""
    ups = _ordered(updates)
    if any(u.rank > r_max for u in ups):
        raise LabError("rank", f"update rank exceeds r_max={r_max}")
    w = _weights(ups)
    d, n = ups[0].b.shape[0], ups[0].a.shape[1]
    b_bar = np.zeros((d, r_max))
    a_bar = np.zeros((r_max, n))
    for wk, u in zip(w, ups):
        b_bar[:, : u.rank] += wk * u.b
        a_bar[: u.rank, :] += wk * u.a
    return b_bar @ a_bar


def stack_flora(updates) -> tuple[np.ndarray, np.ndarray]:
    """Stacked factors ``[w_1 b_1 | ... | w_M b_M]`` and ``[a_1; ...; a_M]``."""
    ups = _ordered(updates)
    w = _weights(ups)
    b_stack = np.concatenate([wk * u.b for wk, u in zip(w, ups)], axis=1)
    a_stack = np.concatenate([u.a for u in ups], axis=0)
    return b_stack, a_stack


def aggregate_flora(updates) -> np.ndarray:
    # FLoRA callers must merge the result into the base and reinitialise local factors
    b_stack, a_stack = stack_flora(updates)
    return b_stack @ a_stack


def partition_contributors(updates, plan: PartitionPlan) -> list[list[LoraUpdate]]:
    """Effective contributors ``C_h`` for each partition, in client_id order."""
    ups = _ordered(updates)
    for u in ups:
        if u.rank not in plan.boundaries:
            raise LabError("rank-mismatch", f"client {u.client_id} has rank {u.rank}, not a plan boundary")
    return [[u for u in ups if u.rank >= h] for _, h in plan.partitions]


def partition_weights(updates, plan: PartitionPlan) -> list[np.ndarray]:
    """Per-partition weights ``n_k / N_h`` over the contributors of that partition."""
    return [_weights(c) if c else np.zeros(0) for c in partition_contributors(updates, plan)]


def aggregate_raflora(updates, plan: PartitionPlan) -> np.ndarray:
    """Rank-partitioned aggregation; a partition with no contributor adds zero."""
    ups = _ordered(updates)
    out = np.zeros((ups[0].b.shape[0], ups[0].a.shape[1]))
    for (l, h), contrib in zip(plan.partitions, partition_contributors(ups, plan)):
        if not contrib:
            continue
        for wk, u in zip(_weights(contrib), contrib):
            out += wk * (u.b[:, l - 1:h] @ u.a[l - 1:h, :])
    return out


def svd_reallocate(dw, r_max: int, method: str = "lapack") -> GlobalLora:
    """Factor ``dw`` as ``bg @ ag`` with ``bg = [s_i u_i]`` and ``ag = [v_i^T]``."""
    svd = svd_truncate(dw, r_max, method=method)
    return GlobalLora(bg=svd.u * svd.s, ag=svd.vt.copy())
