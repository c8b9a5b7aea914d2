"""Experience replay: dual-buffer self-organizing clusters plus two baselines.

The SODACER memory keeps recent samples verbatim in a small FIFO (the fast
buffer) and compresses older ones into Gaussian clusters (the slow buffer).
Each cluster tracks a centre in the concatenated ``(x, u)`` space, a spread
``sigma`` and a sample count. Clusters grow when they absorb samples, shrink
under a periodic forgetting factor, disappear once too narrow and fuse with
overlapping neighbours.

Baselines:

* RER - a bounded FIFO sampled uniformly with replacement.
* CBER - the same clustering with every lifecycle rule switched off and
  ``sigma`` pinned at its initial value.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import N_CONTROL, N_STATE
from .errors import ClusterCapacityExceeded, ConfigError, EmptyReplay

DIM = N_STATE + N_CONTROL


def merge_coefficient(overlap: float = 0.95) -> float:
    """Distance factor at which one centroid has membership ``overlap`` in the other cluster."""
    if not 0.0 < overlap < 1.0:
        raise ValueError("overlap must lie in (0, 1)")
    return math.sqrt(-2.0 * math.log(overlap))


@dataclass(frozen=True, eq=False)
class Sample:
    x: np.ndarray
    u: np.ndarray
    t: float = float("nan")
    run_id: int = -1

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.u])

    @classmethod
    def from_vector(cls, v, t: float = float("nan"), run_id: int = -1) -> "Sample":
        v = np.asarray(v, dtype=float)
        return cls(x=v[:N_STATE].copy(), u=v[N_STATE:].copy(), t=t, run_id=run_id)


@dataclass(eq=False)
class Cluster:
    center: np.ndarray
    sigma: float
    count: int
    id: int

    def to_dict(self) -> dict:
        return {"id": self.id, "center": self.center.tolist(), "sigma": self.sigma, "count": self.count}


@dataclass(frozen=True)
class ReplayConfig:
    fast_capacity: int = 32
    gamma_th: float = 0.5
    sigma0: float = 0.02
    beta: float = 0.05
    rho: float = 0.02
    sigma_th: float = 0.005
    gamma_merge: float = field(default_factory=merge_coefficient)
    forget_every: int = 50
    batch_extra: int = 16
    max_clusters: int = 4096
    # RER ring size; the RER mini-batch size matches a full SODACER batch.
    rer_capacity: int = 1000
    # upper bounds used when clamping synthetic controls drawn from clusters
    u_upper: tuple = (1.0, 1.0, 3.0, 3.0, 3.0)

    def validate(self) -> None:
        if not 0.0 < self.gamma_th < 1.0:
            raise ConfigError("replay.gamma_th must lie in (0, 1)")
        if not self.sigma0 > 0 or not self.beta > 0 or not self.rho > 0:
            raise ConfigError("replay.sigma0, beta and rho must be > 0")
        if not 0.0 < self.sigma_th < self.sigma0:
            raise ConfigError("replay.sigma_th must lie in (0, sigma0)")
        if not self.gamma_merge > 0:
            raise ConfigError("replay.gamma_merge must be > 0")
        if self.fast_capacity < 1 or self.forget_every < 1 or self.max_clusters < 1:
            raise ConfigError("replay.fast_capacity, forget_every and max_clusters must be >= 1")
        if self.batch_extra < 0 or self.rer_capacity < 1:
            raise ConfigError("replay.batch_extra must be >= 0 and rer_capacity >= 1")
        if len(self.u_upper) != N_CONTROL or any(not b > 0 for b in self.u_upper):
            raise ConfigError("replay.u_upper must be 5 positive numbers")

    @property
    def rer_batch_size(self) -> int:
        return self.fast_capacity + self.batch_extra


class FastBuffer:
    """FIFO of the most recent raw samples."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque[Sample] = deque()

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, s: Sample) -> Sample | None:
        """Append ``s``; return the oldest sample once the buffer exceeds capacity."""
        self._items.append(s)
        if len(self._items) > self.capacity:
            return self._items.popleft()
        return None


class SlowBuffer:
    """Cluster memory stored column-wise. ``static=True`` gives the CBER variant.

    Mutate only through the module functions (or :meth:`add_cluster`): they
    record which clusters changed so that :func:`merge_similar` can skip pairs
    already known not to overlap.
    """

    def __init__(self, static: bool = False):
        self.static = static
        self.forgotten_mass = 0
        self._center = np.empty((0, DIM))
        self._sigma = np.empty(0)
        self._count = np.empty(0, dtype=np.int64)
        self._id = np.empty(0, dtype=np.int64)
        self._next_id = 0
        # ids changed since the last full merge pass; None forces a full pass
        self._dirty: set[int] | None = None

    def __len__(self):
        return self._sigma.shape[0]

    @property
    def mass(self) -> int:
        return int(self._count.sum())

    @property
    def clusters(self) -> list[Cluster]:
        """Copies of the current clusters, oldest first."""
        return [Cluster(center=self._center[i].copy(), sigma=float(self._sigma[i]),
                        count=int(self._count[i]), id=int(self._id[i])) for i in range(len(self))]

    def centers(self) -> np.ndarray:
        return self._center.copy()

    def sigmas(self) -> np.ndarray:
        return self._sigma.copy()

    def counts(self) -> np.ndarray:
        return self._count.copy()

    def ids(self) -> np.ndarray:
        return self._id.copy()

    def snapshot(self) -> list[dict]:
        return [c.to_dict() for c in self.clusters]

    def add_cluster(self, center, sigma: float, count: int = 1,
                    max_clusters: int | None = None) -> int:
        if max_clusters is not None and len(self) >= max_clusters:
            raise ClusterCapacityExceeded(
                f"slow buffer already holds {len(self)} clusters (max_clusters={max_clusters})")
        if not sigma > 0 or count < 1:
            raise ValueError("cluster needs sigma > 0 and count >= 1")
        cid = self._next_id
        self._next_id += 1
        self._center = np.vstack([self._center, np.asarray(center, dtype=float).reshape(1, DIM)])
        self._sigma = np.append(self._sigma, float(sigma))
        self._count = np.append(self._count, int(count))
        self._id = np.append(self._id, cid)
        self._mark(cid)
        return cid

    def _mark(self, cid: int) -> None:
        if self._dirty is not None:
            self._dirty.add(cid)

    def _keep(self, keep: np.ndarray) -> None:
        self._center = self._center[keep]
        self._sigma = self._sigma[keep]
        self._count = self._count[keep]
        self._id = self._id[keep]


@dataclass(frozen=True)
class AbsorbReport:
    created: bool
    cluster_id: int
    membership: float


@dataclass(frozen=True)
class MergeEvent:
    kept: int
    removed: int
    distance: float


def membership(sample, cluster: Cluster) -> float:
    """Gaussian membership ``exp(-|s - c|^2 / (2 sigma^2))`` on the 10-vector."""
    v = sample.vector if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    d2 = float(np.sum((v - cluster.center) ** 2))
    return math.exp(-d2 / (2.0 * cluster.sigma * cluster.sigma))


def memberships(v: np.ndarray, buffer: SlowBuffer) -> np.ndarray:
    diff = buffer._center - v
    d2 = np.einsum("ij,ij->i", diff, diff)
    return np.exp(-d2 / (2.0 * buffer._sigma * buffer._sigma))


def _absorb(buffer: SlowBuffer, s: Sample, cfg: ReplayConfig, amplify: bool) -> AbsorbReport:
    v = s.vector
    mu = memberships(v, buffer)
    if mu.size == 0 or mu.max() <= cfg.gamma_th:
        cid = buffer.add_cluster(v, cfg.sigma0, 1, max_clusters=cfg.max_clusters)
        return AbsorbReport(created=True, cluster_id=cid, membership=1.0)
    j = int(np.argmax(mu))
    n = int(buffer._count[j])
    buffer._center[j] = (n * buffer._center[j] + v) / (n + 1)
    buffer._count[j] = n + 1
    if amplify:
        buffer._sigma[j] *= 1.0 + cfg.beta
    cid = int(buffer._id[j])
    buffer._mark(cid)
    return AbsorbReport(created=False, cluster_id=cid, membership=float(mu[j]))


def absorb(buffer: SlowBuffer, s: Sample, cfg: ReplayConfig) -> AbsorbReport:
    """Join the best-matching cluster (and widen it) or open a new one."""
    return _absorb(buffer, s, cfg, amplify=not buffer.static)


def cber_absorb(buffer: SlowBuffer, s: Sample, cfg: ReplayConfig) -> AbsorbReport:
    """Static clustering: same assignment rule, no amplification."""
    return _absorb(buffer, s, cfg, amplify=False)


def apply_forgetting(buffer: SlowBuffer, cfg: ReplayConfig) -> None:
    """Shrink every spread by ``(sigma0 / rho) * (1 - N_k / sum N)``."""
    if len(buffer) == 0:
        return
    factor = (cfg.sigma0 / cfg.rho) * (1.0 - buffer._count / buffer._count.sum())
    buffer._sigma = buffer._sigma * factor
    if np.any(factor > 1.0):
        buffer._dirty = None


def prune_narrow(buffer: SlowBuffer, cfg: ReplayConfig) -> list[int]:
    narrow = buffer._sigma <= cfg.sigma_th
    if not narrow.any():
        return []
    removed = buffer._id[narrow].tolist()
    buffer.forgotten_mass += int(buffer._count[narrow].sum())
    buffer._keep(~narrow)
    return removed


def _closest_qualifying_pair(buffer: SlowBuffer, cfg: ReplayConfig):
    k = len(buffer)
    if k < 2:
        return None
    C, sig, ids = buffer._center, buffer._sigma, buffer._id
    if buffer._dirty is None:
        rows = np.arange(k)
    else:
        rows = np.flatnonzero(np.isin(ids, np.fromiter(buffer._dirty, dtype=np.int64)))
        if rows.size == 0:
            return None
    diff = C[rows][:, None, :] - C[None, :, :]
    dist = np.sqrt(np.einsum("rkd,rkd->rk", diff, diff))
    thresh = cfg.gamma_merge * np.maximum(sig[rows][:, None], sig[None, :])
    ok = dist < thresh
    ok[np.arange(rows.size), rows] = False
    ri, cj = np.nonzero(ok)
    if ri.size == 0:
        return None
    i, j = rows[ri], cj
    d = dist[ri, cj]
    lo = np.minimum(ids[i], ids[j])
    hi = np.maximum(ids[i], ids[j])
    best = np.lexsort((hi, lo, d))[0]
    return int(i[best]), int(j[best]), float(d[best])


def merge_similar(buffer: SlowBuffer, cfg: ReplayConfig) -> list[MergeEvent]:
    """Fuse overlapping clusters, closest pair first, until none overlap.

    Two clusters overlap when ``|c_i - c_j| < gamma * max(sigma_i, sigma_j)``.
    The survivor is the wider cluster (lower id on equal spreads); it takes the
    count-weighted centre, the summed count and the larger spread. Ties in
    distance go to the lexicographically smallest id pair.
    """
    events = []
    while True:
        pair = _closest_qualifying_pair(buffer, cfg)
        if pair is None:
            buffer._dirty = set()
            return events
        i, j, d = pair
        sig, ids = buffer._sigma, buffer._id
        if sig[j] > sig[i] or (sig[j] == sig[i] and ids[j] < ids[i]):
            i, j = j, i
        ni, nj = int(buffer._count[i]), int(buffer._count[j])
        buffer._center[i] = (ni * buffer._center[i] + nj * buffer._center[j]) / (ni + nj)
        buffer._count[i] = ni + nj
        buffer._sigma[i] = max(sig[i], sig[j])
        kept, removed = int(ids[i]), int(ids[j])
        keep = np.ones(len(buffer), dtype=bool)
        keep[j] = False
        buffer._keep(keep)
        buffer._mark(kept)
        events.append(MergeEvent(kept=kept, removed=removed, distance=d))


def run_lifecycle(buffer: SlowBuffer, cfg: ReplayConfig, step: int) -> dict:
    """Forgetting on its cadence, then pruning and merging. No-op for static buffers."""
    if buffer.static:
        return {"forgot": False, "pruned": [], "merged": []}
    forgot = step > 0 and step % cfg.forget_every == 0
    if forgot:
        apply_forgetting(buffer, cfg)
    return {"forgot": forgot, "pruned": prune_narrow(buffer, cfg), "merged": merge_similar(buffer, cfg)}


def minibatch_arrays(fast: FastBuffer, slow: SlowBuffer, cfg: ReplayConfig,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch as stacked ``(X, U)`` arrays; see :func:`make_minibatch`."""
    if len(fast) == 0 and len(slow) == 0:
        raise EmptyReplay("both replay buffers are empty")
    parts = [np.stack([s.vector for s in fast])] if len(fast) else []
    if len(slow):
        C = slow._center
        parts.append(C)
        if cfg.batch_extra > 0:
            counts = slow._count.astype(float)
            idx = rng.choice(len(C), size=cfg.batch_extra, p=counts / counts.sum())
            draws = C[idx] + rng.standard_normal((cfg.batch_extra, DIM)) * slow._sigma[idx, None]
            draws[:, :N_STATE] = np.clip(draws[:, :N_STATE], 0.0, 1.0)
            draws[:, N_STATE:] = np.clip(draws[:, N_STATE:], 0.0, np.asarray(cfg.u_upper))
            parts.append(draws)
    V = np.concatenate(parts)
    return V[:, :N_STATE].copy(), V[:, N_STATE:].copy()


def make_minibatch(fast: FastBuffer, slow: SlowBuffer, cfg: ReplayConfig,
                   rng: np.random.Generator) -> list[Sample]:
    """All fast-buffer samples, every cluster centre, then ``batch_extra`` draws.

    Each extra draw picks a cluster with probability proportional to its count
    and samples an isotropic Gaussian of its spread around the centre, clamped
    to the state box and the control bounds. Synthetic samples carry ``t=nan``.
    """
    fast_items = list(fast)
    X, U = minibatch_arrays(fast, slow, cfg, rng)
    out = fast_items[:]
    out.extend(Sample(x=X[i], u=U[i]) for i in range(len(fast_items), X.shape[0]))
    return out


class RandomReplay:
    """Capacity-bounded FIFO sampled uniformly with replacement."""

    def __init__(self, capacity: int):
        self._items: deque[Sample] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def rer_push(buffer: RandomReplay, s: Sample) -> None:
    buffer._items.append(s)


def rer_sample(buffer: RandomReplay, k: int, rng: np.random.Generator) -> list[Sample]:
    if len(buffer) == 0:
        raise EmptyReplay("random replay buffer is empty")
    idx = rng.integers(0, len(buffer), size=k)
    return [buffer._items[i] for i in idx]
