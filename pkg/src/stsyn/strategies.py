"""Per-round synchronization protocols.

A round plan is a pure function of the workers' per-update durations: it says
how many local updates each worker completes, who uploads, how long the round
lasts and how many model transfers it costs. No learning happens here; the
simulator applies plans to models.

Worker ids are 0-based throughout.
"""
import heapq
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("stsyn", "pasgd", "fedavg", "ksync", "adacomm", "adasync")


class WorkerClock:
    """Durations of one worker's successive updates, extended on demand.

    Parameters
    ----------
    durations : sequence of float, optional
        Known leading durations.
    sampler : callable, optional
        ``sampler(n)`` returns ``n`` further durations. Without a sampler the
        clock is finite and asking past its end raises ``IndexError``.
    """

    def __init__(self, durations=(), sampler=None, chunk=8):
        self._durations = np.asarray(durations, dtype=np.float64)
        if np.any(self._durations <= 0):
            raise ValueError("durations must be strictly positive")
        self._sampler = sampler
        self._chunk = chunk
        self._done_at = np.cumsum(self._durations)

    @classmethod
    def exponential(cls, rng, mu, chunk=8):
        return cls(sampler=lambda n: rng.exponential(mu, size=n), chunk=chunk)

    @classmethod
    def constant(cls, duration):
        return cls(sampler=lambda n: np.full(n, float(duration)))

    def _extend(self):
        if self._sampler is None:
            raise IndexError("worker clock exhausted")
        more = np.asarray(self._sampler(self._chunk), dtype=np.float64)
        if np.any(more <= 0):
            raise ValueError("durations must be strictly positive")
        self._durations = np.concatenate([self._durations, more])
        self._done_at = np.cumsum(self._durations)

    @property
    def durations(self):
        return self._durations

    def duration(self, u):
        """Duration of update ``u`` (0-based)."""
        while len(self._durations) <= u:
            self._extend()
        return float(self._durations[u])

    def completion_time(self, n):
        """Time at which the first ``n`` updates are complete (0 for ``n == 0``)."""
        if n == 0:
            return 0.0
        while len(self._done_at) < n:
            self._extend()
        return float(self._done_at[n - 1])

    def completed_by(self, t):
        """Number of updates fully finished by time ``t``.

        A finite clock counts only its known updates.
        """
        while self._sampler is not None and (len(self._done_at) == 0 or self._done_at[-1] <= t):
            self._extend()
        return int(np.searchsorted(self._done_at, t, side="right"))


@dataclass(frozen=True)
class RoundPlan:
    updates: np.ndarray        # completed local updates per worker
    uploaders: tuple           # sorted worker ids that upload
    participants: tuple        # worker ids that download the global model
    duration: float            # wall-clock length of the round
    comm_cost: int             # downloads + uploads
    cutoff: float

    @property
    def n_uploaders(self):
        return len(self.uploaders)


@dataclass(frozen=True)
class SchemeSpec:
    """Synchronization strategy and its hyper-parameters.

    ``interval`` is the simulated-time length of an adaptation interval for the
    adaptive schemes; ``gamma`` is the AdaComm decay factor and ``growth`` the
    AdaSync multiplier for K.
    """

    kind: str
    K: int = None
    U: int = None
    sample_size: int = None
    tau0: int = 20
    gamma: float = 0.5
    K0: int = 10
    growth: float = 2.0
    interval: float = 0.01

    def validate(self, M):
        from .errors import ConfigError

        if self.kind not in SCHEMES:
            raise ConfigError("scheme.kind", f"unknown scheme {self.kind!r}; expected one of {SCHEMES}")
        need = {
            "stsyn": ("K", "U"), "pasgd": ("U",), "fedavg": ("sample_size", "U"),
            "ksync": ("K",), "adacomm": (), "adasync": (),
        }[self.kind]
        for name in need:
            if getattr(self, name) is None:
                raise ConfigError(f"scheme.{name}", f"required for scheme {self.kind!r}")
        if self.K is not None and not 1 <= self.K <= M:
            raise ConfigError("scheme.K", f"must lie in [1, {M}], got {self.K}")
        if self.U is not None and self.U < 1:
            raise ConfigError("scheme.U", f"must be >= 1, got {self.U}")
        if self.sample_size is not None and not 1 <= self.sample_size <= M:
            raise ConfigError("scheme.sample_size", f"must lie in [1, {M}], got {self.sample_size}")
        if self.tau0 < 1:
            raise ConfigError("scheme.tau0", "must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigError("scheme.gamma", "must lie in (0, 1]")
        if self.K0 < 1:
            raise ConfigError("scheme.K0", "must be >= 1")
        if self.growth < 1:
            raise ConfigError("scheme.growth", "must be >= 1")
        if not self.interval > 0:
            raise ConfigError("scheme.interval", "must be positive")
        return self


def _fixed_count_plan(clocks, workers, U):
    """Every worker in ``workers`` does exactly ``U`` updates; all of them upload."""
    M = len(clocks)
    updates = np.zeros(M, dtype=np.int64)
    updates[list(workers)] = U
    finish = max(clocks[m].completion_time(U) for m in workers)
    workers = tuple(sorted(workers))
    return RoundPlan(
        updates=updates, uploaders=workers, participants=workers,
        duration=finish, comm_cost=2 * len(workers), cutoff=finish,
    )


def stsyn_round(clocks, K, U):
    """Straggler-tolerant round: stop when the K-th worker finishes ``U`` updates.

    All workers keep computing until that instant. Each worker's completed
    updates count, the update in flight is cancelled, and every worker with at
    least one completed update uploads. All ``M`` workers downloaded the model.
    Ties in the U-update finish time are broken by worker id.
    """
    M = len(clocks)
    if not 1 <= K <= M:
        raise ValueError(f"K must lie in [1, {M}]")
    if U < 1:
        raise ValueError("U must be >= 1")
    finish = [(clocks[m].completion_time(U), m) for m in range(M)]
    finish.sort()
    cutoff = finish[K - 1][0]
    updates = np.array([clocks[m].completed_by(cutoff) for m in range(M)], dtype=np.int64)
    uploaders = tuple(int(m) for m in np.flatnonzero(updates >= 1))
    return RoundPlan(
        updates=updates, uploaders=uploaders, participants=tuple(range(M)),
        duration=cutoff, comm_cost=M + len(uploaders), cutoff=cutoff,
    )


def pasgd_round(clocks, U):
    """Periodic averaging: all workers do ``U`` updates and the slowest sets the pace."""
    return _fixed_count_plan(clocks, range(len(clocks)), U)


def fedavg_sampled_round(clocks, sample_size, U, rng):
    """A uniformly sampled subset of ``sample_size`` workers does ``U`` updates each."""
    M = len(clocks)
    if not 1 <= sample_size <= M:
        raise ValueError(f"sample_size must lie in [1, {M}]")
    chosen = rng.choice(M, size=sample_size, replace=False)
    return _fixed_count_plan(clocks, [int(m) for m in chosen], U)


def ksync_round(clocks, K):
    """Each worker computes one update; the K earliest finishers are aggregated."""
    M = len(clocks)
    if not 1 <= K <= M:
        raise ValueError(f"K must lie in [1, {M}]")
    first = sorted((clocks[m].completion_time(1), m) for m in range(M))
    winners = tuple(sorted(m for _, m in first[:K]))
    cutoff = first[K - 1][0]
    updates = np.zeros(M, dtype=np.int64)
    updates[list(winners)] = 1
    return RoundPlan(
        updates=updates, uploaders=winners, participants=tuple(range(M)),
        duration=cutoff, comm_cost=M + K, cutoff=cutoff,
    )


# -- AdaComm-like ---------------------------------------------------------------

@dataclass
class AdaCommState:
    """Geometric decay of the local-update period over simulated time.

    At every multiple of ``interval`` seconds the period is multiplied by
    ``gamma`` and rounded down, never dropping below 1.
    """

    tau0: int = 20
    gamma: float = 0.5
    interval: float = 0.01
    elapsed: float = 0.0
    tau: int = field(default=None)
    _boundaries_passed: int = 0

    def __post_init__(self):
        if self.tau is None:
            self.tau = self.tau0


def adacomm_like_round(clocks, tau):
    """PASGD round with period ``tau``; every worker downloads and uploads."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return pasgd_round(clocks, tau)


def adacomm_schedule_next(state, round_duration):
    """Advance simulated time by ``round_duration`` and return the next period."""
    state.elapsed += round_duration
    passed = int(state.elapsed // state.interval)
    while state._boundaries_passed < passed:
        state._boundaries_passed += 1
        state.tau = max(1, int(state.tau * state.gamma))
    return state.tau


# -- AdaSync-like (K-async with an adaptive K) -----------------------------------

@dataclass(frozen=True)
class AsyncUpdate:
    """One global update of the asynchronous parameter server."""

    time: float                 # simulated time of the update
    elapsed: float              # time since the previous update
    workers: tuple              # contributing worker ids, in arrival order
    versions: tuple             # model version each contribution was computed at
    jobs: tuple                 # per-worker gradient job index of each contribution
    staleness: tuple            # current version minus computed-at version
    comm_cost: int
    version: int                # model version the gradients are applied to


class AsyncPipeline:
    """Event-driven K-async parameter server.

    Every worker repeatedly computes a single minibatch gradient at the model
    version it last received. The server applies an update once ``K``
    gradients have arrived; only the contributing workers then fetch the new
    model and restart. Gradients from older versions are applied unmodified.
    """

    def __init__(self, clocks):
        self.clocks = clocks
        self.M = len(clocks)
        self.now = 0.0
        self.version = 0
        self.jobs_done = [0] * self.M
        self.started_version = [0] * self.M
        # (finish time, worker id); a worker holds at most one pending job
        self.queue = [(clocks[m].duration(0), m) for m in range(self.M)]
        self.start_time = [0.0] * self.M
        heapq.heapify(self.queue)

    def step(self, K):
        if not 1 <= K <= self.M:
            raise ValueError(f"K must lie in [1, {self.M}]")
        arrivals = [heapq.heappop(self.queue) for _ in range(K)]
        t = arrivals[-1][0]
        workers = tuple(m for _, m in arrivals)
        versions = tuple(self.started_version[m] for m in workers)
        jobs = tuple(self.jobs_done[m] for m in workers)
        event = AsyncUpdate(
            time=t, elapsed=t - self.now, workers=workers, versions=versions, jobs=jobs,
            staleness=tuple(self.version - v for v in versions), comm_cost=2 * K,
            version=self.version,
        )
        self.version += 1
        self.now = t
        for m in workers:
            self.jobs_done[m] += 1
            self.started_version[m] = self.version
            heapq.heappush(self.queue, (t + self.clocks[m].duration(self.jobs_done[m]), m))
        return event


def adasync_like_step(pipeline, K):
    """Advance the K-async server by one global update; see :class:`AsyncPipeline`."""
    event = pipeline.step(K)
    return event, event.elapsed, event.comm_cost


@dataclass
class AdaSyncState:
    """K grows geometrically at every ``interval`` of simulated time, capped at M."""

    M: int
    K0: int = 10
    growth: float = 2.0
    interval: float = 0.01
    elapsed: float = 0.0
    K: int = field(default=None)
    _boundaries_passed: int = 0

    def __post_init__(self):
        if self.K is None:
            self.K = min(self.K0, self.M)


def adasync_schedule_next(state, elapsed):
    state.elapsed += elapsed
    passed = int(state.elapsed // state.interval)
    while state._boundaries_passed < passed:
        state._boundaries_passed += 1
        state.K = min(state.M, int(round(state.K * state.growth)))
    return state.K
