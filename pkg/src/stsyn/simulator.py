"""Multi-round training driven by simulated worker clocks.

Randomness is split into independent keyed streams:

* timing: worker ``m``'s update durations in round ``j`` come from the stream
  ``(timing_seed, "timing", m, j)``. The stream does not depend on the scheme,
  so runs that share a timing seed see the same clocks (common random
  numbers).
* batches: the minibatches of worker ``m`` in round ``j`` come from the stream
  ``(batch_seed, "batch", m, j)``; step ``u`` uses row ``u``. Batches never
  depend on timing.

Evaluation of the full loss happens outside simulated time.
"""
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSpec, build_objective, partition_iid
from .errors import ConfigError, NonFiniteError
from .rng import derive_seed, keyed_rng
from .sgd import aggregate, check_finite, full_loss_and_grad, local_updates
from .strategies import (
    AdaCommState, AdaSyncState, AsyncPipeline, SchemeSpec, WorkerClock,
    adacomm_like_round, adacomm_schedule_next, adasync_like_step, adasync_schedule_next,
    fedavg_sampled_round, ksync_round, pasgd_round, stsyn_round,
)

log = logging.getLogger(__name__)

RECORD_FIELDS = ("j", "T", "T_cum", "C", "C_cum", "S_size", "U", "loss", "grad_sq_norm", "accuracy")


@dataclass(frozen=True)
class ExperimentConfig:
    workers: int
    scheme: SchemeSpec
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    alpha: float = 0.1
    batch_size: int = 100
    mu: float = 1e-4
    rounds: int = 100
    seed: int = 0
    eval_every: int = 1
    target_loss: float = None
    target_accuracy: float = None
    timing_seed: int = None     # overrides the stream derived from ``seed``
    batch_seed: int = None

    def validate(self):
        if self.workers < 1:
            raise ConfigError("run.workers", "must be >= 1")
        if self.rounds < 1:
            raise ConfigError("run.rounds", "must be >= 1")
        if not self.alpha > 0:
            raise ConfigError("run.alpha", "must be positive")
        if self.batch_size < 1:
            raise ConfigError("run.batch_size", "must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("run.eval_every", "must be >= 1")
        if not self.mu > 0:
            raise ConfigError("timing.mu", "must be positive")
        if self.dataset.n_samples < self.workers and self.dataset.kind != "file":
            raise ConfigError("objective.n_samples", "must be at least the number of workers")
        self.scheme.validate(self.workers)
        return self

    @property
    def timing_stream(self):
        return self.timing_seed if self.timing_seed is not None else derive_seed(self.seed, "timing")

    @property
    def batch_stream(self):
        return self.batch_seed if self.batch_seed is not None else derive_seed(self.seed, "batch")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class RoundRecord:
    j: int
    T: float
    T_cum: float
    C: int
    C_cum: int
    S_size: int
    U: list
    loss: float = None
    grad_sq_norm: float = None
    accuracy: float = None

    def as_dict(self):
        return {name: getattr(self, name) for name in RECORD_FIELDS}


@dataclass
class Trace:
    config: ExperimentConfig
    records: list
    final_model: np.ndarray
    termination: str                    # rounds-exhausted | target-reached | numeric-failure
    initial_loss: float = None
    initial_grad_sq_norm: float = None
    initial_accuracy: float = None
    models: list = None                 # w^0, w^1, ... when requested
    error: str = None


def round_clocks(timing_seed, M, j, mu):
    return [WorkerClock.exponential(keyed_rng(timing_seed, "timing", m, j), mu) for m in range(M)]


def batch_indices(shard, n_steps, batch_size, batch_seed, worker, j):
    """Minibatch index rows (with replacement) for ``n_steps`` local steps."""
    draws = keyed_rng(batch_seed, "batch", worker, j).random((n_steps, batch_size))
    return shard[(draws * len(shard)).astype(np.int64)]


def execute_plan(obj, w, plan, shards, alpha, batch_size, batch_seed, j):
    """Run every uploader's local updates from ``w`` and average the results."""
    workers = list(plan.uploaders)
    if not workers:
        raise ValueError("round has no uploading worker")
    counts = plan.updates[workers]
    idx = [batch_indices(shards[m], int(counts[i]), batch_size, batch_seed, m, j)
           for i, m in enumerate(workers)]
    W = np.tile(w, (len(workers), 1))
    for u in range(int(counts.max())):
        rows = np.flatnonzero(counts > u)
        step_idx = np.stack([idx[r][u] for r in rows])
        W[rows] = local_updates(obj, W[rows], step_idx, alpha)
    return aggregate(W)


class _Evaluator:
    def __init__(self, obj):
        self.obj = obj

    def __call__(self, w):
        loss, grad = full_loss_and_grad(self.obj, w)
        return loss, float(grad @ grad), self.obj.accuracy(w)


def _met_target(cfg, loss, acc):
    if cfg.target_loss is not None and loss is not None and loss <= cfg.target_loss:
        return True
    if cfg.target_accuracy is not None and acc is not None and acc >= cfg.target_accuracy:
        return True
    return False


def prepare(cfg):
    """Build the objective and the worker shards described by ``cfg``."""
    obj = build_objective(cfg.dataset)
    shards = partition_iid(obj.n_samples, cfg.workers, seed=derive_seed(cfg.seed, "partition"))
    return obj, shards


def run_experiment(cfg, obj=None, shards=None, keep_models=False, w0=None):
    """Run one training experiment and return its :class:`Trace`.

    ``obj``/``shards`` may be passed in to reuse a dataset across runs. The run
    stops after ``cfg.rounds`` rounds, when a target is met, or when a model
    turns non-finite (the partial trace is returned).
    """
    cfg.validate()
    if obj is None or shards is None:
        obj, shards = prepare(cfg)
    evaluate = _Evaluator(obj)
    w = np.zeros(obj.dim) if w0 is None else np.array(w0, dtype=np.float64)
    loss0, g0, acc0 = evaluate(w)
    trace = Trace(config=cfg, records=[], final_model=w, termination="rounds-exhausted",
                  initial_loss=loss0, initial_grad_sq_norm=g0, initial_accuracy=acc0,
                  models=[w.copy()] if keep_models else None)
    run = _run_async if cfg.scheme.kind == "adasync" else _run_sync
    try:
        run(cfg, obj, shards, w, trace, evaluate, keep_models)
    except NonFiniteError as exc:
        log.warning("numeric failure: %s", exc)
        trace.termination = "numeric-failure"
        trace.error = str(exc)
    return trace


def plan_round(cfg, j, clocks, adacomm=None):
    s = cfg.scheme
    if s.kind == "stsyn":
        return stsyn_round(clocks, s.K, s.U)
    if s.kind == "pasgd":
        return pasgd_round(clocks, s.U)
    if s.kind == "fedavg":
        return fedavg_sampled_round(clocks, s.sample_size, s.U, keyed_rng(cfg.seed, "sample", j))
    if s.kind == "ksync":
        return ksync_round(clocks, s.K)
    if s.kind == "adacomm":
        return adacomm_like_round(clocks, adacomm.tau)
    raise ValueError(f"scheme {s.kind!r} has no synchronous rounds")


def _record(trace, cfg, j, T, C, S, U, loss, gsq, acc):
    prev = trace.records[-1] if trace.records else None
    rec = RoundRecord(
        j=j, T=float(T), T_cum=float(T) + (prev.T_cum if prev else 0.0),
        C=int(C), C_cum=int(C) + (prev.C_cum if prev else 0), S_size=int(S),
        U=[int(u) for u in U], loss=loss, grad_sq_norm=gsq, accuracy=acc,
    )
    trace.records.append(rec)
    return rec


def _maybe_eval(cfg, j, w, evaluate):
    if (j + 1) % cfg.eval_every == 0 or j == cfg.rounds - 1:
        return evaluate(w)
    return None, None, None


def _run_sync(cfg, obj, shards, w, trace, evaluate, keep_models):
    timing_seed, batch_seed = cfg.timing_stream, cfg.batch_stream
    s = cfg.scheme
    adacomm = AdaCommState(s.tau0, s.gamma, s.interval) if s.kind == "adacomm" else None
    for j in range(cfg.rounds):
        clocks = round_clocks(timing_seed, cfg.workers, j, cfg.mu)
        plan = plan_round(cfg, j, clocks, adacomm)
        w = execute_plan(obj, w, plan, shards, cfg.alpha, cfg.batch_size, batch_seed, j)
        trace.final_model = w
        if keep_models:
            trace.models.append(w.copy())
        if adacomm is not None:
            adacomm_schedule_next(adacomm, plan.duration)
        loss, gsq, acc = _maybe_eval(cfg, j, w, evaluate)
        _record(trace, cfg, j, plan.duration, plan.comm_cost, plan.n_uploaders, plan.updates, loss, gsq, acc)
        if _met_target(cfg, loss, acc):
            trace.termination = "target-reached"
            return


def _run_async(cfg, obj, shards, w, trace, evaluate, keep_models):
    """K-async updates, one pseudo-round per global update."""
    timing_seed, batch_seed = cfg.timing_stream, cfg.batch_stream
    s = cfg.scheme
    M = cfg.workers
    # async clocks live across rounds, so they are keyed by worker only
    clocks = [WorkerClock.exponential(keyed_rng(timing_seed, "timing", m), cfg.mu) for m in range(M)]
    pipeline = AsyncPipeline(clocks)
    state = AdaSyncState(M, s.K0, s.growth, s.interval)
    versions = {0: w}
    for j in range(cfg.rounds):
        event, elapsed, cost = adasync_like_step(pipeline, state.K)
        W = np.stack([versions[v] for v in event.versions])
        idx = np.stack([
            batch_indices(shards[m], 1, cfg.batch_size, batch_seed, m, job)[0]
            for m, job in zip(event.workers, event.jobs)
        ])
        grads = check_finite(obj.batch_gradients(W, idx), "gradient")
        w = check_finite(w - cfg.alpha * aggregate(grads))
        versions[pipeline.version] = w
        live = set(pipeline.started_version)
        versions = {v: m for v, m in versions.items() if v in live}
        trace.final_model = w
        if keep_models:
            trace.models.append(w.copy())
        counts = np.bincount(np.asarray(event.workers), minlength=M)
        K_used = len(event.workers)
        adasync_schedule_next(state, elapsed)
        loss, gsq, acc = _maybe_eval(cfg, j, w, evaluate)
        _record(trace, cfg, j, elapsed, cost, K_used, counts, loss, gsq, acc)
        if _met_target(cfg, loss, acc):
            trace.termination = "target-reached"
            return


# -- targets and sweeps ---------------------------------------------------------

def _first_hit(trace, target, metric):
    for rec in trace.records:
        value = getattr(rec, metric)
        if value is None:
            continue
        if (metric == "accuracy" and value >= target) or (metric != "accuracy" and value <= target):
            return rec
    return None


def time_to_target(trace, target, metric="loss"):
    """Cumulative wall-clock at the first record meeting ``target``, else ``None``.

    Loss-like metrics must fall to ``target``; accuracy must rise to it.
    """
    rec = _first_hit(trace, target, metric)
    return None if rec is None else rec.T_cum


def comm_to_target(trace, target, metric="loss"):
    rec = _first_hit(trace, target, metric)
    return None if rec is None else rec.C_cum


@dataclass
class SweepPoint:
    value: object
    trace: Trace = None
    error: str = None


def sweep_config(base, axis, value):
    if axis in ("K", "U", "sample_size", "tau0", "K0"):
        return base.replace(scheme=dataclasses.replace(base.scheme, **{axis: int(value)}))
    if axis == "scheme":
        return base.replace(scheme=dataclasses.replace(base.scheme, kind=str(value)))
    raise ConfigError("axis", f"unsupported sweep axis {axis!r}")


def _sweep_one(args):
    cfg, data = args
    try:
        obj, shards = data if data is not None else prepare(cfg)
        return run_experiment(cfg, obj, shards), None
    except Exception as exc:  # one bad point must not abort the sweep
        return None, f"{type(exc).__name__}: {exc}"


def run_sweep(base, axis, values, n_jobs=1):
    """One trace per value of ``axis``; all points share the timing streams.

    Failing points are reported in :attr:`SweepPoint.error` instead of raising.
    """
    configs = []
    points = []
    for v in values:
        try:
            configs.append(sweep_config(base, axis, v))
            points.append(SweepPoint(v))
        except ConfigError as exc:
            points.append(SweepPoint(v, error=str(exc)))
            configs.append(None)
    todo = [(i, c) for i, c in enumerate(configs) if c is not None]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_sweep_one, [(c, None) for _, c in todo]))
    else:
        data = prepare(base)
        results = [_sweep_one((c, data)) for _, c in todo]
    for (i, _), (trace, err) in zip(todo, results):
        points[i].trace = trace
        points[i].error = err
    return points
