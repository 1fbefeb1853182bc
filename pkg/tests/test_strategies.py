import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsyn.errors import ConfigError
from stsyn.strategies import (
    AdaCommState, AdaSyncState, AsyncPipeline, SchemeSpec, WorkerClock, adacomm_like_round,
    adacomm_schedule_next, adasync_like_step, adasync_schedule_next, fedavg_sampled_round,
    ksync_round, pasgd_round, stsyn_round,
)


def const_clocks(*durations):
    return [WorkerClock.constant(d) for d in durations]


class TestWorkerClock:
    def test_completion_and_count(self):
        c = WorkerClock([1.0, 2.0, 0.5])
        assert c.completion_time(0) == 0.0
        assert c.completion_time(2) == 3.0
        assert c.completed_by(2.999) == 1
        assert c.completed_by(3.0) == 2   # an update ending exactly at t counts
        assert c.completed_by(10.0) == 3
        with pytest.raises(IndexError):
            c.completion_time(4)

    def test_extension_is_consistent(self):
        rng = np.random.default_rng(0)
        c = WorkerClock.exponential(rng, 1.0, chunk=3)
        t = c.completion_time(20)
        assert c.completed_by(t) == 20
        assert c.completed_by(np.nextafter(t, 0)) == 19
        assert c.duration(25) > 0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            WorkerClock([1.0, 0.0])


class TestHandTraces:
    def test_stsyn_three_workers(self):
        plan = stsyn_round(const_clocks(1.0, 2.0, 5.0), K=2, U=2)
        assert plan.cutoff == 4.0 and plan.duration == 4.0
        assert plan.updates.tolist() == [4, 2, 0]
        assert plan.uploaders == (0, 1)
        assert plan.comm_cost == 5
        assert plan.participants == (0, 1, 2)

    def test_pasgd_three_workers(self):
        plan = pasgd_round(const_clocks(1.0, 2.0, 5.0), U=2)
        assert plan.duration == 10.0 and plan.comm_cost == 6
        assert plan.updates.tolist() == [2, 2, 2]

    def test_ksync_three_workers(self):
        plan = ksync_round(const_clocks(1.0, 2.0, 5.0), K=2)
        assert plan.duration == 2.0
        assert plan.uploaders == (0, 1)
        assert plan.updates.tolist() == [1, 1, 0]
        assert plan.comm_cost == 5

    def test_stsyn_tie_broken_by_worker_id(self):
        plan = stsyn_round(const_clocks(1.0, 1.0, 3.0), K=1, U=2)
        assert plan.cutoff == 2.0
        assert plan.updates.tolist() == [2, 2, 0]

    def test_stsyn_cancels_update_in_flight(self):
        clocks = [WorkerClock([1.0, 1.0]), WorkerClock([0.5, 2.0, 1.0])]
        plan = stsyn_round(clocks, K=1, U=2)
        # worker 1 finished its first update at 0.5; its second would end at 2.5
        assert plan.cutoff == 2.0 and plan.updates.tolist() == [2, 1]

    def test_fedavg_subset(self):
        rng = np.random.default_rng(0)
        plan = fedavg_sampled_round(const_clocks(1.0, 2.0, 5.0, 0.5), 2, 3, rng)
        assert len(plan.uploaders) == 2 and plan.comm_cost == 4
        assert plan.duration == max(3 * [1.0, 2.0, 5.0, 0.5][m] for m in plan.uploaders)
        assert sorted(np.flatnonzero(plan.updates)) == list(plan.uploaders)


class TestAsync:
    def test_staleness_trace(self):
        pipe = AsyncPipeline(const_clocks(1.0, 2.5))
        events = [adasync_like_step(pipe, 1)[0] for _ in range(4)]
        assert [e.time for e in events] == [1.0, 2.0, 2.5, 3.0]
        assert [e.workers for e in events] == [(0,), (0,), (1,), (0,)]
        assert [e.staleness for e in events] == [(0,), (0,), (2,), (1,)]
        assert [e.jobs for e in events] == [(0,), (1,), (0,), (2,)]
        assert events[2].elapsed == 0.5 and events[2].comm_cost == 2

    def test_k_equals_m_is_synchronous(self):
        pipe = AsyncPipeline(const_clocks(1.0, 2.0, 3.0))
        for _ in range(3):
            e = pipe.step(3)
            assert set(e.staleness) == {0}
        assert pipe.now == 9.0

    def test_adasync_schedule(self):
        s = AdaSyncState(M=40, K0=10, growth=2.0, interval=0.01)
        assert adasync_schedule_next(s, 0.009) == 10
        assert adasync_schedule_next(s, 0.002) == 20
        assert adasync_schedule_next(s, 0.05) == 40   # capped at M


class TestAdaComm:
    def test_decay_schedule(self):
        s = AdaCommState(tau0=20, gamma=0.5, interval=0.01)
        assert adacomm_schedule_next(s, 0.005) == 20
        assert adacomm_schedule_next(s, 0.007) == 10
        assert adacomm_schedule_next(s, 0.023) == 2
        assert adacomm_schedule_next(s, 1.0) == 1

    def test_round(self):
        plan = adacomm_like_round(const_clocks(1.0, 2.0), 3)
        assert plan.duration == 6.0 and plan.comm_cost == 4
        with pytest.raises(ValueError):
            adacomm_like_round(const_clocks(1.0), 0)


durations = st.lists(st.floats(0.01, 10.0), min_size=30, max_size=30)


@given(st.lists(durations, min_size=1, max_size=8), st.data())
@settings(max_examples=200, deadline=None)
def test_stsyn_invariants(rows, data):
    M = len(rows)
    K = data.draw(st.integers(1, M))
    U = data.draw(st.integers(1, 5))
    st_plan = stsyn_round([WorkerClock(r) for r in rows], K, U)
    pa_plan = pasgd_round([WorkerClock(r) for r in rows], U)
    assert st_plan.duration <= pa_plan.duration
    assert np.count_nonzero(st_plan.updates >= U) >= K
    assert M + 1 <= st_plan.comm_cost <= 2 * M
    assert st_plan.comm_cost == M + st_plan.n_uploaders
    for m, r in enumerate(rows):
        done = np.cumsum(r)
        n = st_plan.updates[m]
        assert n == 0 or done[n - 1] <= st_plan.cutoff
        assert n == len(r) or done[n] > st_plan.cutoff
    if K == M:
        assert st_plan.duration == pa_plan.duration
        assert np.all(st_plan.updates >= U)


class TestSchemeSpec:
    def test_requirements(self):
        with pytest.raises(ConfigError) as exc:
            SchemeSpec("stsyn", K=3).validate(5)
        assert exc.value.key == "scheme.U"
        with pytest.raises(ConfigError) as exc:
            SchemeSpec("stsyn", K=6, U=1).validate(5)
        assert exc.value.key == "scheme.K"
        with pytest.raises(ConfigError) as exc:
            SchemeSpec("nope").validate(5)
        assert exc.value.key == "scheme.kind"
        SchemeSpec("adasync").validate(5)

    def test_bad_round_args(self):
        with pytest.raises(ValueError):
            stsyn_round(const_clocks(1.0), 2, 1)
        with pytest.raises(ValueError):
            ksync_round(const_clocks(1.0), 0)
