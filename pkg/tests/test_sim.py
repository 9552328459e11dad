import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_scenario, saturated, single_device
from mmtcqos import qos, sim
from mmtcqos.exceptions import DomainError, NoEstimateError


def contention_trio():
    sc = make_scenario(system__n_devices=3, system__n_classes=1, system__n_preambles=2,
                       system__distances=[30.0, 40.0, 50.0], traffic__qos_exponent=[1e-3],
                       traffic__idle=[0.0], policy__d_min=1e-3, policy__d_max=0.999,
                       policy__fixed=[0.5])
    return sc, np.full((3, 1), 0.5)


def stats_equal(a, b):
    for name in ("attempts", "successes", "acks", "collided", "idle_count", "served_bits",
                 "arrived_bits", "queue_hist", "ack_ema"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.collisions == b.collisions and a.success_moments == b.success_moments


class TestContention:
    def test_exhaustive_trio(self):
        # every activation pattern x every preamble pattern of N=3, M=2
        N, M = 3, 2
        acts = np.array(list(itertools.product([False, True], repeat=N)))
        pres = np.array(list(itertools.product(range(M), repeat=N)))
        A = np.repeat(acts, len(pres), axis=0)
        P = np.tile(pres, (len(acts), 1))
        got = sim.resolve_contention(A, P, M)
        want = np.array([[a[n] and not any(a[m] and p[m] == p[n] for m in range(N) if m != n)
                          for n in range(N)] for a, p in zip(A, P)])
        np.testing.assert_array_equal(got, want)
        # weight each pattern by d = 1/2 and uniform preambles: exact analytic F_s
        assert got.mean(axis=0) == pytest.approx([0.5 * 0.75 ** 2] * N, abs=1e-15)
        np.testing.assert_allclose(got.mean(axis=0), qos.success_prob(0.5, [0.5, 0.5], M))
        for row, a, p in zip(got, A, P):
            for m in range(M):
                assert row[p == m].sum() <= 1

    def test_one_dim_matches_batched(self):
        rng = np.random.default_rng(0)
        a = rng.random((50, 20)) < 0.4
        p = rng.integers(0, 5, (50, 20))
        batched = sim.resolve_contention(a, p, 5)
        for i in range(50):
            np.testing.assert_array_equal(sim.resolve_contention(a[i], p[i], 5), batched[i])

    def test_bad_preamble(self):
        with pytest.raises(DomainError):
            sim.resolve_contention([True], [3], 2)


class TestStep:
    def test_no_traffic(self):
        sc = make_scenario(system__n_devices=4, traffic__arrival_prob=0.0)
        st_ = sim.run_simulation(sc, 0.9, 2000, 0, track_delays=True)
        for name in ("attempts", "successes", "acks", "collided", "served_bits", "arrived_bits"):
            assert not getattr(st_, name).any()
        assert st_.collisions == 0
        assert np.all(st_.idle_freq == 1.0)
        assert np.all(st_.queue_hist[..., 0] == st_.superframes)
        assert not st_.delay_hist.any()
        assert np.isnan(st_.ack_ema).all() or np.all(st_.ack_ema == 0)

    def test_lone_device_always_wins(self):
        sc = single_device(p=0.5)
        st_ = sim.run_simulation(sc, 1.0, 3000, 1, saturated=True)
        assert st_.successes[0, 0] == st_.superframes
        state = sim.SimState.create(sc, 2)
        for _ in range(200):
            ev = sim.step_superframe(state, np.ones((1, 1)))
            assert bool(ev.success[0]) == (ev.queue_index[0] >= 0)

    def test_conservation_and_gating(self):
        sc = make_scenario(system__n_devices=6, system__n_preambles=2, traffic__arrival_prob=0.05,
                           system__distances=[20.0, 30.0, 40.0, 50.0, 60.0, 70.0])
        state = sim.SimState.create(sc, 5)
        d = np.full(sc.shape, 0.7)
        k_seen = set()
        for _ in range(3000):
            ev = sim.step_superframe(state, d)
            np.testing.assert_array_equal(state.arrived, state.queue + state.served)
            assert np.all(state.queue >= 0)
            for n in range(sc.n_devices):
                k = ev.queue_index[n]
                if ev.active[n]:
                    assert k >= 0
                    assert np.all(ev.queue_before[n, :k] == 0)
                    assert ev.queue_before[n, k] > 0
                    k_seen.add(int(k))
                assert ev.drained[n] <= ev.queue_before[n, max(k, 0)]
                if not ev.delivered[n]:
                    assert ev.drained[n] == 0
            assert ev.delivered.sum() <= ev.success.sum() <= sc.n_preambles
        assert k_seen == {0, 1}

    def test_fifo_delays_on_fast_link(self):
        # a close device with d = 1 drains everything in the next access phase
        sc = single_device(distance=10.0, p=0.05)
        st_ = sim.run_simulation(sc, 1.0, 4000, 3, track_delays=True, warmup=0.0)
        spa = sc.slots_per_superframe
        done = st_.delay_hist[0, 0]
        assert done.sum() > 0
        assert done[0] == 0
        assert done[spa + 1:].sum() <= 2  # only PER failures wait longer
        assert st_.served_bits[0, 0] <= st_.arrived_bits[0, 0]

    def test_policy_validation(self):
        sc = single_device()
        with pytest.raises(DomainError):
            sim.run_simulation(sc, 1.5, 10, 0)
        with pytest.raises(DomainError):
            sim.run_simulation(sc, 0.5, 0, 0)
        with pytest.raises(DomainError):
            sim.run_simulation(sc, 0.5, 10, 0, warmup=1.0)


class TestStatistics:
    def test_trio_matches_analysis(self):
        sc, d = contention_trio()
        st_ = sim.run_simulation(sc, d, 10 ** 5, 11, warmup=0.0, saturated=True, hist_bins=1)
        want = qos.access_state(sc, qos.to_x(d)).success
        se = np.sqrt(want * (1 - want) / st_.superframes)
        assert np.all(np.abs(st_.success_freq - want) <= 3 * se)

    def test_deterministic(self):
        sc = make_scenario(system__n_devices=5, system__distances=[30.0] * 5, traffic__arrival_prob=0.2)
        a = sim.run_simulation(sc, 0.5, 3000, 42, track_delays=True)
        b = sim.run_simulation(sc, 0.5, 3000, 42, track_delays=True)
        stats_equal(a, b)
        np.testing.assert_array_equal(a.delay_hist, b.delay_hist)
        c = sim.run_simulation(sc, 0.5, 3000, 43)
        assert not np.array_equal(a.successes, c.successes)

    def test_standard_error_scaling(self):
        sc, d = contention_trio()
        se = [sim.run_simulation(sc, d, h, 0, warmup=0.0, saturated=True, hist_bins=1).success_se
              for h in (20000, 40000, 80000)]
        r2 = se[1] / se[0]
        r4 = se[2] / se[0]
        assert np.all(np.abs(r2 / (1 / math.sqrt(2)) - 1) <= 0.2)
        assert np.all(np.abs(r4 / 0.5 - 1) <= 0.2)

    def test_ack_ema_tracks_success(self):
        sc, d = contention_trio()
        w = 0.01
        st_ = sim.run_simulation(sc, d, 10 ** 5, 4, saturated=True, hist_bins=1, ema_weight=w)
        q = (1 - sc.per) * qos.access_state(sc, qos.to_x(d)).success
        sd = np.sqrt(q * (1 - q) * w / (2 - w))
        assert np.all(np.abs(st_.ack_ema - q) <= 3 * sd)
        se = np.sqrt(q * (1 - q) / st_.superframes)
        assert np.all(np.abs(st_.ack_freq - q) <= 3 * se)

    def test_pooled_success_total(self):
        sc, d = saturated(10, 2)
        st_ = sim.run_simulation(sc, d, 50000, 9, warmup=0.0, saturated=True, hist_bins=1)
        mean, se = st_.success_total_mean()
        want = qos.access_state(sc, qos.to_x(d)).success.sum()
        assert abs(mean - want) <= 3 * se
        assert mean == pytest.approx(st_.success_freq.sum())

    def test_idle_within_factor_two(self):
        sc = single_device(distance=60.0, p=0.1)
        x = np.array([[qos.to_x(0.9)]])
        th = qos.solve_qos_exponent(0, 0, sc, x)
        approx = float(qos.idle_prob_approx(th, 500.0))
        st_ = sim.run_simulation(sc, 0.9, 50000, 2, hist_bins=1)
        emp = float(st_.idle_freq[0, 0])
        assert 0.5 <= emp / approx <= 2.0

    def test_histograms_sum_to_events(self):
        sc = make_scenario(system__n_devices=3, system__distances=[30.0, 40.0, 50.0], traffic__arrival_prob=0.2)
        st_ = sim.run_simulation(sc, 0.6, 4000, 8, track_delays=True, hist_bins=50)
        assert np.all(st_.queue_hist.sum(axis=-1) == st_.superframes)
        q, tail = st_.tail_prob(0, 0)
        assert tail[0] == 1.0 and np.all(np.diff(tail) <= 0)
        assert q[1] == st_.hist_bin_bits
        rows = st_.histogram_csv(kind="queue").splitlines()
        assert rows[0] == "n,k,bin_lower,count"
        assert sum(int(r.split(",")[3]) for r in rows[1:]) == 6 * st_.superframes
        drows = st_.histogram_csv(kind="delay").splitlines()
        assert sum(int(r.split(",")[3]) for r in drows[1:]) == st_.delay_hist.sum()
        assert np.all((st_.success_freq >= 0) & (st_.success_freq <= 1))

    def test_summary_csv(self):
        st_ = sim.run_simulation(single_device(), 0.9, 500, 0)
        lines = st_.to_csv(header_comment="seed=0", replication=2).splitlines()
        assert lines[0] == "# seed=0"
        assert lines[1].startswith("replication,n,k,superframes")
        assert lines[2].startswith("2,0,0,450,")
        with pytest.raises(DomainError):
            st_.histogram_csv(kind="delay")


class TestAckEstimator:
    def test_all_acks(self):
        assert sim.estimate_success_prob([1] * 50) == 1.0

    def test_first_observation_seeds(self):
        assert sim.estimate_success_prob([0]) == 0.0
        assert sim.estimate_success_prob([0, 1], weight=0.25) == 0.25

    def test_alternating(self):
        w = 0.01
        v = sim.estimate_success_prob([1, 0] * 5000, weight=w)
        assert abs(v - 0.5) <= w

    def test_no_events(self):
        with pytest.raises(NoEstimateError):
            sim.estimate_success_prob([])
        with pytest.raises(DomainError):
            sim.estimate_success_prob([1], weight=0.0)

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=300), st.floats(0.001, 1.0))
    def test_matches_lfilter_ema(self, events, w):
        # the simulator folds the same recursion with a linear filter
        from scipy.signal import lfilter

        e = np.asarray(events, float)
        y, _ = lfilter([w], [1.0, w - 1.0], e[1:], zi=[(1 - w) * e[0]])
        want = y[-1] if e.size > 1 else e[0]
        assert sim.estimate_success_prob(events, w) == pytest.approx(want, abs=1e-12)
        assert 0.0 <= sim.estimate_success_prob(events, w) <= 1.0

    def test_simulated_estimator_feeds_game(self):
        sc, d = contention_trio()
        est = sim.SimulatedSuccessEstimator(sc, horizon=20000, seed=1, saturated=True)
        got = est(qos.to_x(d))
        want = (1 - sc.per) * qos.access_state(sc, qos.to_x(d)).success
        assert est.calls == 1
        np.testing.assert_allclose(got, want, atol=4 * math.sqrt(0.25 / 18000))


class TestDrivers:
    def test_replications_ordered_across_threads(self, monkeypatch):
        sc = make_scenario(system__n_devices=3, system__distances=[30.0, 40.0, 50.0])
        one = sim.run_replications(sc, 0.5, 800, 7, 4, threads=1)
        monkeypatch.setenv("MMTC_THREADS", "4")
        assert sim.thread_count() == 4
        many = sim.run_replications(sc, 0.5, 800, 7, 4)
        for a, b in zip(one, many):
            stats_equal(a, b)
        assert not np.array_equal(one[0].successes, one[1].successes)

    @pytest.mark.parametrize("raw, want", [("", 1), ("abc", 1), ("0", 1), ("-3", 1), ("6", 6)])
    def test_thread_count_parsing(self, monkeypatch, raw, want):
        monkeypatch.setenv("MMTC_THREADS", raw)
        assert sim.thread_count() == want

    def test_run_from_config(self):
        sc = make_scenario(system__n_devices=2, system__distances=[30.0, 40.0], sim__horizon=300,
                           sim__replications=2)
        out = sim.run_from_config(sc)
        assert len(out) == 2 and out[0].superframes == 270

    def test_empirical_idle(self):
        sc = single_device(distance=60.0, p=0.1)
        sc2, st_ = sim.empirical_idle(sc, 0.9, 5000, 0)
        np.testing.assert_allclose(sc2.idle, st_.idle_freq)
