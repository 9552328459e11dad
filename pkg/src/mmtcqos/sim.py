"""Superframe-level simulator of priority-queueing ACB random access.

Every superframe runs the same four steps for all devices at once:

1. slotted arrivals into the ``K`` queues of every device,
2. the ACB gate on the highest-priority nonempty queue,
3. uniform preamble choice and collision resolution,
4. a finite-blocklength data transmission under a fresh fading draw that
   either drains up to ``floor(r S)`` bits (probability ``1 - eps``) or nothing.

Queue contents are integer bits, so arrived = queued + served holds exactly.
Randomness comes from five independent streams spawned from the seed
(arrivals, ACB, preamble, PER, fading) and is drawn in fixed-size blocks;
a given seed always yields the same trajectory.
"""

from __future__ import annotations

import csv
import io
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import phy, qos
from .exceptions import DomainError, NoEstimateError
from .validation import check_scenario

BLOCK = 512
STREAMS = ("arrivals", "acb", "preamble", "per", "fading")


# ---------------------------------------------------------------------------
# contention


def resolve_contention(active, preambles, M: int) -> np.ndarray:
    """Success flags: a device wins iff it is active and alone on its preamble.

    Works on ``(..., N)`` arrays; leading axes are independent contention
    rounds.
    """
    active = np.asarray(active, dtype=bool)
    preambles = np.asarray(preambles, dtype=np.int64)
    if np.any(preambles < 0) or np.any(preambles >= M):
        raise DomainError("preamble index outside [0, M)")
    if active.ndim == 1:
        return _contend(active, preambles, M)[0]
    lead = active.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    a = active.reshape(rows, -1)
    p = preambles.reshape(rows, -1)
    flat = p + M * np.arange(rows)[:, None]
    counts = np.bincount(flat[a], minlength=rows * M)
    return (a & (counts[flat] == 1)).reshape(active.shape)


# ---------------------------------------------------------------------------
# state and statistics


@dataclass
class SimStats:
    """Counters accumulated after warm-up.

    Success and ACK counts are per superframe: ``successes[n, k] /
    superframes`` estimates the unconditional contention success
    probability of queue ``(n, k)``.
    """

    superframes: int
    attempts: np.ndarray
    successes: np.ndarray
    acks: np.ndarray
    collided: np.ndarray
    idle_count: np.ndarray
    collisions: int
    served_bits: np.ndarray
    arrived_bits: np.ndarray
    queue_hist: np.ndarray
    delay_hist: np.ndarray | None
    hist_bin_bits: int
    ack_ema: np.ndarray
    success_moments: tuple = (0, 0)  # sum and sum of squares of per-superframe success totals

    @property
    def success_freq(self) -> np.ndarray:
        return self.successes / max(self.superframes, 1)

    @property
    def success_se(self) -> np.ndarray:
        f = self.success_freq
        return np.sqrt(f * (1.0 - f) / max(self.superframes, 1))

    @property
    def ack_freq(self) -> np.ndarray:
        return self.acks / max(self.superframes, 1)

    @property
    def idle_freq(self) -> np.ndarray:
        return self.idle_count / max(self.superframes, 1)

    def success_total_mean(self) -> tuple[float, float]:
        """Mean and standard error of the number of contention winners per superframe."""
        n = max(self.superframes, 1)
        s1, s2 = self.success_moments
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
        return mean, float(np.sqrt(var / n))

    def tail_prob(self, n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(q, P(Q >= q))`` at the histogram bin edges for queue ``(n, k)``."""
        h = self.queue_hist[n, k].astype(float)
        surv = h[::-1].cumsum()[::-1] / max(h.sum(), 1.0)
        return np.arange(h.size) * self.hist_bin_bits, surv

    def summary_rows(self):
        rows = []
        for n in range(self.attempts.shape[0]):
            for k in range(self.attempts.shape[1]):
                rows.append([
                    n, k, self.superframes, int(self.attempts[n, k]), int(self.successes[n, k]),
                    repr(float(self.success_freq[n, k])), repr(float(self.success_se[n, k])),
                    repr(float(self.ack_freq[n, k])), repr(float(self.ack_ema[n, k])),
                    repr(float(self.idle_freq[n, k])), int(self.collided[n, k]),
                    int(self.served_bits[n, k]), int(self.arrived_bits[n, k]),
                ])
        return rows

    SUMMARY_HEADER = ["n", "k", "superframes", "attempts", "successes", "F_s_hat", "F_s_se",
                      "ack_hat", "ack_ema", "idle_hat", "collided", "served_bits", "arrived_bits"]

    def to_csv(self, fh=None, header_comment: str | None = None, replication: int | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        rep = [] if replication is None else ["replication"]
        w.writerow(rep + self.SUMMARY_HEADER)
        for row in self.summary_rows():
            w.writerow(([replication] if replication is not None else []) + row)
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    def histogram_csv(self, fh=None, header_comment: str | None = None, kind: str = "queue") -> str:
        """Rows ``(n, k, bin_lower, count)``; ``kind`` is ``queue`` (bits) or ``delay`` (slots)."""
        hist = self.queue_hist if kind == "queue" else self.delay_hist
        if hist is None:
            raise DomainError("delay histogram was not recorded")
        width = self.hist_bin_bits if kind == "queue" else 1
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "k", "bin_lower", "count"])
        for n, k, b in zip(*np.nonzero(hist)):
            w.writerow([n, k, int(b) * width, int(hist[n, k, b])])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


@dataclass
class SuperframeEvents:
    """What happened in one superframe (before the queues were drained)."""

    queue_before: np.ndarray  # (N, K) bits after arrivals, at access time
    queue_index: np.ndarray  # (N,) queue that passed the priority gate, -1 if none
    active: np.ndarray  # (N,) passed the ACB coin
    preamble: np.ndarray  # (N,)
    success: np.ndarray  # (N,) won contention
    delivered: np.ndarray  # (N,) data decoded
    drained: np.ndarray  # (N,) bits removed from the gated queue
    collisions: int


@dataclass
class SimState:
    """Queues, clocks and RNG streams of one replication."""

    scenario: object
    rngs: dict
    queue: np.ndarray
    arrived: np.ndarray
    served: np.ndarray
    superframe: int = 0
    saturated: bool = False
    packets: list | None = None
    _buf: dict = field(default_factory=dict, repr=False)
    _pos: int = BLOCK

    @classmethod
    def create(cls, scenario, seed: int, *, saturated: bool = False, track_delays: bool = False):
        scenario = check_scenario(scenario)
        children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
        rngs = {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}
        shape = scenario.shape
        packets = [[deque() for _ in range(shape[1])] for _ in range(shape[0])] if track_delays else None
        return cls(scenario, rngs, np.zeros(shape, np.int64), np.zeros(shape, np.int64),
                   np.zeros(shape, np.int64), saturated=saturated, packets=packets)

    def _refill(self):
        sc = self.scenario
        N, K = sc.shape
        spa = sc.slots_per_superframe
        r = self.rngs
        hit = r["arrivals"].random((BLOCK, spa, N, K)) < sc.arrival_prob[None, None, :, None]
        size = np.maximum(1, np.rint(r["arrivals"].exponential(1.0, (BLOCK, spa, N, K)) * sc.mean_bits))
        slot_bits = np.where(hit, size, 0).astype(np.int64)
        h = sc.channel.sample_power_gain(r["fading"], (BLOCK, N))
        snr = sc.snr_mean[None] * h[..., None]
        rate = phy.finite_blocklength_rate(snr, sc.symbols, sc.per[None])
        self._buf = {
            "slot_bits": slot_bits,
            "bits": slot_bits.sum(axis=1),
            "acb": r["acb"].random((BLOCK, N)),
            "preamble": r["preamble"].integers(0, sc.n_preambles, (BLOCK, N)),
            "per": r["per"].random((BLOCK, N)),
            "cap": np.floor(rate * sc.symbols).astype(np.int64),
        }
        self._pos = 0

    def _advance(self) -> int:
        if self._pos >= BLOCK:
            self._refill()
        i = self._pos
        self._pos += 1
        return i


def _contend(active, preambles, M: int):
    counts = np.bincount(preambles[active], minlength=M)
    return active & (counts[preambles] == 1), int(np.count_nonzero(counts >= 2))


def step_superframe(state: SimState, policy) -> SuperframeEvents:
    """Advance ``state`` by one superframe under barring probabilities ``policy`` (N, K)."""
    sc = state.scenario
    d = np.asarray(policy, dtype=float)
    i = state._advance()
    buf = state._buf
    rows = np.arange(sc.n_devices)

    bits = buf["bits"][i]
    state.queue += bits
    state.arrived += bits
    if state.packets is not None:
        t0 = state.superframe * sc.slots_per_superframe
        sb = buf["slot_bits"][i]
        for s, n, k in zip(*np.nonzero(sb)):
            state.packets[n][k].append([int(sb[s, n, k]), t0 + int(s)])

    before = state.queue.copy()
    if state.saturated:
        kidx = np.zeros(sc.n_devices, np.intp)
        has = np.ones(sc.n_devices, bool)
    else:
        nonempty = before > 0
        kidx = nonempty.argmax(axis=1)  # first nonempty queue, 0 when all are empty
        has = nonempty[rows, kidx]
    active = has & (buf["acb"][i] < d[rows, kidx])
    pre = buf["preamble"][i]
    success, ncoll = _contend(active, pre, sc.n_preambles)
    delivered = success & (buf["per"][i] >= sc.per[rows, kidx])

    if state.saturated:
        amount = np.zeros(sc.n_devices, np.int64)
    else:
        amount = np.minimum(before[rows, kidx], buf["cap"][i][rows, kidx]) * delivered
        state.queue[rows, kidx] -= amount
        state.served[rows, kidx] += amount
    state.superframe += 1
    return SuperframeEvents(before, np.where(has, kidx, -1), active, pre, success, delivered,
                            amount, ncoll)


def _drain_packets(state: SimState, ev: SuperframeEvents, t_done: int, delay_hist) -> None:
    for n in np.nonzero(ev.drained)[0]:
        k = ev.queue_index[n]
        left = int(ev.drained[n])
        q = state.packets[n][k]
        while left > 0:
            pkt = q[0]
            take = min(left, pkt[0])
            pkt[0] -= take
            left -= take
            if pkt[0] == 0:
                q.popleft()
                if delay_hist is not None:
                    b = min(t_done - pkt[1], delay_hist.shape[-1] - 1)
                    delay_hist[n, k, b] += 1


# ---------------------------------------------------------------------------
# drivers


def _as_d(policy, scenario) -> np.ndarray:
    if isinstance(policy, qos.BarringPolicy):
        d = policy.d
    else:
        d = np.asarray(policy, dtype=float)
    d = np.broadcast_to(d, scenario.shape).astype(float)
    if np.any(d < 0) or np.any(d > 1):
        raise DomainError("barring probabilities must lie in [0, 1]")
    return d


class _Accumulator:
    """Buffers per-superframe events and folds them into counters blockwise."""

    def __init__(self, N: int, K: int, bins: int, bin_bits: int, weight: float):
        self.N, self.K, self.bins, self.bin_bits, self.w = N, K, bins, bin_bits, weight
        z = lambda: np.zeros(N * K, np.int64)  # noqa: E731
        self.attempts, self.successes, self.acks, self.collided, self.idle = z(), z(), z(), z(), z()
        self.collisions = 0
        self.s1 = self.s2 = 0
        self.qhist = np.zeros(N * K * bins, np.int64)
        self.ema = np.full(N * K, np.nan)
        self.kidx = np.zeros((BLOCK, N), np.intp)
        self.flags = np.zeros((3, BLOCK, N), bool)  # active, success, delivered
        self.empty = np.zeros((BLOCK, N, K), bool)
        self.after = np.zeros((BLOCK, N, K), np.int64)
        self.ncoll = np.zeros(BLOCK, np.int64)
        self.fill = 0

    def add(self, ev: SuperframeEvents, queue_after) -> None:
        j = self.fill
        self.kidx[j] = ev.queue_index
        self.flags[0, j], self.flags[1, j], self.flags[2, j] = ev.active, ev.success, ev.delivered
        self.empty[j] = ev.queue_before == 0
        self.after[j] = queue_after
        self.ncoll[j] = ev.collisions
        self.fill += 1
        if self.fill == BLOCK:
            self.flush()

    def flush(self) -> None:
        m = self.fill
        if m == 0:
            return
        NK = self.N * self.K
        cell = np.arange(self.N) * self.K + np.maximum(self.kidx[:m], 0)
        for target, flag in ((self.attempts, self.flags[0, :m]), (self.successes, self.flags[1, :m]),
                             (self.acks, self.flags[2, :m])):
            target += np.bincount(cell[flag], minlength=NK)
        lost = self.flags[0, :m] & ~self.flags[1, :m]
        self.collided += np.bincount(cell[lost], minlength=NK)
        self.collisions += int(self.ncoll[:m].sum())
        wins = self.flags[1, :m].sum(axis=1)
        self.s1 += int(wins.sum())
        self.s2 += int((wins * wins).sum())
        self.idle += self.empty[:m].reshape(m, NK).sum(axis=0)
        b = np.minimum(self.after[:m].reshape(m, NK) // self.bin_bits, self.bins - 1)
        self.qhist += np.bincount((b + np.arange(NK) * self.bins).ravel(), minlength=NK * self.bins)
        ind = np.zeros((m, NK))
        r, c = np.nonzero(self.flags[2, :m])
        ind[r, cell[r, c]] = 1.0
        first = np.isnan(self.ema)
        self.ema[first] = ind[0, first]
        y, _ = lfilter([self.w], [1.0, self.w - 1.0], ind, axis=0, zi=((1.0 - self.w) * self.ema)[None])
        self.ema = y[-1]
        self.fill = 0

    def shaped(self, a):
        return a.reshape(self.N, self.K, *a.shape[1:]) if a.ndim > 1 else a.reshape(self.N, self.K)


def run_simulation(scenario, policy, horizon: int, seed: int, *, warmup: float = 0.1,
                   saturated: bool = False, track_delays: bool = False, hist_bin_bits: int = 100,
                   hist_bins: int = 2000, ema_weight: float = 0.01) -> SimStats:
    """Simulate ``horizon`` superframes and aggregate statistics after warm-up.

    Parameters
    ----------
    scenario : Scenario or config-like
    policy : array_like or BarringPolicy
        Barring probabilities ``d``, broadcast to ``(N, K)``.
    horizon : int
        Total superframes, warm-up included.
    seed : int
        Root seed of the five random streams.
    warmup : float
        Fraction of ``horizon`` discarded before counting.
    saturated : bool
        Treat every queue as permanently backlogged (contention only).
    track_delays : bool
        Keep packet-level FIFO queues and histogram completion delays (slots).
    """
    scenario = check_scenario(scenario)
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    if not 0.0 <= warmup < 1.0:
        raise DomainError("warmup fraction must lie in [0, 1)")
    if hist_bins < 1 or hist_bin_bits < 1:
        raise DomainError("histogram needs at least one bin of positive width")
    d = _as_d(policy, scenario)
    state = SimState.create(scenario, seed, saturated=saturated, track_delays=track_delays)
    N, K = scenario.shape
    spa = scenario.slots_per_superframe
    skip = int(horizon * warmup)
    acc = _Accumulator(N, K, hist_bins, hist_bin_bits, ema_weight)
    dhist = np.zeros((N, K, hist_bins), np.int64) if track_delays else None
    served0 = arrived0 = None

    for t in range(horizon):
        if t == skip:
            served0, arrived0 = state.served.copy(), state.arrived.copy()
        ev = step_superframe(state, d)
        if state.packets is not None:
            _drain_packets(state, ev, (t + 1) * spa, dhist if t >= skip else None)
        if t >= skip:
            acc.add(ev, state.queue)
    acc.flush()

    return SimStats(
        superframes=horizon - skip, attempts=acc.shaped(acc.attempts),
        successes=acc.shaped(acc.successes), acks=acc.shaped(acc.acks),
        collided=acc.shaped(acc.collided), idle_count=acc.shaped(acc.idle),
        collisions=acc.collisions, served_bits=state.served - served0,
        arrived_bits=state.arrived - arrived0,
        queue_hist=acc.qhist.reshape(N, K, hist_bins), delay_hist=dhist,
        hist_bin_bits=hist_bin_bits, ack_ema=acc.shaped(acc.ema),
        success_moments=(acc.s1, acc.s2),
    )


def thread_count(default: int = 1) -> int:
    """Worker cap from ``MMTC_THREADS`` (invalid or missing values give ``default``)."""
    raw = os.environ.get("MMTC_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


def run_replications(scenario, policy, horizon: int, seed: int, replications: int, *,
                     threads: int | None = None, **kwargs) -> list[SimStats]:
    """Independent replications with child seeds; results are ordered by index."""
    scenario = check_scenario(scenario)
    if replications < 1:
        raise DomainError("replications must be >= 1")
    seeds = [int(s.generate_state(1, np.uint64)[0])
             for s in np.random.SeedSequence(int(seed)).spawn(replications)]
    threads = thread_count() if threads is None else threads

    def one(s):
        return run_simulation(scenario, policy, horizon, s, **kwargs)

    if threads <= 1 or replications == 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))


def run_from_config(scenario, policy=None, *, seed: int | None = None, replications: int | None = None,
                    threads: int | None = None) -> list[SimStats]:
    """Replications with every knob taken from the scenario's ``sim`` section."""
    scenario = check_scenario(scenario)
    cfg = scenario.config.sim
    policy = scenario.fixed_policy() if policy is None else policy
    return run_replications(
        scenario, policy, cfg.horizon, scenario.config.seed if seed is None else seed,
        cfg.replications if replications is None else replications, threads=threads,
        warmup=cfg.warmup, saturated=cfg.saturated, track_delays=cfg.track_delays,
        hist_bin_bits=cfg.hist_bin_bits, hist_bins=cfg.hist_bins, ema_weight=cfg.ema_weight,
    )


def empirical_idle(scenario, policy, horizon: int = 20000, seed: int = 0):
    """Scenario whose idle-probability table is measured by simulation.

    The queues are simulated under ``policy`` and the fraction of access
    phases that found each queue empty replaces the analytic table.
    """
    scenario = check_scenario(scenario)
    stats = run_simulation(scenario, policy, horizon, seed, hist_bins=1)
    return scenario.with_idle(stats.idle_freq), stats


# ---------------------------------------------------------------------------
# ACK-based estimation


def estimate_success_prob(ack_events, weight: float = 0.01) -> float:
    """Exponentially weighted average of 0/1 ACK indicators, oldest first.

    The first observation initialises the average.

    Raises
    ------
    NoEstimateError
        If there are no observations.
    """
    ev = np.asarray(ack_events, dtype=float).ravel()
    if ev.size == 0:
        raise NoEstimateError("no ACK observations yet")
    if not 0.0 < weight <= 1.0:
        raise DomainError("EMA weight must lie in (0, 1]")
    est = ev[0]
    for v in ev[1:]:
        est += weight * (v - est)
    return float(est)


class SimulatedSuccessEstimator:
    """Success-probability oracle for distributed best responses.

    Each call simulates the contention process at the candidate policy and
    returns the empirical ``(1 - eps) F_s`` per queue, as the ACK counter of
    a device would. Successive calls use successive seeds.
    """

    def __init__(self, scenario, horizon: int = 2000, seed: int = 0, saturated: bool = False,
                 ema_weight: float | None = None):
        self.scenario = check_scenario(scenario)
        self.horizon = horizon
        self.seed = seed
        self.saturated = saturated
        self.ema_weight = ema_weight
        self.calls = 0

    def __call__(self, x) -> np.ndarray:
        stats = run_simulation(self.scenario, qos.to_d(x), self.horizon, self.seed + self.calls,
                               warmup=0.1, saturated=self.saturated, hist_bins=1,
                               ema_weight=self.ema_weight or 0.01)
        self.calls += 1
        if self.ema_weight is not None:
            return np.nan_to_num(stats.ack_ema)
        return stats.ack_freq
