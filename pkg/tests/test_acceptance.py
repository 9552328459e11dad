"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and echoed in the terminal summary
(see ``conftest.pytest_terminal_summary``), so they show without ``-s``.
Running this file directly also prints them.
"""

import json
import math
import time

import mpmath as mp
import numpy as np
import pytest

from conftest import make_scenario, saturated, single_device, tiny_pair
from mmtcqos import baseline, cli, game, phy, pricing, qos, sim, traffic

RESULTS = {}


def report(number, ok, detail, started):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - started:.1f} s)"
    RESULTS[number] = line
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------

def test_criterion_01_blocklength_sanity():
    t0 = time.perf_counter()
    snr = np.logspace(-6, 6, 2001)
    half = phy.finite_blocklength_rate(snr, 1000, 0.5)
    # the dispersion penalty vanishes: Qinv(1/2) is exactly zero
    exact = phy.q_inv(0.5) == 0.0 and phy.finite_blocklength_rate(3.0, 1000, 0.5) == 2.0
    exact = exact and float(np.max(np.abs(half / (np.log1p(snr) / math.log(2)) - 1))) <= 4 * np.finfo(float).eps
    far = phy.finite_blocklength_rate(snr, 1e10, 1e-5)
    shannon_err = float(np.max(np.abs(far - np.log2(1 + snr))))
    mono = True
    for S in (50, 200, 1000, 1079, 1e4):
        for eps in (1e-2, 1e-5, 1e-7):
            r = phy.finite_blocklength_rate(snr, S, eps)
            mono &= bool(np.all(np.diff(r) >= 0))
    ok = exact and shannon_err <= 1e-3 and mono
    report(1, ok, f"eps=1/2 exact={exact}, max|r - shannon| at S=1e10: {shannon_err:.2e}, monotone={mono}", t0)


# 2 -------------------------------------------------------------------------

EB_COMBOS = [(5e-4, 0.5, 500.0), (2.5e-4, 0.3, 1000.0), (1e-3, 0.4, 200.0), (2e-3, 0.8, 100.0),
             (1e-5, 0.6, 500.0)]


def test_criterion_02_effective_bandwidth_monte_carlo():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    T_d = 0.5e-3
    errs = []
    for th, p, L in EB_COMBOS:
        x = traffic.sample_arrival(rng, p, L, 10 ** 6)
        est = math.log(np.mean(np.exp(th * x))) / (th * T_d)
        want = traffic.effective_bandwidth(th, p, L, T_d)
        errs.append(abs(est - want) / want)
    worst = max(errs)
    report(2, worst <= 0.01, f"worst relative error {worst:.2e} over {len(EB_COMBOS)} (theta, p, L) combos", t0)


# 3 -------------------------------------------------------------------------

def test_criterion_03_access_analysis_vs_simulation():
    t0 = time.perf_counter()
    lines, ok = [], True
    for N in (2, 10, 100):
        for M in (2, 50):
            sc, d = saturated(N, M)
            stats = sim.run_simulation(sc, d, 10 ** 5, 1000 + N + M, warmup=0.0, saturated=True, hist_bins=1)
            want = qos.access_state(sc, qos.to_x(d)).success
            mean, se = stats.success_total_mean()
            pooled = abs(mean - want.sum()) / se
            dev_se = np.sqrt(want * (1 - want) / stats.superframes)
            dev_z = float(np.max(np.abs(stats.success_freq - want) / dev_se))
            ok &= pooled <= 3.0 and dev_z <= 3.0
            lines.append(f"N={N},M={M}: pooled {pooled:.2f} sd, worst device {dev_z:.2f} sd")
    report(3, ok, "; ".join(lines), t0)


# 4 -------------------------------------------------------------------------

mp.mp.dps = 50


def mp_utility(n, x, sc, lam):
    """Independent high-precision utility of device ``n``; ``x`` is a nested list of mpf."""
    N, K = sc.shape
    M = sc.n_preambles
    T = mp.mpf(sc.time_constant)
    base = [[mp.mpf(1)] * K for _ in range(N)]
    for m in range(N):
        higher = mp.mpf(1)
        for k in range(K):
            idle = mp.mpf(sc.idle[m, k])
            base[m][k] = higher * (1 - idle)
            higher *= idle
    D = [mp.fsum((1 - mp.exp(-x[m][k])) * base[m][k] for k in range(K)) for m in range(N)]
    coll = mp.mpf(1)
    for m in range(N):
        if m != n:
            coll *= 1 - D[m] / M
    total = mp.mpf(0)
    for k in range(K):
        phi = mp.mpf(sc.fading_gap[n, k]) * (1 - mp.mpf(sc.per[n, k])) * base[n][k] * coll
        d = 1 - mp.exp(-x[n][k])
        total += -mp.log(1 - d * phi) / (mp.mpf(sc.theta[n, k]) * T) - lam * x[n][k]
    return total


def mp_mixed(n, x, sc, a, b, h):
    (i, k), (j, l) = a, b

    def f(di, dj):
        y = [row[:] for row in x]
        y[i][k] += di
        y[j][l] += dj
        return mp_utility(n, y, sc, mp.mpf(100))

    if a == b:
        return (f(h, 0) - 2 * f(0, 0) + f(-h, 0)) / h ** 2
    return (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h)


def hessian_scenarios():
    out = []
    rng = np.random.default_rng(44)
    for N, K, M in ((3, 1, 1), (3, 2, 2), (4, 2, 3)):
        dist = rng.uniform(15.0, 60.0, N).tolist()
        out.append(make_scenario(system__n_devices=N, system__n_classes=K, system__n_preambles=M,
                                 system__distances=dist, traffic__qos_exponent=[1e-3, 1e-5][:K],
                                 policy__fixed=[0.5] * K))
    return out


def test_criterion_04_concavity_and_submodularity():
    t0 = time.perf_counter()
    h = mp.mpf("1e-12")
    rng = np.random.default_rng(4)
    worst_own = worst_cross_own = worst_sub = -math.inf
    agree = 0.0
    points = 0
    for sc in hessian_scenarios():
        N, K = sc.shape
        for _ in range(100):
            xf = rng.uniform(sc.x_min + 1e-3, sc.x_max - 1e-3, sc.shape)
            x = [[mp.mpf(float(v)) for v in row] for row in xf]
            n = int(rng.integers(N))
            # the independent route reproduces the package's utility
            u_pkg = game.utility(n, sc, xf, 100.0)
            agree = max(agree, abs(float(mp_utility(n, x, sc, mp.mpf(100))) - u_pkg) / abs(u_pkg))
            for k in range(K):
                own = mp_mixed(n, x, sc, (n, k), (n, k), h)
                worst_own = max(worst_own, float(own))
                for k2 in range(k + 1, K):
                    c = mp_mixed(n, x, sc, (n, k), (n, k2), h)
                    worst_cross_own = max(worst_cross_own, abs(float(c)) / max(abs(float(own)), 1.0))
                for j in range(N):
                    if j == n:
                        continue
                    for l in range(K):
                        worst_sub = max(worst_sub, float(mp_mixed(n, x, sc, (n, k), (j, l), h)))
            points += 1
    ok = worst_own <= 1e-9 and worst_sub <= 1e-9 and worst_cross_own <= 1e-6 and agree <= 1e-10
    report(4, ok, f"{points} points: max own d2U {worst_own:.3e}, max cross d2U {worst_sub:.3e}, "
                  f"own-class coupling {max(worst_cross_own, 0):.1e}, route agreement {agree:.1e}", t0)


# 5 -------------------------------------------------------------------------

def test_criterion_05_best_response_grid_oracle():
    t0 = time.perf_counter()
    sc = make_scenario(system__n_devices=4, system__n_preambles=2, system__distances=[20.0, 35.0, 50.0, 65.0])
    rng = np.random.default_rng(5)
    grid = np.linspace(sc.x_min, sc.x_max, 10 ** 5)
    step = grid[1] - grid[0]
    worst = 0.0
    interior = 0
    for i in range(50):
        x = rng.uniform(sc.x_min, sc.x_max, sc.shape)
        n, k = int(rng.integers(4)), int(rng.integers(2))
        if i % 2 == 0:
            # price whose unconstrained best response lands inside the box
            target = rng.uniform(sc.x_min + 0.05, sc.x_max - 0.05)
            y = x.copy()
            y[n, k] = target
            lam = float(game.utility_gradient_matrix(sc, y, 0.0)[n, k])
        else:
            lam = float(10 ** rng.uniform(-1, 6))
        prices = np.full(sc.shape, lam)
        br = game.best_response_round(sc, x, prices)[n, k]
        interior += int(sc.x_min < br < sc.x_max)
        cand = np.broadcast_to(x, (grid.size,) + sc.shape).copy()
        cand[:, n, k] = grid
        U = game.utilities(sc, cand, prices)[:, n]
        worst = max(worst, abs(grid[int(np.argmax(U))] - br) / step)
    report(5, worst <= 1.0, f"50 states ({interior} interior): worst |BR - grid argmax| = {worst:.2f} grid steps", t0)


# 6 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_layout():
    return make_scenario(system__symbols=1000)


def test_criterion_06_equilibrium_from_random_starts(full_layout):
    t0 = time.perf_counter()
    sc = full_layout
    rng = np.random.default_rng(6)
    outs = [game.run_algorithm1(sc, 1000.0, rng.uniform(sc.x_min, sc.x_max, sc.shape)) for _ in range(3)]
    spread = float(np.max(np.ptp(np.array([o.x for o in outs]), axis=0)))
    rounds = max(o.n_iter for o in outs)
    resid = max(o.residual for o in outs)
    ok = all(o.converged for o in outs) and spread <= 1e-4 and rounds <= 100 and resid <= 1e-6
    report(6, ok, f"3 starts: spread {spread:.1e}, rounds <= {rounds}, residual {resid:.1e}", t0)


# 7 -------------------------------------------------------------------------

def test_criterion_07_price_sweep_trend(full_layout):
    t0 = time.perf_counter()
    sc = full_layout
    prices = [1e2, 1e3, 1e4, 1e5]
    totals = []
    for lam in prices:
        out = game.run_algorithm1(sc, lam)
        assert out.converged
        totals.append(baseline.total_effective_capacity(out.x, sc))
    best = int(np.argmax(totals))
    fixed = [baseline.fixed_policy_capacity(sc, d) for d in (0.1, 0.5, 0.9)]
    ok = 0 < best < len(prices) - 1 and totals[best] > max(fixed)
    detail = ", ".join(f"{p:.0e}: {v:.4g}" for p, v in zip(prices, totals))
    report(7, ok, f"total EC by price [{detail}]; best fixed-d {max(fixed):.4g}", t0)


# 8 -------------------------------------------------------------------------

def test_criterion_08_price_update_and_ordering(full_layout):
    t0 = time.perf_counter()
    big = pricing.run_algorithm2(full_layout)
    step = float(np.max(np.abs(big.game.trajectory[-1] - big.game.trajectory[-2])))
    ok = big.converged and step <= 1e-6
    worst_gap = worst_kkt = 0.0
    order_ok = True
    count = 0
    for seed in range(20):
        for M in (1, 2):
            for theta in (1e-3, 1e-5):
                sc = tiny_pair(seed, M, theta)
                grid = baseline.grid_search_oracle(sc, 200, refine=2).objective
                pso = baseline.pso_optimize(sc, baseline.PsoConfig(seed=seed)).objective
                a2 = pricing.run_algorithm2(sc)
                v2 = baseline.total_effective_capacity(a2.x, sc)
                v1 = baseline.total_effective_capacity(game.run_algorithm1(sc, 1000.0).x, sc)
                tol = 1e-9 * grid
                order_ok &= grid >= pso - tol and pso >= v2 - tol and v2 >= v1 - tol and a2.converged
                worst_gap = max(worst_gap, (grid - v2) / grid)
                worst_kkt = max(worst_kkt, a2.kkt_residual)
                count += 1
    ok &= order_ok and worst_gap <= 0.05 and worst_kkt <= 1e-3
    report(8, ok, f"full-layout run: {big.game.n_iter} iterations, last step {step:.1e}, KKT {big.kkt_residual:.1e}; "
                  f"{count} pairs: ordering {order_ok}, worst grid gap {worst_gap:.2e}, worst KKT {worst_kkt:.1e}", t0)


# 9 -------------------------------------------------------------------------

def test_criterion_09_tail_slope_and_power_replug():
    t0 = time.perf_counter()
    sc = single_device()
    x = np.array([[qos.to_x(0.9)]])
    theta_star = qos.solve_qos_exponent(0, 0, sc, x)
    stats = sim.run_simulation(sc, 0.9, 200000, 7, hist_bin_bits=50, hist_bins=4000)
    q, tail = stats.tail_prob(0, 0)
    sel = (tail >= 1e-3) & (tail <= 1e-1)
    slope = float(np.polyfit(q[sel], np.log(tail[sel]), 1)[0])
    rel = abs(-slope - theta_star) / theta_star
    sol = qos.solve_power(0, 0, sc, x)
    A = traffic.effective_bandwidth(sc.theta[0, 0], sc.arrival_prob[0], sc.mean_bits[0, 0], sc.slot)
    replug = abs(qos.capacity_at_power(0, 0, sc, x, sol.power) - A) / A
    ok = rel <= 0.2 and int(sel.sum()) >= 5 and replug <= 1e-6
    report(9, ok, f"tail slope {slope:.4e} vs -theta* {-theta_star:.4e} ({rel:.1%}, {int(sel.sum())} bins); "
                  f"power {sol.power:.4g} W replug error {replug:.1e}", t0)


# 10 ------------------------------------------------------------------------

def test_criterion_10_capacity_monotone_in_resources():
    t0 = time.perf_counter()
    preambles = [10, 20, 30, 40, 50, 60]
    bandwidths = [180e3, 360e3, 720e3, 1440e3]
    base = make_scenario()
    d = base.fixed_policy()
    table = np.empty((len(preambles), len(bandwidths), 2))
    for i, M in enumerate(preambles):
        for j, B in enumerate(bandwidths):
            sc = make_scenario(system__n_preambles=M, system__bandwidth=B)
            table[i, j] = qos.capacity_matrix(sc, qos.to_x(d)).mean(axis=0)
    ok = bool(np.all(np.diff(table, axis=0) >= 0) and np.all(np.diff(table, axis=1) >= 0))
    report(10, ok, f"N=100 grid {len(preambles)}x{len(bandwidths)}: class means "
                   f"{table[0, 0, 0]:.4g}->{table[-1, -1, 0]:.4g} and {table[0, 0, 1]:.4g}->{table[-1, -1, 1]:.4g}", t0)


# 11 ------------------------------------------------------------------------

def test_criterion_11_deterministic_cli(tmp_path):
    t0 = time.perf_counter()
    doc = {"system": {"n_devices": 2, "n_classes": 1, "n_preambles": 2},
           "traffic": {"qos_exponent": [1e-3], "arrival_prob": 0.02}, "policy": {"fixed": [0.5]},
           "sim": {"horizon": 2000, "replications": 2, "track_delays": True},
           "sweep": {"preambles": [1, 2], "bandwidths": [180e3, 360e3], "theta": [1e-5, 1e-4],
                     "prices": [1e2, 1e3]},
           "seed": 17}
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(doc))
    same = []
    for command in cli.COMMANDS:
        outs = []
        for rep in range(2):
            path = tmp_path / f"{command}-{rep}.csv"
            extra = ["--hist", str(tmp_path / f"{command}-{rep}.hist")] if command == "simulate" else []
            code = cli.main([command, "--config", str(cfg), "--seed", "17", "--out", str(path), "--quiet", *extra])
            outs.append((code, path.read_bytes() if path.exists() else b""))
            if extra:
                outs[-1] += ((tmp_path / f"{command}-{rep}.hist").read_bytes(),)
        same.append(outs[0] == outs[1] and outs[0][0] == 0 and len(outs[0][1]) > 0)
    report(11, all(same), f"{sum(same)}/{len(same)} commands byte-identical on rerun", t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
