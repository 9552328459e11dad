"""Command-line scenario runner.

Every subcommand reads a JSON scenario (defaults fill anything missing),
writes one CSV document to ``--out`` (stdout by default) and exits with

    0  success
    2  invalid configuration or parameter domain
    3  an iterative solver hit its cap without converging
    4  a QoS target is infeasible

The first line of each CSV is a ``#`` comment with the seed and the
configuration digest; identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import baseline, game, pricing, qos, sim
from .exceptions import (ConfigurationError, DomainError, InfeasibleQoSError, NoCrossingError,
                         NoEstimateError)
from .scenario import Scenario, ScenarioConfig

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("mmtcqos")


class NotConverged(Exception):
    """Raised after the CSV is written when a solver stopped at its cap."""


def _fmt(v) -> str:
    return repr(float(v))


def _csv(header, rows, comment) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _map(fn, items, threads: int):
    """Ordered map; results follow input order regardless of completion order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _build(cfg: ScenarioConfig, **changes) -> Scenario:
    """Scenario for ``cfg``; ``idle_mode="empirical"`` measures idle tables under the fixed policy."""
    if changes:
        cfg = cfg.replace(**changes)
    sc = Scenario.from_config(cfg)
    if cfg.traffic.idle_mode == "empirical":
        if cfg.policy.fixed == "game":
            raise ConfigurationError("empirical idle probabilities need a fixed policy to simulate")
        sc, _ = sim.empirical_idle(sc, sc.fixed_policy(), cfg.sim.horizon, cfg.seed)
    return sc


def _policy_x(scenario: Scenario, cfg: ScenarioConfig) -> np.ndarray:
    """Policy used by analysis commands: fixed ``d`` or a best-response equilibrium."""
    if cfg.policy.fixed == "game":
        out = game.run_algorithm1(scenario, cfg.game.price, tol=cfg.game.tol, delta=cfg.game.delta,
                                  max_iter=cfg.game.max_iter, info_mode=cfg.game.info_mode)
        if not out.converged:
            raise NotConverged("best-response dynamics did not converge")
        return out.x
    d = np.clip(scenario.fixed_policy(), cfg.policy.d_min, cfg.policy.d_max)
    return qos.to_x(d)


# ---------------------------------------------------------------------------
# commands; each returns (csv_text, converged)


def cmd_capacity_sweep(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    sw = cfg.sweep
    if not sw.preambles or not sw.bandwidths or min(sw.bandwidths) <= 0:
        raise ConfigurationError("capacity sweep needs nonempty preamble and positive bandwidth lists")
    points = [(int(M), float(B)) for M in sw.preambles for B in sw.bandwidths]

    def one(pt):
        M, B = pt
        sc = _build(cfg, system__n_preambles=M, system__bandwidth=B)
        C = qos.capacity_matrix(sc, _policy_x(sc, cfg))
        return [[M, repr(B), k, _fmt(C[:, k].mean()), sc.symbols] for k in range(sc.n_classes)]

    rows = [r for block in _map(one, points, args.threads) for r in block]
    return _csv(["M", "bandwidth_hz", "class", "mean_EC_bps", "symbols"], rows, args.comment), True


def cmd_qos_sweep(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    sw = cfg.sweep
    base = _build(cfg)
    k0 = sw.class_index
    if not 0 <= k0 < base.n_classes:
        raise ConfigurationError(f"class_index {k0} outside [0, {base.n_classes})")
    bits = float(base.mean_bits[:, k0].max())
    for th in sw.theta:
        if not 0 < th or th * bits >= 1.0:
            raise DomainError(f"theta={th!r} violates 0 < theta * packet_bits < 1")
    theta0 = np.asarray(cfg.traffic.qos_exponent, dtype=float)
    theta0 = np.broadcast_to(theta0, (base.n_classes,)) if theta0.ndim <= 1 else theta0

    def one(th):
        tab = np.array(theta0, dtype=float, copy=True)
        tab[..., k0] = th
        sc = _build(cfg, traffic__qos_exponent=tab.tolist())
        C = qos.capacity_matrix(sc, _policy_x(sc, cfg))
        return [repr(float(th))] + [_fmt(C[:, k].mean()) for k in range(sc.n_classes)]

    rows = _map(one, list(sw.theta), args.threads)
    header = ["theta"] + [f"EC_class{k + 1}" for k in range(base.n_classes)]
    return _csv(header, rows, args.comment), True


def _initial_points(scenario, cfg, replications: int, seed: int):
    if replications <= 1:
        init = cfg.game.init
        if init == "random":
            return [np.random.default_rng(seed).uniform(scenario.x_min, scenario.x_max, scenario.shape)]
        return [np.full(scenario.shape, scenario.x_max if init == "max" else scenario.x_min)]
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(replications)]
    return [r.uniform(scenario.x_min, scenario.x_max, scenario.shape) for r in rngs]


def cmd_game(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    sc = _build(cfg)
    g = cfg.game
    starts = _initial_points(sc, cfg, args.replications, cfg.seed)

    def one(x0):
        return game.run_algorithm1(sc, g.price, x0, tol=g.tol, delta=g.delta, max_iter=g.max_iter,
                                   info_mode=g.info_mode)

    outs = _map(one, starts, args.threads)
    rows = []
    for r, out in enumerate(outs):
        for it, (x, u) in enumerate(zip(out.trajectory, out.utility_trajectory)):
            d = qos.to_d(x)
            for n in range(sc.n_devices):
                for k in range(sc.n_classes):
                    rows.append([r, it, n, k, _fmt(x[n, k]), _fmt(d[n, k]), _fmt(u[n])])
    text = _csv(["replication", "iteration", "player", "queue", "x", "d", "utility"], rows, args.comment)
    return text, all(o.converged for o in outs)


def cmd_price(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    sc = _build(cfg)
    p = cfg.pricing
    out = pricing.run_algorithm2(sc, rho0=p.rho0, rho_scale=p.rho_scale, tol=p.tol, max_iter=p.max_iter)
    return out.to_csv(header_comment=args.comment), out.converged


def cmd_price_sweep(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    """Total capacity of the fixed-price equilibrium across ``sweep.prices`` plus fixed-d references."""
    sc = _build(cfg)
    g = cfg.game

    def one(lam):
        return game.run_algorithm1(sc, lam, tol=g.tol, delta=g.delta, max_iter=g.max_iter)

    outs = _map(one, [float(v) for v in cfg.sweep.prices], args.threads)
    rows = [["alg1", repr(float(lam)), "", _fmt(baseline.total_effective_capacity(o.x, sc)), o.n_iter,
             int(o.converged)] for lam, o in zip(cfg.sweep.prices, outs)]
    for d in cfg.sweep.fixed_d:
        rows.append(["fixed", "", repr(float(d)), _fmt(baseline.fixed_policy_capacity(sc, d)), 0, 1])
    header = ["method", "price", "d", "total_EC_bps", "iterations", "converged"]
    return _csv(header, rows, args.comment), all(o.converged for o in outs)


def cmd_compare(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    sc = _build(cfg)
    g, p = cfg.game, cfg.pricing
    rows = []
    if cfg.policy.fixed != "game":
        rows.append(["fixed-d", _fmt(baseline.fixed_policy_capacity(sc, sc.fixed_policy())), 0, 1])
    a1 = game.run_algorithm1(sc, g.price, tol=g.tol, delta=g.delta, max_iter=g.max_iter)
    rows.append(["alg1", _fmt(baseline.total_effective_capacity(a1.x, sc)), a1.n_iter, int(a1.converged)])
    a2 = pricing.run_algorithm2(sc, rho0=p.rho0, rho_scale=p.rho_scale, tol=p.tol, max_iter=p.max_iter)
    rows.append(["alg2", _fmt(baseline.total_effective_capacity(a2.x, sc)), a2.game.n_iter,
                 int(a2.converged)])
    ok = a1.converged and a2.converged
    ps = baseline.pso_optimize(sc, baseline.PsoConfig(seed=cfg.seed))
    rows.append(["pso", _fmt(ps.objective), len(ps.history) - 1, 1])
    if sc.n_devices * sc.n_classes <= baseline.GRID_MAX_DIM:
        res = 200 if sc.n_devices * sc.n_classes <= 2 else 30
        gr = baseline.grid_search_oracle(sc, res)
        rows.append(["grid", _fmt(gr.objective), gr.evaluations, 1])
    return _csv(["method", "total_EC_bps", "iterations", "converged"], rows, args.comment), ok


def cmd_simulate(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    sc = _build(cfg)
    policy = qos.to_d(_policy_x(sc, cfg))
    stats = sim.run_from_config(sc, policy, replications=args.replications, threads=args.threads)
    buf = io.StringIO()
    buf.write(f"# {args.comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication"] + sim.SimStats.SUMMARY_HEADER)
    for r, st in enumerate(stats):
        for row in st.summary_rows():
            w.writerow([r] + row)
    if args.hist:
        hbuf = io.StringIO()
        hbuf.write(f"# {args.comment}\n")
        hw = csv.writer(hbuf, lineterminator="\n")
        hw.writerow(["replication", "kind", "n", "k", "bin_lower", "count"])
        for r, st in enumerate(stats):
            for kind in ("queue", "delay") if st.delay_hist is not None else ("queue",):
                hist = st.queue_hist if kind == "queue" else st.delay_hist
                width = st.hist_bin_bits if kind == "queue" else 1
                for n, k, b in zip(*np.nonzero(hist)):
                    hw.writerow([r, kind, n, k, int(b) * width, int(hist[n, k, b])])
        _write(hbuf.getvalue(), args.hist)
    return buf.getvalue(), True


def cmd_power(cfg: ScenarioConfig, args) -> tuple[str, bool]:
    """Per-queue transmit power meeting the effective-bandwidth demand."""
    sc = _build(cfg)
    x = _policy_x(sc, cfg)
    rows = []
    for n in range(sc.n_devices):
        for k in range(sc.n_classes):
            sol = qos.solve_power(n, k, sc, x)
            rows.append([n, k, _fmt(sol.power), int(sol.slack)])
    return _csv(["n", "k", "power_w", "at_minimum"], rows, args.comment), True


COMMANDS = {
    "capacity-sweep": (cmd_capacity_sweep, "mean effective capacity over preamble count x bandwidth"),
    "qos-sweep": (cmd_qos_sweep, "effective capacity versus the QoS exponent of one class"),
    "game": (cmd_game, "best-response dynamics at a fixed price (trajectory)"),
    "price": (cmd_price, "price-update algorithm (trajectory)"),
    "price-sweep": (cmd_price_sweep, "equilibrium total capacity across fixed prices"),
    "compare": (cmd_compare, "total capacity of fixed-d, alg1, alg2, PSO and grid search"),
    "simulate": (cmd_simulate, "superframe simulation of the configured policy"),
    "power": (cmd_power, "minimum transmit power per queue"),
}


# ---------------------------------------------------------------------------
# entry point


def _write(text: str, path) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON scenario file (defaults if omitted)")
    common.add_argument("--seed", type=int, metavar="U64", help="override the scenario seed")
    common.add_argument("--out", metavar="PATH", help="CSV destination (stdout if omitted)")
    common.add_argument("--replications", type=int, metavar="N",
                        help="simulation replications / random starts for 'game'")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="mmtcqos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "simulate":
            p.add_argument("--hist", metavar="PATH", help="also write queue/delay histograms here")
    return parser


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_json(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.replace(seed=args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func = COMMANDS[args.command][0]
    try:
        cfg = _load(args)
        if args.replications is not None and args.replications < 1:
            raise ConfigurationError("--replications must be >= 1")
        args.replications = args.replications or (cfg.sim.replications if args.command == "simulate" else 1)
        args.threads = sim.thread_count()
        args.comment = f"seed={cfg.seed} config={cfg.digest()} command={args.command}"
        if not hasattr(args, "hist"):
            args.hist = None
        text, converged = func(cfg, args)
    except (ConfigurationError, DomainError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (InfeasibleQoSError, NoCrossingError) as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except (NotConverged, NoEstimateError) as exc:
        log.error("%s", exc)
        return EXIT_NONCONV
    _write(text, args.out)
    if not converged:
        log.warning("%s: solver stopped at its iteration cap", args.command)
        return EXIT_NONCONV
    log.info("%s: done", args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
