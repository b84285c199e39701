"""Command-line front end.

Every subcommand prints a human-readable table to stdout and, when ``--out``
is given, writes plot-ready CSV files into that directory. Exit status is 0
on success, 2 for bad input and 3 when a numerical routine fails to converge.
"""

from __future__ import annotations

import argparse
import csv
import math
import shlex
import sys
from pathlib import Path

import numpy as np

from . import finite_time, graph, rate, sim, stability
from .dynamics import SystemConfig
from .errors import ConsensusError, NonConvergence, ParseError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGENCE = 3

DEFAULTS = {
    "tau": 0.1,
    "order": 3,
    "seed": 0,
    "out": None,
    "T": 5000,
    "eta": 0.01,
    "delta": 1e-6,
    "restarts": 10,
    "raw": False,
    "steps": None,
    "spread": 5.0,
    "init_seed": None,
    "gains": None,
    "tol": 1e-9,
    "edge_prob": 0.3,
    "ascending": False,
}
SOURCES = ("cycle", "path", "star", "complete", "bipartite", "edges", "random")

# reference rows for the table1 command: (label, graph, eigenratio, r_lb)
TABLE1_ROWS = (
    ("C10", lambda: graph.cycle_graph(10), 10.4721, 0.9381),
    ("P10", lambda: graph.path_graph(10), 39.8635, 0.9834),
    ("K4,6", lambda: graph.complete_bipartite_graph(4, 6), 2.5000, 0.7539),
)


def _gain_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"gains must be numbers: {text!r}") from exc


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--tau", type=float, help="sampling period (default 0.1)")
    p.add_argument("-n", "--order", type=int, help="integrator order n (default 3)")
    p.add_argument("--seed", type=int, help="master seed for all randomness (default 0)")
    p.add_argument("--out", type=Path, help="directory for CSV output")
    p.add_argument("--config", type=Path, help="key=value file; explicit flags win")

    src = p.add_argument_group("graph source")
    src.add_argument("--cycle", type=int, metavar="N")
    src.add_argument("--path", type=int, metavar="N")
    src.add_argument("--star", type=int, metavar="N", help="hub plus N-1 leaves")
    src.add_argument("--complete", type=int, metavar="N")
    src.add_argument("--bipartite", type=int, nargs=2, metavar=("A", "B"))
    src.add_argument("--edges", type=Path, metavar="FILE", help="edge-list file")
    src.add_argument("--random", type=int, metavar="N", help="seeded random connected graph")
    src.add_argument("--edge-prob", dest="edge_prob", type=float, help="extra-edge probability")
    return p


def _optimizer_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("-T", dest="T", type=int, help="iterations per restart (default 5000)")
    p.add_argument("--eta", type=float, help="step size (default 0.01)")
    p.add_argument("--delta", type=float, help="finite-difference step (default 1e-6)")
    p.add_argument("--restarts", type=int, help="random restarts (default 10)")
    p.add_argument("--raw", action="store_true", help="descend in raw gain units")
    return p


def _sim_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--steps", type=int, help="simulation length")
    p.add_argument("--spread", type=float, help="initial states uniform in [-s, s] (default 5)")
    p.add_argument("--init-seed", dest="init_seed", type=int, help="defaults to --seed")
    return p


def build_parser() -> argparse.ArgumentParser:
    common, opt, simp = _common_parser(), _optimizer_parser(), _sim_parser()
    parser = argparse.ArgumentParser(
        prog="fastconsensus",
        description="Fast-consensus gain design for discrete-time high-order agents.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    quiet = {"argument_default": argparse.SUPPRESS}

    sub.add_parser("spectrum", parents=[common], **quiet, help="Laplacian spectrum summary")

    p = sub.add_parser("rate", parents=[common], **quiet, help="convergence rate of given gains")
    p.add_argument("--gains", type=_gain_list, help="K_1..K_n, comma separated")

    sub.add_parser("optimize", parents=[common, opt], **quiet, help="gradient descent on the rate")
    sub.add_parser("optimal-gains", parents=[common], **quiet, help="lower bound and closed-form gains")

    p = sub.add_parser("finite-time", parents=[common, simp], **quiet, help="deadbeat schedule")
    p.add_argument("--tol", type=float, help="relative consensus tolerance (default 1e-9)")
    p.add_argument("--ascending", action="store_true", help="ascending block order")

    p = sub.add_parser("simulate", parents=[common, simp], **quiet, help="constant-gain trajectory")
    p.add_argument("--gains", type=_gain_list, help="defaults to the closed-form gains")

    sub.add_parser("table1", parents=[common, opt], **quiet, help="rate table for the reference graphs")
    parser.commands = sub.choices
    return parser


def read_config(path: Path, parser: argparse.ArgumentParser, command: str) -> dict:
    """Parse a flat ``key = value`` file into option values.

    Keys are long flag names (dashes or underscores); ``mode`` may repeat the
    subcommand. Values are split like shell words, so ``bipartite = 4 6``
    works.
    """
    tokens: list[str] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: expected key=value", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key == "mode":
            if value != command:
                raise ParseError(
                    f"{path}: mode {value!r} does not match subcommand {command!r}", line=lineno
                )
            continue
        if key == "config":
            raise ParseError(f"{path}: nested config files are not supported", line=lineno)
        flag = "-T" if key == "T" else f"--{key}"
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            tokens += [flag, *shlex.split(value)]
    try:
        parsed, extra = parser.commands[command].parse_known_args(tokens)
    except SystemExit as exc:
        raise ParseError(f"{path}: invalid value in config file") from exc
    if extra:
        raise ParseError(f"{path}: unknown keys {' '.join(extra)}")
    return vars(parsed)


def resolve_options(argv=None) -> argparse.Namespace:
    """Merge defaults, the optional config file and explicit flags (in that order)."""
    parser = build_parser()
    cli = vars(parser.parse_args(argv))
    command = cli.pop("command")
    opts = dict(DEFAULTS)
    if "config" in cli:
        conf = read_config(cli.pop("config"), parser, command)
        if any(k in cli for k in SOURCES):
            conf = {k: v for k, v in conf.items() if k not in SOURCES}
        opts.update(conf)
    opts.update(cli)
    opts["command"] = command
    if opts["init_seed"] is None:
        opts["init_seed"] = opts["seed"]
    return argparse.Namespace(**opts)


def load_graph(opts) -> graph.Graph | None:
    given = [k for k in SOURCES if getattr(opts, k, None) is not None]
    if len(given) > 1:
        raise ValueError(f"choose one graph source, got {', '.join('--' + k for k in given)}")
    if not given:
        return None
    kind = given[0]
    arg = getattr(opts, kind)
    if kind == "cycle":
        return graph.cycle_graph(arg)
    if kind == "path":
        return graph.path_graph(arg)
    if kind == "star":
        return graph.star_graph(arg)
    if kind == "complete":
        return graph.complete_graph(arg)
    if kind == "bipartite":
        return graph.complete_bipartite_graph(*arg)
    if kind == "edges":
        return graph.read_edge_list(arg)
    rng = np.random.Generator(np.random.PCG64(opts.seed))
    return graph.random_connected_graph(arg, rng, p=opts.edge_prob)


def _require_graph(opts) -> graph.Graph:
    g = load_graph(opts)
    if g is None:
        raise ValueError("a graph source is required (--cycle, --path, --edges, ...)")
    return g


def _config(opts) -> SystemConfig:
    return SystemConfig(opts.order, opts.tau)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_csv(opts, name: str, header, rows) -> Path | None:
    if opts.out is None:
        return None
    opts.out.mkdir(parents=True, exist_ok=True)
    path = opts.out / name
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _vec(v) -> str:
    return "[" + ", ".join(f"{float(x):.6g}" for x in v) + "]"


# -- subcommands ----------------------------------------------------------

def cmd_spectrum(opts) -> int:
    s = graph.spectrum(_require_graph(opts))
    print(f"nodes       {len(s.eigenvalues)}")
    print(f"lambda_2    {s.lambda_2:.4f}")
    print(f"lambda_N    {s.lambda_max:.4f}")
    if s.connected:
        print(f"eigenratio  {graph.eigenratio(s):.4f}")
    else:
        print("warning: graph is disconnected; eigenratio undefined", file=sys.stderr)
        print("eigenratio  inf")
    print(f"distinct    {s.distinct_count}")
    print(f"{'eigenvalue':>12}  mult")
    for lam, m in zip(s.distinct_nonzero, s.multiplicities):
        print(f"{lam:12.4f}  {m:4d}")
    _write_csv(opts, "spectrum.csv", ["index", "eigenvalue"],
               [[i, _fmt(w)] for i, w in enumerate(s.eigenvalues)])
    return EXIT_OK


def cmd_rate(opts) -> int:
    s = graph.spectrum(_require_graph(opts))
    cfg = _config(opts)
    if opts.gains is None:
        raise ValueError("--gains is required")
    res = rate.convergence_rate(s, cfg, opts.gains)
    rep = rate.consensus_check(s, cfg, opts.gains)
    print(f"rate        {res.rate:.6f}")
    print(f"argmax lam  {res.argmax_lambda:.4f}")
    print(f"consensus   {'yes' if rep.consensus else 'no'}")
    print(f"lower bound {rate.rate_lower_bound(s, cfg.order):.6f}")
    rows = []
    print(f"{'lambda':>10}  {'max |z|':>10}  routh")
    for lam, mod in zip(rep.lambdas, rep.max_modulus):
        verdict = stability.disk_stability(stability.char_poly(cfg, lam, opts.gains), 1.0)
        print(f"{lam:10.4f}  {mod:10.6f}  {verdict.name.lower()}")
        rows.append([_fmt(lam), _fmt(mod), verdict.name.lower()])
    _write_csv(opts, "rate.csv", ["lambda", "max_modulus", "stability"], rows)
    return EXIT_OK


def _optimize(s, cfg, opts) -> rate.OptimizerReport:
    return rate.gradient_descent_rate(
        s, cfg, T=opts.T, eta=opts.eta, delta=opts.delta,
        restarts=opts.restarts, seed=opts.seed, scaled=not opts.raw,
    )


def cmd_optimize(opts) -> int:
    s = graph.spectrum(_require_graph(opts))
    cfg = _config(opts)
    rep = _optimize(s, cfg, opts)
    lb = rate.rate_lower_bound(s, cfg.order)
    print(f"best rate   {rep.best_rate:.6f}  (restart {rep.best_restart})")
    print(f"lower bound {lb:.6f}")
    print(f"gap         {rep.best_rate - lb:.2e}")
    print(f"best gains  {_vec(rep.best_gains)}")
    print(f"{'restart':>7}  {'final rate':>10}")
    for r, fr in enumerate(rep.final_rates):
        print(f"{r:7d}  {fr:10.6f}")
    header = ["t"] + [f"rate_{r}" for r in range(rep.restarts)]
    rows = [[t] + [_fmt(v) for v in rep.rate_trace[:, t]] for t in range(rep.iterations_run + 1)]
    _write_csv(opts, "optimize_trace.csv", header, rows)
    _write_csv(opts, "optimize_gains.csv",
               ["restart", "final_rate"] + [f"K_{m}" for m in range(1, cfg.order + 1)],
               [[r, _fmt(rep.final_rates[r])] + [_fmt(v) for v in rep.final_gains[r]]
                for r in range(rep.restarts)])
    return EXIT_OK


def cmd_optimal_gains(opts) -> int:
    s = graph.spectrum(_require_graph(opts))
    cfg = _config(opts)
    der = rate.optimal_gains_general(s, cfg)
    achieved = rate.convergence_rate(s, cfg, der.gains).rate
    print(f"lower bound {der.target_rate:.6f}")
    print(f"f           {_vec(der.f)}")
    print(f"gains       {_vec(der.gains)}")
    print(f"rate        {achieved:.6f}")
    if cfg.order == 2:
        print(f"order-2 closed form {_vec(rate.optimal_gains_order2(s, cfg.tau))}")
    _write_csv(opts, "optimal_gains.csv", ["m", "K_m", "f_m"],
               [[m + 1, _fmt(der.gains[m]), _fmt(der.f[m])] for m in range(cfg.order)])
    return EXIT_OK


def cmd_finite_time(opts) -> int:
    g = _require_graph(opts)
    s = graph.spectrum(g)
    cfg = _config(opts)
    sched = finite_time.deadbeat_schedule(s, cfg, descending=not opts.ascending)
    steps = sched.length + 20 if opts.steps is None else opts.steps
    x0 = sim.initial_condition(g.node_count, cfg.order, opts.spread, opts.init_seed)
    traj = sim.simulate_scheduled(g, cfg, sched, x0, steps)
    tol = opts.tol * float(np.linalg.norm(x0))
    reached = sim.consensus_step(traj, tol)
    residuals = finite_time.product_annihilation(s, cfg, sched)

    print(f"distinct eigenvalues {s.distinct_count}, schedule length {sched.length}")
    print(f"consensus step      {reached if reached is not None else 'not reached'}"
          f"  (tol {tol:.2e})")
    print(f"{'lambda':>10}  residual")
    for lam, res in residuals.items():
        print(f"{lam:10.4f}  {res:.2e}")
    k_end = min(sched.length, steps)
    predicted = finite_time.final_consensus_state(cfg, x0, k_end)
    states = traj.states if traj.states is not None else None
    if states is not None:
        simulated = states[k_end].astype(np.float64).reshape(-1, cfg.order)
        gap = float(np.max(np.abs(simulated - predicted)))
        print(f"predicted state at k={k_end}  {_vec(predicted)}")
        print(f"max |simulated - predicted|  {gap:.2e}")
    _write_csv(opts, "schedule.csv", ["step"] + [f"K_{m}" for m in range(1, cfg.order + 1)],
               [[k] + [_fmt(v) for v in row] for k, row in enumerate(sched.entries)])
    if states is not None and opts.out is not None:
        opts.out.mkdir(parents=True, exist_ok=True)
        sim.write_trajectory_csv(traj, opts.out / "trajectory.csv")
    _write_csv(opts, "residuals.csv", ["lambda", "residual"],
               [[_fmt(lam), _fmt(res)] for lam, res in residuals.items()])
    return EXIT_OK


def cmd_simulate(opts) -> int:
    g = _require_graph(opts)
    s = graph.spectrum(g)
    cfg = _config(opts)
    gains = opts.gains
    if gains is None:
        gains = rate.optimal_gains_general(s, cfg).gains
    steps = 400 if opts.steps is None else opts.steps
    x0 = sim.initial_condition(g.node_count, cfg.order, opts.spread, opts.init_seed)
    traj = sim.simulate_constant(g, cfg, gains, x0, steps)
    _, slope = sim.error_series(traj)
    predicted = rate.convergence_rate(s, cfg, gains).rate
    print(f"gains          {_vec(gains)}")
    print(f"predicted rate {predicted:.6f}")
    fitted = math.exp(slope) if math.isfinite(slope) else float("nan")
    print(f"fitted rate    {fitted:.6f}  (slope {slope:.4f})")
    print(f"e(0) {traj.errors[0]:.4e}   e({steps}) {traj.errors[-1]:.4e}")
    if traj.states is not None and opts.out is not None:
        opts.out.mkdir(parents=True, exist_ok=True)
        sim.write_trajectory_csv(traj, opts.out / "trajectory.csv")
    return EXIT_OK


def cmd_table1(opts) -> int:
    cfg = _config(opts)
    custom = load_graph(opts)
    if custom is None:
        rows = [(label, make(), ratio, lb) for label, make, ratio, lb in TABLE1_ROWS]
    else:
        rows = [("custom", custom, None, None)]
    print(f"{'graph':>8}  {'lN/l2':>8}  {'r_lb':>7}  {'r*':>7}  {'ref lN/l2':>9}  {'ref r_lb':>8}")
    out = []
    for label, g, ref_ratio, ref_lb in rows:
        s = graph.spectrum(g)
        ratio = graph.eigenratio(s)
        lb = rate.rate_lower_bound(s, cfg.order)
        best = _optimize(s, cfg, opts).best_rate
        refs = ("-", "-") if ref_ratio is None else (f"{ref_ratio:.4f}", f"{ref_lb:.4f}")
        print(f"{label:>8}  {ratio:8.4f}  {lb:7.4f}  {best:7.4f}  {refs[0]:>9}  {refs[1]:>8}")
        out.append([label, _fmt(ratio), _fmt(lb), _fmt(best)])
    _write_csv(opts, "table1.csv", ["graph", "eigenratio", "r_lb", "r_star"], out)
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "rate": cmd_rate,
    "optimize": cmd_optimize,
    "optimal-gains": cmd_optimal_gains,
    "finite-time": cmd_finite_time,
    "simulate": cmd_simulate,
    "table1": cmd_table1,
}


def main(argv=None) -> int:
    try:
        opts = resolve_options(argv)
        return COMMANDS[opts.command](opts)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConsensusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
