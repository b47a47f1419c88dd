"""Command line entry point: ``netgames <subcommand> [options]``.

Exit codes: 0 success, 2 usage or invalid parameter, 3 data or
observability problem, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import fileio, mc_harness
from .dgp import ModelParams, TypeSpec, assemble_dataset, rng_streams, simulate_types
from .diagnostics import iu_test, model_select
from .errors import NetgamesError
from .inference import InstrumentSpec, estimate, make_grid
from .mc_harness import ExperimentConfig, make_graph


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid-step", type=float, default=0.002)
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--threads", type=int, default=1)
    return p


def _graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=("er", "ba"), default="er")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--lambda", dest="lam", type=float, default=2.0, help="ER mean degree")
    p.add_argument("--m", type=int, default=1, help="BA edges per new node")
    p.add_argument("--seed-size", type=int, default=None, help="BA seed graph size")
    p.add_argument("--seed-p", type=float, default=None, help="BA seed edge probability")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="edge-list CSV")
    p.add_argument("--nodes", required=True, help="node CSV with a y column")
    p.add_argument("--model", choices=("simple", "fs"), default="simple")
    p.add_argument("--downweight", action="store_true")
    p.add_argument("--x1-powers", type=_ints, default=(2,))
    p.add_argument("--x2-powers", type=_ints, default=(2, 3))
    p.add_argument("--screen-step", type=float, default=None, help="coarse pre-pass step for the beta grid")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="netgames", description="Simulation and inference for network games with bounded rationality.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", parents=[common], help="generate a random payoff graph")
    _graph_args(p)

    p = sub.add_parser("simulate", parents=[common], help="draw types and outcomes on a graph")
    p.add_argument("--graph", help="edge-list CSV; generated from the graph options when absent")
    _graph_args(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=_floats, default=(2.0, 4.0, 1.0))
    p.add_argument("--delta", type=_floats, default=(3.0, 4.0))
    p.add_argument("--agent-model", default="simple", help="simple, fs, equilibrium or order-<m>")
    p.add_argument("--eps-var", type=float, default=1.0)
    p.add_argument("--eta-var", type=float, default=1.0)
    p.add_argument("--graph-out", default=None, help="also write the graph here")

    p = sub.add_parser("estimate", parents=[common], help="confidence sets for beta, a'rho and ANE")
    _data_args(p)
    p.add_argument("--a", type=_floats, default=None, help="weights for a'rho (default all ones)")

    p = sub.add_parser("mc", parents=[common], help="coverage experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--R", type=int, default=None, help="override the replication count")

    p = sub.add_parser("ane", parents=[common], help="externality curves on nested subgraphs")
    p.add_argument("--family", choices=("er", "ba"), default="er")
    p.add_argument("--draws", type=int, default=50)
    p.add_argument("--n-big", type=int, default=None)

    p = sub.add_parser("converge", parents=[common], help="behavioral responses approaching the equilibrium")
    p.add_argument("--family", choices=("er", "ba"), default="er")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--param", type=float, default=3.0)
    p.add_argument("--betas", type=_floats, default=(-0.5, -0.3, 0.0, 0.3, 0.5))
    p.add_argument("--m-max", type=int, default=50)

    p = sub.add_parser("model-select", parents=[common], help="which agent models survive the overidentification test")
    _data_args(p)

    p = sub.add_parser("iu-test", parents=[common], help="test for information sharing on unobservables")
    _data_args(p)
    return parser


def _say(text: str) -> None:
    print(text, flush=True)


def _load(args):
    g = fileio.load_graph(args.graph)
    data = fileio.load_nodes(args.nodes, require_y=True)
    fileio.check_sizes(g, data)
    sample = fileio.load_sample(args.nodes, g.n)
    spec = InstrumentSpec(x1_powers=args.x1_powers, x2_powers=args.x2_powers, downweight=args.downweight)
    return g, data, sample, spec


def _gen(args, rng):
    if args.family == "ba":
        from .graphs import gen_barabasi_albert

        return gen_barabasi_albert(args.n, args.m, seed_size=args.seed_size, seed_p=args.seed_p, rng=rng)
    return make_graph("er", args.n, args.lam, rng)


def cmd_gen_graph(args) -> int:
    g = _gen(args, rng_streams(args.seed, 0).graph)
    if args.out:
        fileio.save_graph(g, args.out, meta={"family": args.family, "seed": args.seed})
    _say(f"n={g.n} d_av={g.average_degree:.4f} d_mx={g.max_degree}")
    return 0


def cmd_simulate(args) -> int:
    streams = rng_streams(args.seed, 0)
    g = fileio.load_graph(args.graph) if args.graph else _gen(args, streams.graph)
    params = ModelParams(args.beta, np.array(args.gamma), np.array(args.delta))
    types = simulate_types(g.n, len(args.gamma), len(args.delta), TypeSpec(eps_var=args.eps_var, eta_var=args.eta_var), streams)
    y = assemble_dataset(g, types, params, args.agent_model)
    out = args.out or "nodes.csv"
    fileio.save_nodes(types.with_outcome(y), out)
    if args.graph_out:
        fileio.save_graph(g, args.graph_out, meta={"family": args.family, "seed": args.seed})
    _say(f"wrote {g.n} nodes to {out}")
    return 0


def cmd_estimate(args) -> int:
    g, data, sample, spec = _load(args)
    res = estimate(g, data, sample, spec, args.model, args.alpha, args.grid_step, a=args.a, screen_step=args.screen_step)
    out = Path(args.out or "estimate_out")
    out.mkdir(parents=True, exist_ok=True)
    report = res.to_dict(args.grid_step)
    curve = report.pop("T_curve")
    report["inputs"] = {"graph": args.graph, "nodes": args.nodes, "seed": args.seed}
    report["config_hash"] = fileio.config_hash({k: v for k, v in vars(args).items() if k not in ("out", "threads")})
    report["seed"] = args.seed
    fileio.write_json(report, out / "report.json")
    with open(out / "t_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "T", "config_hash", "seed"])
        for b, t in curve:
            w.writerow([repr(b), "" if t is None else repr(t), report["config_hash"], args.seed])
    ci = ", ".join(f"[{lo:.3f}, {hi:.3f}]" for lo, hi in res.ci_beta) or "empty"
    _say(f"beta set: {ci}; beta_hat={res.beta_hat:.3f}")
    return 0


def cmd_mc(args) -> int:
    raw = fileio.read_json_config(args.config)
    if args.R is not None:
        raw["R"] = args.R
    if args.threads != 1:
        raw["threads"] = args.threads
    config = ExperimentConfig.from_dict(raw)
    out = args.out or "mc_out"
    rep = mc_harness.run_coverage_experiment(config, out_dir=out)
    for c in rep.cells:
        _say(
            f"n={c['n']} param={c['param']} beta0={c['beta0']}: coverage {c['coverage_beta']:.4f} "
            f"length {c['mean_length_beta']:.4f} | a'rho coverage {c['coverage_a_rho']:.4f} length {c['mean_length_a_rho']:.4f}"
        )
    return 0


def cmd_ane(args) -> int:
    res = mc_harness.run_ane_comparison(args.family, draws=args.draws, base_seed=args.seed, n_big=args.n_big, out_dir=args.out or "ane_out")
    for net, s in res.sizes.items():
        _say(f"network {net}: n={s['n']:.1f} d_mx={s['d_mx']:.1f} d_av={s['d_av']:.3f}")
    return 0


def cmd_converge(args) -> int:
    res = mc_harness.run_convergence_experiment(args.family, args.n, args.param, args.betas, args.m_max, args.seed, out_dir=args.out or "converge_out")
    for b, r, d in zip(res.betas, res.rates, res.deviation[:, -1]):
        _say(f"beta={b:+.2f}: deviation at m={res.orders[-1]} {d:.3e}, fitted rate {r:.4f}")
    return 0


def cmd_model_select(args) -> int:
    g, data, sample, spec = _load(args)
    res = model_select(g, data, sample, spec, args.alpha, make_grid(args.grid_step), screen_step=args.screen_step or 0.01)
    out = res.to_dict()
    out["seed"] = args.seed
    out["config_hash"] = fileio.config_hash({k: v for k, v in vars(args).items() if k not in ("out", "threads")})
    if args.out:
        fileio.write_json(out, args.out)
    _say(f"T_ST={res.t_st:.3f} T_FS={res.t_fs:.3f} critical={res.critical:.3f} selected={','.join(res.selected) or 'none'}")
    return 0


def cmd_iu_test(args) -> int:
    g, data, sample, spec = _load(args)
    res = iu_test(g, data, sample, spec, args.alpha, args.model, make_grid(args.grid_step), screen_step=args.screen_step or 0.01)
    out = res.to_dict()
    out["seed"] = args.seed
    out["config_hash"] = fileio.config_hash({k: v for k, v in vars(args).items() if k not in ("out", "threads")})
    if args.out:
        fileio.write_json(out, args.out)
    verdict = "inconclusive" if res.inconclusive else ("reject" if res.reject else "do not reject")
    _say(f"statistic={res.statistic:.4f} critical={res.critical:.4f}: {verdict}")
    return 0


COMMANDS = {
    "gen-graph": cmd_gen_graph,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "mc": cmd_mc,
    "ane": cmd_ane,
    "converge": cmd_converge,
    "model-select": cmd_model_select,
    "iu-test": cmd_iu_test,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not 0 < args.alpha < 1:
        parser.error("--alpha must lie in (0, 1)")
    if not 0 < args.grid_step < 1:
        parser.error("--grid-step must lie in (0, 1)")
    try:
        return COMMANDS[args.command](args)
    except NetgamesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
