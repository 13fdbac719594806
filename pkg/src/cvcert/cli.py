"""Command-line interface: ``cvcert <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 a simulated or
checked quantity violated its bound.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .applications import (
    Gate,
    fisher_lower_bound,
    mbqc_apply_gate,
    mbqc_initial_state,
    mbqc_tail_bound,
    optimize_fisher,
    simulate_teleportation,
)
from .bounds import PROVENANCE, Bound, ProtocolParams, bound_report, p_null_gaussian
from .graph import NoiseModel, load_graph, max_measurement_noise, path_graph
from .oracles import check_lnn_inequalities, check_serfling_sampling, fisher_grid_oracle, povm_integral_oracle
from .planner import plan_parameters, table1_rows
from .protocol import (
    DisplacedIID,
    Honest,
    Mixture,
    PermutedBlock,
    estimate_conditional_pass,
    estimate_joint_failure,
    source_to_json,
)

OK, USAGE, VIOLATION = 0, 1, 2

COMMAND_PROVENANCE = {
    "plan": "parameter choice mu=2n, nu=f=1/lambda, lambda=(4n+1)/J; required single-test pass probability",
    "table1": "published parameter table for J=0.1 and P_acc=0.9",
    "verify": "auxiliary inequalities (L_N^n enumeration, sampling without replacement) and the acceptance POVM",
    "teleport": "teleportation through the two-mode graph state with noisy nullifiers",
    "mbqc": "noise recurrences of teleported gates and the cumulative noise tail bound",
    "metrology": "Fisher information lower bound from the certified overlap",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _csv_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvcert", description="Certification toolkit for CV graph states")
    parser.add_argument("--version", action="version", version=f"cvcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--format", choices=["json", "csv", "text"], default="json")
        p.add_argument("--out", default=None, help="write the report here instead of stdout")
        if seed:
            p.add_argument("--seed", type=_seed, default=0)

    def protocol_flags(p):
        p.add_argument("--graph", default=None, help="graph JSON file; defaults to a path graph on --n vertices")
        p.add_argument("--n", type=int, default=1)
        p.add_argument("--sigma", type=float, default=10.0)
        p.add_argument("--nu", type=float, default=0.0, help="p-quadrature noise width")
        p.add_argument("--mux", type=float, default=0.0, help="x-quadrature noise width")
        p.add_argument("--epsilon", type=float, default=1.0)
        p.add_argument("--f", type=float, default=0.1)
        p.add_argument("--nu-serfling", type=float, default=None, help="sampling slack (default: f)")
        p.add_argument("--ntest", type=int, default=100)
        p.add_argument("--mu-ratio", type=float, default=None, help="N_total/N_test (default: 2n)")
        p.add_argument("--k", type=int, default=1)

    p = sub.add_parser("plan", help="plan parameters for a joint-failure target")
    common(p, seed=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--J", type=float, default=0.1)
    p.add_argument("--pacc", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=None, help="noise width; adds epsilon to the output")

    p = sub.add_parser("bounds", help="evaluate every closed-form bound")
    common(p, seed=False)
    protocol_flags(p)
    p.add_argument("--pacc-prior", type=float, default=None)

    p = sub.add_parser("simulate", help="Monte Carlo run of the protocol against a source")
    common(p)
    protocol_flags(p)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--source", choices=["honest", "displaced", "mixture", "block"], default="honest")
    p.add_argument("--shift", type=_csv_floats, default=[0.0])
    p.add_argument("--q", type=float, default=0.0)
    p.add_argument("--bad-count", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--conditional", action="store_true", help="also estimate the conditional pass probability")
    p.add_argument("--corrupt-bound", type=float, default=None, help=argparse.SUPPRESS)

    p = sub.add_parser("table1", help="recompute the published parameter table")
    common(p, seed=False)

    p = sub.add_parser("verify", help="run the oracle suites")
    common(p)
    p.add_argument("--lnn-trials", type=int, default=2000)
    p.add_argument("--serfling-trials", type=int, default=20000)

    p = sub.add_parser("teleport", help="teleportation deviation statistics")
    common(p)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--mux", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--Delta", type=float, default=None)
    p.add_argument("--input", type=_csv_floats, default=[0.0, 0.0])

    p = sub.add_parser("mbqc", help="noise propagation through a gate program")
    common(p)
    p.add_argument("--program", required=True, help='JSON list or file, e.g. [{"kind": "shear", "s": 2.0}]')
    p.add_argument("--wm", type=float, default=0.0, help="measurement noise width per gate")
    p.add_argument("--wg", type=float, default=0.0, help="graph noise width per gate")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--Delta", type=float, default=1.0)
    p.add_argument("--signal-width", type=float, default=None)

    p = sub.add_parser("metrology", help="Fisher information lower bound")
    common(p, seed=False)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--mux", type=float, default=0.1)
    p.add_argument("--Delta", type=float, default=0.1)
    p.add_argument("--theta", type=float, default=None)
    return parser


# ----------------------------------------------------------------- commands


def _graph_and_noise(args):
    graph = load_graph(args.graph) if args.graph else path_graph(args.n)
    noise = NoiseModel(p_width=args.nu, x_width=args.mux)
    return graph, noise


def _params(args, graph, noise) -> ProtocolParams:
    n = graph.n
    f = args.f
    return ProtocolParams(
        n=n,
        N_test=args.ntest,
        mu_ratio=2.0 * n if args.mu_ratio is None else args.mu_ratio,
        f=f,
        epsilon=args.epsilon,
        nu_serfling=f if args.nu_serfling is None else args.nu_serfling,
        delta=max_measurement_noise(graph, noise),
    )


def cmd_plan(args):
    plan = plan_parameters(args.n, args.J, args.pacc)
    out = plan.to_json()
    if args.delta is not None:
        out["delta"] = args.delta
        out["epsilon"] = plan.eps_over_delta * args.delta
        out["sigma"] = 1.0 / args.delta
    return {"plan": out}, OK, [out]


def cmd_bounds(args):
    graph, noise = _graph_and_noise(args)
    params = _params(args, graph, noise)
    report = bound_report(params, args.sigma, args.k, args.pacc_prior)
    return {"params": params.to_json(), "report": report.to_json()}, OK, [_flat(report.to_json())]


def _source(args, n):
    shift = args.shift[0] if len(args.shift) == 1 else tuple(args.shift)
    if args.source == "honest":
        return Honest(args.sigma)
    if args.source == "displaced":
        return DisplacedIID(args.sigma, shift)
    if args.source == "mixture":
        return Mixture(args.sigma, args.q, shift)
    return PermutedBlock(args.sigma, args.bad_count, shift)


def cmd_simulate(args):
    graph, noise = _graph_and_noise(args)
    params = _params(args, graph, noise)
    if args.workers < 1:
        raise ValueError("--workers must be at least 1")
    source = _source(args, graph.n)
    override = None if args.corrupt_bound is None else Bound.upper(args.corrupt_bound)
    joint = estimate_joint_failure(
        params, noise, source, args.k, args.trials, args.seed, graph, args.workers, bound=override
    )
    report = bound_report(params, source.sigma, args.k)
    out = {
        "params": params.to_json(),
        "source": source_to_json(source),
        "graph": graph.to_json(),
        "trials": args.trials,
        "seed": args.seed,
        "joint_failure": joint.to_json(),
        "bounds": report.to_json(),
    }
    violated = joint.violated
    if args.conditional:
        cond = estimate_conditional_pass(params, noise, source, args.k, args.trials, args.seed, graph, args.workers)
        out["conditional_pass"] = cond.to_json()
        violated = violated or cond.violated
    out["violated"] = violated
    rows = [
        {"trial": t, "accepted": int(acc), "N_pass": n_pass, "kept_pass": kp} for t, acc, n_pass, kp in joint.runs
    ]
    return out, VIOLATION if violated else OK, rows


def cmd_table1(args):
    rows = table1_rows()
    flat = []
    for r in rows:
        plan, pub = r["plan"], r["published"]
        flat.append(
            {
                "n": r["n"],
                "lambda": plan["lam"],
                "lambda_published": pub["lam"],
                "N_test": plan["N_test"],
                "N_test_published": pub["N_test"],
                "N_total": plan["N_total"],
                "N_total_published": pub["N_total"],
                "P_stab": plan["P_stab"],
                "P_stab_published": pub["P_stab"],
                "eps_over_delta": plan["eps_over_delta"],
                "eps_over_delta_published": pub["eps_over_delta"],
                "eps_over_delta_at_published_P": r["eps_over_delta_from_published_p"],
                "tail_method": plan["tail_method"],
                "discrepancy": "; ".join(r["discrepancies"]),
            }
        )
    return {"J": 0.1, "P_acc": 0.9, "rows": rows}, OK, flat


def cmd_verify(args):
    lnn = check_lnn_inequalities(12, args.lnn_trials, args.seed)
    serf = check_serfling_sampling(200, 100, args.serfling_trials, 0.1, args.seed)
    worst_povm = 0.0
    for sigma in np.geomspace(0.5, 1e3, 5):
        for delta in np.linspace(0.0, 1.0, 5):
            for eps in np.geomspace(0.1, 10.0, 5):
                width = math.sqrt(delta**2 + 1.0 / sigma**2)
                gap = abs(p_null_gaussian(sigma, delta, eps) - povm_integral_oracle(width, eps))
                worst_povm = max(worst_povm, gap)
    worst_fisher = 0.0
    for eta in (0.0, 0.1, 0.3):
        for mu in (0.05, 0.1, 0.5):
            for Delta in (0.05, 0.1, 0.5):
                q_star = optimize_fisher(eta, mu, Delta)[1]
                q_grid = fisher_grid_oracle(eta, mu, Delta)[1]
                worst_fisher = max(worst_fisher, (q_grid - q_star) / q_grid)
    checks = {
        "lnn_inequalities": {"report": lnn.to_json(), "passed": lnn.passed(1e-12)},
        "serfling_sampling": {"report": serf.to_json(), "passed": serf.passed(0.0)},
        "povm_oracle": {"max_abs_diff": worst_povm, "passed": worst_povm <= 1e-10},
        "fisher_optimum": {"max_rel_shortfall": worst_fisher, "passed": worst_fisher <= 1e-6},
    }
    ok = all(c["passed"] for c in checks.values())
    rows = [{"check": k, "passed": v["passed"]} for k, v in checks.items()]
    return {"checks": checks, "passed": ok}, OK if ok else VIOLATION, rows


def cmd_teleport(args):
    noise = NoiseModel(x_width=args.mux)
    stats = simulate_teleportation(args.sigma, noise, tuple(args.input), args.trials, args.seed, Delta=args.Delta)
    violated = any(r["fraction"] + 3.0 * r["stderr"] < r["bound"] for r in stats.sweep)
    out = stats.to_json()
    out["violated"] = violated
    return out, VIOLATION if violated else OK, stats.sweep


def _load_program(text: str):
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        with open(text) as fh:
            data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("gate program must be a JSON list")
    return [Gate.from_json(g) for g in data]


def cmd_mbqc(args):
    program = _load_program(args.program)
    rng = np.random.default_rng(args.seed)
    state = mbqc_initial_state()
    trace = []
    for gate in program:
        state = mbqc_apply_gate(state, gate, args.wm, args.wg, rng=rng, signal_width=args.signal_width)
        trace.append({"gate": gate.kind, "s": gate.s, **state.to_json()})
    tail = mbqc_tail_bound(state, args.t, args.eta, args.Delta) if program else None
    out = {
        "program": [{"kind": g.kind, "s": g.s} for g in program],
        "final": state.to_json(),
        "trace": trace,
        "tail_bound": None if tail is None else tail.to_json(),
    }
    return out, OK, trace


def cmd_metrology(args):
    out = {}
    if args.theta is not None:
        out["at_theta"] = fisher_lower_bound(args.eta, args.mux, args.Delta, args.theta).to_json()
    if args.mux + args.Delta > 0:
        theta, q = optimize_fisher(args.eta, args.mux, args.Delta)
        out["optimum"] = {"theta_star": theta, "Q_star": q}
    else:
        out["optimum"] = {"unbounded": True}
    return out, OK, [_flat(out)]


COMMANDS = {
    "plan": cmd_plan,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "table1": cmd_table1,
    "verify": cmd_verify,
    "teleport": cmd_teleport,
    "mbqc": cmd_mbqc,
    "metrology": cmd_metrology,
}


# ------------------------------------------------------------------- output


def _flat(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flat(v, f"{prefix}{k}."))
    elif isinstance(obj, (list, tuple)) and not all(isinstance(v, (int, float)) for v in obj):
        for i, v in enumerate(obj):
            out.update(_flat(v, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = obj
    return out


def _fmt(value) -> str:
    if isinstance(value, bool) or value is None:
        return str(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def _render(fmt: str, payload: dict, rows: list) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=False, default=_json_default) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        keys = list(dict.fromkeys(k for r in rows for k in _flat(r)))
        writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in _flat(r).items()})
        return buf.getvalue()
    flat = _flat(payload["result"])
    width = max((len(k) for k in flat), default=0)
    return "".join(f"{k.ljust(width)}  {_fmt(v)}\n" for k, v in flat.items())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"cvcert: error: {exc}", file=sys.stderr)
        return USAGE
    try:
        result, code, rows = COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"cvcert {args.command}: error: {exc}", file=sys.stderr)
        return USAGE
    # worker count is excluded so that reports do not depend on it
    config = {k: v for k, v in vars(args).items() if k not in ("out", "corrupt_bound", "workers")}
    if getattr(args, "corrupt_bound", None) is not None:
        config["corrupt_bound"] = args.corrupt_bound
    provenance = dict(PROVENANCE) if args.command in ("bounds", "simulate") else {}
    if args.command in COMMAND_PROVENANCE:
        provenance[args.command] = COMMAND_PROVENANCE[args.command]
    payload = {
        "tool": "cvcert",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "provenance": provenance,
        "result": result,
    }
    text = _render(args.format, payload, rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
