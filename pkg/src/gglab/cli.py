"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 contraction condition unmet
(``check``), 4 no convergence (``solve``), 5 verification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from .belief import GameParams, compute_coefficients
from .engine import IntegrationScheme, check_conditions, solve
from .errors import DivergenceError, InvalidInputError
from .grid import GridFunction, GridSpec, ThresholdFunction, default_grid
from .verify import Strategy, nonexistence_witness, simulate_playout, verify_equilibrium

log = logging.getLogger("gglab")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CONDITION = 3
EXIT_NO_CONVERGENCE = 4
EXIT_VERIFY_FAIL = 5

DEFAULTS = {
    "n": 2, "sigma2": 1.0, "tau2": 9.0, "tol": 1e-6, "max_iter": 200, "seed": 0,
    "scheme": "gh", "gh_nodes": 32, "mc_samples": 10**4,
    "grid_lo": None, "grid_hi": None, "grid_points": None,
    "out": None, "dump_iterates": False,
}


@dataclass
class RunConfig:
    params: GameParams
    scheme: IntegrationScheme
    grid: GridSpec
    tol: float
    max_iter: int
    seed: int
    output_dir: Path | None
    dump_iterates: bool


def _floats(text, field):
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",")]
    except ValueError:
        raise InvalidInputError(f"{field}: expected comma-separated numbers, got {text!r}")


def _broadcast(values, dim, field):
    if values is None:
        return None
    if len(values) == 1:
        return values * dim
    if len(values) != dim:
        raise InvalidInputError(f"{field}: expected 1 or {dim} values, got {len(values)}")
    return values


def merged_options(args) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"config: cannot read {args.config}: {exc}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InvalidInputError(f"config: unknown keys {sorted(unknown)}")
        opts.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            opts[key] = value
    return opts


def build_config(opts: dict) -> RunConfig:
    def field(name, conv):
        try:
            return conv(opts[name])
        except (TypeError, ValueError):
            raise InvalidInputError(f"{name}: invalid value {opts[name]!r}")

    try:
        params = GameParams(field("n", int), field("sigma2", float), field("tau2", float))
    except InvalidInputError as exc:
        raise InvalidInputError(f"params: {exc}")
    tol = field("tol", float)
    if not tol > 0:
        raise InvalidInputError(f"tol: must be > 0, got {tol}")
    max_iter = field("max_iter", int)
    if max_iter < 0:
        raise InvalidInputError("max_iter: must be >= 0")
    seed = field("seed", int)
    kind = opts["scheme"]
    if kind == "gh":
        scheme = IntegrationScheme.gauss_hermite(field("gh_nodes", int))
    elif kind == "mc":
        scheme = IntegrationScheme.monte_carlo(field("mc_samples", int), seed)
    else:
        raise InvalidInputError(f"scheme: expected 'gh' or 'mc', got {kind!r}")

    coeffs = compute_coefficients(params)
    dim = params.n - 1
    lo = _broadcast(_floats(opts["grid_lo"], "grid_lo"), dim, "grid_lo")
    hi = _broadcast(_floats(opts["grid_hi"], "grid_hi"), dim, "grid_hi")
    pts = _broadcast(_floats(opts["grid_points"], "grid_points"), dim, "grid_points")
    base = default_grid(coeffs)
    try:
        grid = GridSpec(tuple(lo or base.lower), tuple(hi or base.upper),
                        tuple(int(p) for p in (pts or base.points_per_axis)))
    except InvalidInputError as exc:
        raise InvalidInputError(f"grid: {exc}")
    out = Path(opts["out"]) if opts["out"] else None
    return RunConfig(params, scheme, grid, tol, max_iter, seed, out, bool(opts["dump_iterates"]))


# -- output helpers -------------------------------------------------------------------

def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(payload, cfg: RunConfig | None, name: str):
    text = dumps(payload)
    sys.stdout.write(text)
    if cfg is not None and cfg.output_dir is not None:
        atomic_write(cfg.output_dir / name, text)


def params_dict(p: GameParams) -> dict:
    return {"n": p.n, "sigma2": p.sigma2, "tau2": p.tau2}


def solution_envelope(cfg: RunConfig, g: GridFunction) -> dict:
    return {"params": params_dict(cfg.params), "scheme": cfg.scheme.to_dict(), "g": g.to_json_dict()}


def load_solution(path: str, cfg: RunConfig) -> ThresholdFunction:
    p = Path(path)
    if not p.is_file():
        raise InvalidInputError(f"solution: no such file {path}")
    text = p.read_text()
    if p.suffix == ".csv":
        coeffs = compute_coefficients(cfg.params)
        g = GridFunction.from_csv(text, coeffs.a_n, (1.0, float(cfg.params.n)))
        return ThresholdFunction(g, coeffs)
    try:
        env = json.loads(text)
        params = GameParams(**env["params"])
        g = GridFunction.from_json_dict(env["g"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"solution: malformed file {path}: {exc}")
    return ThresholdFunction(g, compute_coefficients(params))


# -- commands ----------------------------------------------------------------------------

def cmd_coeffs(args, cfg: RunConfig) -> int:
    c = compute_coefficients(cfg.params)
    n = cfg.params.n
    payload = {
        "params": params_dict(cfg.params),
        "coefficients": c.to_dict(),
        "derived_identities": {
            # the identities hold exactly; rounding hides last-bit noise
            f"a_n + {n - 1}*b_n": round(c.a_n + (n - 1) * c.b_n, 12),
            "c_n + d_n": round(c.c_n + c.d_n, 12),
        },
    }
    emit(payload, cfg, "coeffs.json")
    return EXIT_OK


def cmd_check(args, cfg: RunConfig) -> int:
    report = check_conditions(cfg.params)
    emit(dict(params=params_dict(cfg.params), **report.to_dict()), cfg, "condition.json")
    return EXIT_OK if report.banach_ok else EXIT_CONDITION


def cmd_solve(args, cfg: RunConfig) -> int:
    out = cfg.output_dir or Path("gglab-out")
    coeffs = compute_coefficients(cfg.params)
    g0 = GridFunction.constant(cfg.grid, (cfg.params.n + 1) / 2, coeffs)
    iterates, latest = [], [g0]

    def callback(t, g):
        latest[0] = g
        if cfg.dump_iterates:
            iterates.append((t, g))

    start = time.perf_counter()
    code = EXIT_OK
    try:
        tf, diag = solve(cfg.params, cfg.scheme, g0=g0, tol=cfg.tol, max_iter=cfg.max_iter,
                         callback=callback)
        final = tf.g
        if not diag.converged:
            code = EXIT_NO_CONVERGENCE
    except DivergenceError as exc:
        diag = exc.diagnostics
        final = latest[0]
        code = EXIT_NO_CONVERGENCE
    log.info("solve finished in %.2fs", time.perf_counter() - start)

    summary = {"params": params_dict(cfg.params), "scheme": cfg.scheme.to_dict(),
               "grid": cfg.grid.to_dict(), "diagnostics": diag.to_dict(include_timing=False)}
    for t, g in iterates:
        atomic_write(out / "iterates" / f"iter_{t:04d}.csv", g.to_csv())
    if final is not None:
        atomic_write(out / "solution.csv", final.to_csv())
        atomic_write(out / "solution.json", dumps(solution_envelope(cfg, final)))
    atomic_write(out / "diagnostics.json", dumps(summary))
    sys.stdout.write(dumps({"converged": diag.converged, "iterations": diag.iterations,
                            "last_sup_delta": diag.sup_deltas[-1] if diag.sup_deltas else None,
                            "banach_ok": diag.condition.banach_ok, "output_dir": str(out)}))
    return code


def cmd_verify(args, cfg: RunConfig) -> int:
    tf = load_solution(args.solution, cfg)
    summary = verify_equilibrium(tf, probe_count=args.probes, samples=args.samples, seed=cfg.seed)
    emit(summary.to_dict(include_reports=args.reports), cfg, "verification.json")
    return EXIT_OK if summary.passed else EXIT_VERIFY_FAIL


def cmd_witness(args, cfg: RunConfig) -> int:
    t = _floats(args.t, "t")
    if t is None:
        raise InvalidInputError("t: thresholds are required (--t 1,1)")
    t = _broadcast(t, cfg.params.n, "t")
    directions = ["below", "above"] if args.direction == "both" else [args.direction]
    agents = range(cfg.params.n) if args.agent is None else [args.agent]
    results = []
    for agent in agents:
        if not 0 <= agent < cfg.params.n:
            raise InvalidInputError(f"agent: must be in 0..{cfg.params.n - 1}")
        for d in directions:
            w = nonexistence_witness(cfg.params, t, eps=args.eps, M=args.M, agent=agent, direction=d,
                                     samples=args.samples, seed=cfg.seed)
            results.append(w.to_dict())
    payload = {"params": params_dict(cfg.params), "thresholds": t, "eps": args.eps, "M": args.M,
               "mc_peer_risky": max(r["mc_peer_risky"] for r in results if r["direction"] == "below")
               if "below" in directions else None,
               "refuted": any(r["violated"] for r in results), "witnesses": results}
    emit(payload, cfg, "witness.json")
    return EXIT_OK if payload["refuted"] else EXIT_VERIFY_FAIL


def cmd_simulate(args, cfg: RunConfig) -> int:
    if args.strategy:
        p = Path(args.strategy)
        if not p.is_file():
            raise InvalidInputError(f"strategy: no such file {args.strategy}")
        try:
            spec = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"strategy: malformed JSON: {exc}")
        if spec.get("kind") == "linear-threshold":
            strategy = Strategy.linear(spec["thresholds"])
        else:
            strategy = Strategy.function(load_solution(args.strategy, cfg))
            if strategy.tf.coeffs.params != cfg.params:
                cfg.params = strategy.tf.coeffs.params
    else:
        t = _broadcast(_floats(args.t or "1.5", "t"), cfg.params.n, "t")
        strategy = Strategy.linear(t)
    result = simulate_playout(cfg.params, strategy, args.theta, seed=cfg.seed)
    emit(dict(params=params_dict(cfg.params), strategy=strategy.kind, **result.to_dict()), cfg,
         "playout.json")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--n", type=int)
    common.add_argument("--sigma2", type=float)
    common.add_argument("--tau2", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--scheme", choices=["gh", "mc"])
    common.add_argument("--gh-nodes", dest="gh_nodes", type=int)
    common.add_argument("--mc-samples", dest="mc_samples", type=int)
    common.add_argument("--grid-lo", dest="grid_lo", help="per-axis lower bounds, comma-separated")
    common.add_argument("--grid-hi", dest="grid_hi", help="per-axis upper bounds, comma-separated")
    common.add_argument("--grid-points", dest="grid_points", help="per-axis node counts, comma-separated")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-iterates", dest="dump_iterates", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="gglab", description="Threshold equilibria of global games with noisy sharing")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("coeffs", parents=[common], help="print conditioning coefficients")
    sub.add_parser("check", parents=[common], help="evaluate the contraction condition")
    sub.add_parser("solve", parents=[common], help="iterate the fixed-point operator")

    p = sub.add_parser("verify", parents=[common], help="Monte-Carlo best-response check of a solution")
    p.add_argument("--solution", required=True)
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--samples", type=int, default=10**5)
    p.add_argument("--reports", action="store_true", help="include per-probe reports")

    p = sub.add_parser("witness", parents=[common], help="refute a linear-threshold profile")
    p.add_argument("--t", required=True, help="thresholds, comma-separated (one value broadcasts)")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--M", type=float, default=1e6)
    p.add_argument("--agent", type=int)
    p.add_argument("--direction", choices=["below", "above", "both"], default="both")
    p.add_argument("--samples", type=int, default=10**5)

    p = sub.add_parser("simulate", parents=[common], help="play one round for a fixed theta")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--strategy", help="solution JSON/CSV or {'kind': 'linear-threshold', ...}")
    p.add_argument("--t", help="linear thresholds when no strategy file is given")
    return parser


COMMANDS = {"coeffs": cmd_coeffs, "check": cmd_check, "solve": cmd_solve, "verify": cmd_verify,
            "witness": cmd_witness, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        cfg = build_config(merged_options(args))
        return COMMANDS[args.command](args, cfg)
    except InvalidInputError as exc:
        sys.stderr.write(f"gglab: error: {exc}\n")
        return EXIT_INVALID
    finally:
        logging.captureWarnings(False)


if __name__ == "__main__":
    sys.exit(main())
