"""Command-line front end: ``ipk solve``, ``ipk bench`` and ``ipk spectra``."""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__, spectra
from .ippmm import Config, SolveResult, Status, solve
from .qpio import MPSParseError, TriviallyInfeasibleError, read_problem

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_ITERATION_LIMIT = 3
EXIT_ILL_CONDITIONED = 4
EXIT_KRYLOV_FAILURE = 5
EXIT_USAGE = 64
EXIT_PARSE = 65
EXIT_NOINPUT = 66

STATUS_EXIT = {
    Status.OPTIMAL: EXIT_OK,
    Status.PRIMAL_INFEASIBLE: EXIT_INFEASIBLE,
    Status.DUAL_INFEASIBLE: EXIT_INFEASIBLE,
    Status.ITERATION_LIMIT: EXIT_ITERATION_LIMIT,
    Status.ILL_CONDITIONED: EXIT_ILL_CONDITIONED,
    Status.KRYLOV_FAILURE: EXIT_KRYLOV_FAILURE,
}

BENCH_COLUMNS = [
    "problem", "nnz_A", "nnz_Q", "mode", "status", "time_s", "ip_iterations",
    "krylov_iterations", "objective", "primal_res", "dual_res",
]

PROBLEM_SUFFIXES = (".mps", ".qps", ".mps.gz", ".qps.gz", ".json")

log = logging.getLogger("ipk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# configuration


_FLAG_KEYS = {
    "tol": "tol",
    "max_iter": "max_iter",
    "mode": "mode",
    "maxit_cg": "maxit_cg",
    "maxit_minres": "maxit_minres",
    "ce_init": "ce_init",
    "lr": "lr",
}


def load_config(args: argparse.Namespace, env: dict[str, str] | None = None) -> Config:
    """Config from $IPK_CONFIG (a JSON object), overridden by explicit flags."""
    env = os.environ if env is None else env
    settings: dict[str, Any] = {}
    path = env.get("IPK_CONFIG")
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read IPK_CONFIG file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"IPK_CONFIG file {path} must hold a JSON object")
        settings.update(loaded)
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[key] = value
    try:
        return Config.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, help="optimality tolerance (default 1e-4)")
    p.add_argument("--max-iter", type=int, help="interior point iteration limit (default 200)")
    p.add_argument("--mode", choices=("auto", "cg", "minres"), help="normal equations + CG or augmented system + MINRES")
    p.add_argument("--maxit-cg", type=int)
    p.add_argument("--maxit-minres", type=int)
    p.add_argument("--ce-init", type=float, help="initial sparsification constant")
    p.add_argument("--lr", choices=("on", "off", "auto"), help="low-rank preconditioner update")
    p.add_argument("--out", help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ipk", description="Inexact IP-PMM solver for sparse LP and convex QP.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one MPS/QPS problem")
    p.add_argument("path")
    _add_solver_flags(p)
    p.add_argument("--no-trace", action="store_true", help="omit the per-iteration trace")
    p.add_argument("--no-solution", action="store_true", help="omit the primal solution vector")

    p = sub.add_parser("bench", help="solve every problem in a directory")
    p.add_argument("dir")
    _add_solver_flags(p)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("spectra", help="check the preconditioned eigenvalue bounds on random instances")
    p.add_argument("--theorem", type=int, choices=(1, 2, 3), action="append",
                   help="theorem to check (repeatable; default all)")
    p.add_argument("--seeds", type=int, default=100, help="instances per theorem")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--mu", type=float, action="append", help="barrier value (repeatable; default 1,1e-2,1e-4,1e-6)")
    p.add_argument("--delta", type=float, help="dual regularization (default mu)")
    p.add_argument("--rho", type=float, help="primal regularization (default mu)")
    p.add_argument("--out")
    return parser


# ---------------------------------------------------------------------------
# output


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, Status):
        return o.value
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats, which strict JSON cannot hold, by strings."""
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(json.loads(json.dumps(obj, default=_json_default))), indent=2)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args: argparse.Namespace) -> int:
    config = load_config(args)
    try:
        prob = read_problem(args.path)
    except OSError as exc:
        print(f"ipk: cannot read {args.path}: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    except TriviallyInfeasibleError as exc:
        print(f"ipk: {args.path}: {exc}", file=sys.stderr)
        _emit(dumps({"name": Path(args.path).stem, "status": Status.PRIMAL_INFEASIBLE.value,
                     "detail": str(exc)}), args.out)
        return EXIT_INFEASIBLE
    except MPSParseError as exc:
        where = f":{exc.line}" if getattr(exc, "line", None) else ""
        print(f"ipk: parse error in {args.path}{where}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        result = solve(prob, config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = result.to_dict(include_solution=not args.no_solution, include_trace=not args.no_trace)
    report["config"] = dataclasses.asdict(config)
    _emit(dumps(report), args.out)
    return STATUS_EXIT[result.status]


# ---------------------------------------------------------------------------
# bench


def find_problems(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {directory}")
    files = [f for f in d.iterdir() if f.is_file() and f.name.lower().endswith(PROBLEM_SUFFIXES)]
    return sorted(files, key=lambda f: f.name)


def _record(name: str, nnz_a, nnz_q, mode: str, status: str, result: SolveResult | None = None,
            error: str | None = None) -> dict:
    rec = {
        "problem": name,
        "nnz_A": nnz_a,
        "nnz_Q": nnz_q,
        "mode": mode,
        "status": status,
        "time_s": result.time if result else 0.0,
        "ip_iterations": result.ip_iterations if result else 0,
        "krylov_iterations": result.krylov_iterations if result else 0,
        "objective": result.objective if result else float("nan"),
        "primal_res": result.primal_res if result else float("nan"),
        "dual_res": result.dual_res if result else float("nan"),
    }
    if error:
        rec["error"] = error
    return rec


def bench_problem(path: Path, config: Config) -> list[dict]:
    """Records for one file: both modes when Q is diagonal and no mode was forced."""
    name = path.name.split(".")[0]
    try:
        prob = read_problem(path)
    except TriviallyInfeasibleError as exc:
        return [_record(name, None, None, config.mode, Status.PRIMAL_INFEASIBLE.value, error=str(exc))]
    except (OSError, MPSParseError) as exc:
        return [_record(name, None, None, config.mode, "error", error=str(exc))]
    if config.mode == "auto" and prob.q_is_diagonal():
        modes = ["cg", "minres"]
    else:
        modes = [config.mode]
    records = []
    for mode in modes:
        try:
            res = solve(prob, dataclasses.replace(config, mode=mode))
            records.append(_record(name, prob.A.nnz, prob.Q.nnz, res.mode, res.status.value, res))
        except Exception as exc:  # the harness keeps going on any per-problem failure
            records.append(_record(name, prob.A.nnz, prob.Q.nnz, mode, "error", error=f"{type(exc).__name__}: {exc}"))
    return records


def aggregate(records: list[dict]) -> dict:
    solved = sum(r["status"] == Status.OPTIMAL.value for r in records)
    return {
        "problem": "TOTAL",
        "records": len(records),
        "time_s": sum(r["time_s"] for r in records),
        "ip_iterations": sum(r["ip_iterations"] for r in records),
        "krylov_iterations": sum(r["krylov_iterations"] for r in records),
        "solved_pct": 100.0 * solved / len(records) if records else 0.0,
    }


def run_bench(directory, config: Config, jobs: int = 1) -> tuple[list[dict], dict]:
    files = find_problems(directory)
    if jobs > 1 and len(files) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(bench_problem, files, [config] * len(files)))
    else:
        chunks = [bench_problem(f, config) for f in files]
    records = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r["problem"], r["mode"]))
    return records, aggregate(records)


def bench_csv(records: list[dict], agg: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r)
    w.writerow({
        "problem": "TOTAL",
        "status": f"solved {agg['solved_pct']:.1f}%",
        "time_s": agg["time_s"],
        "ip_iterations": agg["ip_iterations"],
        "krylov_iterations": agg["krylov_iterations"],
    })
    return buf.getvalue()


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    records, agg = run_bench(args.dir, config, args.jobs)
    if args.format == "csv":
        text = bench_csv(records, agg)
    else:
        text = dumps({"records": records, "aggregate": agg})
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# spectra


def cmd_spectra(args: argparse.Namespace) -> int:
    if args.seeds < 0:
        raise UsageError("--seeds must be non-negative")
    theorems = args.theorem or [1, 2, 3]
    mus = args.mu or list(spectra.DEFAULT_MUS)
    seeds = list(range(args.seed, args.seed + args.seeds))
    reports = [spectra.sweep(t, seeds, mus, delta=args.delta, rho=args.rho, cycle_mus=True) for t in theorems]
    _emit(dumps({"sweeps": reports}), args.out)
    return 1 if any(r["violations"] for r in reports) else EXIT_OK


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "spectra": cmd_spectra}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ipk: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
