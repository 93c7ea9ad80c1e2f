"""Command-line front end.

Exit codes: 0 success, 1 verification failed, 2 invalid input,
3 root search exhausted its budget, 4 density refuted or not certified.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dense_sets import (CloudFormatError, CloudSpec, DensityError, GENERATOR_KINDS, Instance,
                         Region, cloud_to_json, generate, load_instance)
from .geometry import GeometryError
from .oracle import check_1d_strict, covering_trials
from .solver import (ExtractionError, RootSearchConfig, RootSearchError, Solution, solve,
                     verify_solution)

EXIT_OK, EXIT_VERIFY, EXIT_INVALID, EXIT_SEARCH, EXIT_DENSITY = 0, 1, 2, 3, 4
THREADS_ENV = "DENSEWALK_THREADS"

SWEEP_COLUMNS = ["dim", "n", "seed", "generator", "status", "root_residual", "max_residual",
                 "delta", "delta_prime", "wall_time"]

log = logging.getLogger("densewalk")


class UsageError(ValueError):
    pass


# -- argument parsing helpers ------------------------------------------------------

def parse_vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UsageError(f"bad vector {text!r}: {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise UsageError(f"vector {text!r} has non-finite entries")
    return v


def parse_region(text: str, dim: int) -> Region:
    """``LO:HI`` for every axis, or ``LO:HI,LO:HI,...`` one per axis."""
    parts = text.split(",")
    if len(parts) == 1:
        parts = parts * dim
    if len(parts) != dim:
        raise UsageError(f"region {text!r} has {len(parts)} intervals for dimension {dim}")
    try:
        bounds = [tuple(float(v) for v in p.split(":")) for p in parts]
        if any(len(b) != 2 for b in bounds):
            raise ValueError("each interval must be LO:HI")
        return Region(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))
    except ValueError as exc:
        raise UsageError(f"bad region {text!r}: {exc}") from exc


def parse_range(text: str) -> list[int]:
    """``A:B`` inclusive or a comma list."""
    try:
        if ":" in text:
            a, b = (int(v) for v in text.split(":"))
            return list(range(a, b + 1))
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad integer range {text!r}") from exc


def positive(kind):
    def check(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return check


def nonnegative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1


def run_record(args: argparse.Namespace) -> dict:
    rec = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": rec, "version": __version__}


def write_json(obj, out):
    text = json.dumps(obj, indent=1)
    if out in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n")


def search_config(args) -> RootSearchConfig:
    return RootSearchConfig(eps_root=args.eps_root, multistart=args.multistart,
                            refine_depth=args.refine_depth, max_evals=args.max_evals,
                            seed=args.seed, density_sigma=args.density_sigma)


# -- instances --------------------------------------------------------------------

def cloud_spec(args) -> CloudSpec:
    chosen = [k for k in ("grid", "jittered", "boundary_biased") if getattr(args, k) is not None]
    if len(chosen) != 1:
        raise UsageError("choose exactly one of --grid, --jittered, --boundary-biased")
    if args.grid is not None:
        return CloudSpec("grid", spacing=args.grid, seed=args.seed)
    if args.jittered is not None:
        return CloudSpec("jittered_grid", spacing=args.jittered, jitter=args.jitter, seed=args.seed)
    return CloudSpec("boundary_biased", seed=args.seed, margin=args.boundary_biased)


def solve_region(n: int, t: np.ndarray) -> Region:
    """Box covering every query ball of an ``n``-step solve towards ``t``."""
    return Region.ball_box(3.0 * n + 1.0 + float(np.abs(t).max()), t.size)


def sweep_instance(dim: int, n: int, seed: int, trial: int, generator: str = "jittered_grid",
                   spacing: float = 0.5, jitter: float = 0.2):
    """Seeded sweep instance: a cloud over the solve region and a target in ``[-n, n]^d``."""
    rng = np.random.default_rng([seed, dim, n, trial])
    t = rng.uniform(-n, n, size=dim)
    cloud_seed = int(rng.integers(2**31))
    spec = CloudSpec(generator, spacing=spacing, jitter=jitter if generator != "grid" else 0.0,
                     seed=cloud_seed)
    return generate(spec, solve_region(n, t)), t, cloud_seed


def load_layers(args, n: int):
    if (args.cloud is None) == (args.layers is None):
        raise UsageError("give exactly one of --cloud or --layers")
    inst: Instance = load_instance(args.cloud or args.layers, dedup=args.dedup)
    if args.cloud is not None:
        if inst.shared is None:
            raise UsageError("--cloud expects a single cloud or a shared-cloud instance")
        if inst.n is not None and inst.n != n:
            raise UsageError(f"instance file is for n = {inst.n}, not {n}")
        return inst.shared, inst.shared.dim
    if inst.shared is not None:
        raise UsageError("--layers expects a {\"layers\": [...]} file")
    if not inst.layers:
        raise UsageError("layer file is empty")
    return inst.layers, inst.layers[0].dim


# -- subcommands --------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = cloud_spec(args)
    if args.region is not None:
        region = parse_region(args.region, args.dim)
    elif args.n is not None:
        t = parse_vector(args.target) if args.target else np.zeros(args.dim)
        if t.size != args.dim:
            raise UsageError("target dimension differs from --dim")
        region = solve_region(args.n, t)
    else:
        raise UsageError("give --region or --n (with optional --target)")
    try:
        cloud = generate(spec, region)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    obj = cloud_to_json(cloud, materialize=args.materialize)
    obj["certificate"] = cloud.certificate.to_json()
    obj["run"] = run_record(args)
    write_json(obj, args.out)
    cert = cloud.certificate
    print(json.dumps({"verdict": cert.verdict, "covering_bound": cert.gap,
                      "margin": 1.0 - cert.gap, "points": len(cloud)}), file=sys.stderr)
    return EXIT_OK


def cmd_solve(args) -> int:
    clouds, dim = load_layers(args, args.n)
    t = parse_vector(args.target) if args.target else np.zeros(dim)
    if t.size != dim:
        raise UsageError(f"target has dimension {t.size}, cloud has {dim}")
    config = search_config(args)
    try:
        sol = solve(clouds, args.n, t, config, force=args.force)
    except RootSearchError as exc:
        log.error("%s (best s = %s)", exc, exc.best_s.tolist())
        write_json({"status": "search_failed", "best_s": exc.best_s.tolist(),
                    "best_residual": exc.best_residual, "evaluations": exc.evaluations,
                    "run": run_record(args)}, args.out)
        return EXIT_SEARCH
    obj = sol.to_json()
    obj["run"] = run_record(args)
    write_json(obj, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        sol = Solution.from_json(json.loads(Path(args.solution).read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read solution {args.solution}: {exc}") from exc
    clouds, dim = load_layers(args, sol.n)
    if dim != sol.dim:
        raise UsageError(f"solution is {sol.dim}-d, cloud is {dim}-d")
    report = verify_solution(sol, clouds)
    out = report.to_json()
    if args.strict_1d:
        strict = check_1d_strict(sol)
        out["checks"]["strict_1d"] = {"ok": strict.passed, "detail": strict.reason}
        out["passed"] = out["passed"] and strict.passed
    out["run"] = run_record(args)
    write_json(out, args.out)
    return EXIT_OK if out["passed"] else EXIT_VERIFY


def sweep_trial(job: tuple) -> dict:
    dim, n, seed, trial, generator, spacing, jitter, config = job
    cloud, t, cloud_seed = sweep_instance(dim, n, seed, trial, generator, spacing, jitter)
    row = {"dim": dim, "n": n, "seed": cloud_seed, "generator": generator}
    start = time.perf_counter()
    try:
        sol = solve(cloud, n, t, config)
        row.update(status="ok", root_residual=sol.root_residual, max_residual=sol.max_residual,
                   delta=sol.delta, delta_prime=sol.delta_prime)
    except RootSearchError as exc:
        row.update(status="search_failed", root_residual=exc.best_residual)
    except (DensityError, ExtractionError) as exc:
        row.update(status=type(exc).__name__)
    row["wall_time"] = time.perf_counter() - start
    return row


def sweep_jobs(dims, ns, trials, seed, generator, spacing, jitter, config):
    return [(d, n, seed, k, generator, spacing, jitter, config)
            for d in dims for n in ns for k in range(trials)]


def run_sweep(jobs, threads: int = 1):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(sweep_trial, jobs, chunksize=4)
    else:
        yield from map(sweep_trial, jobs)


def format_row(row: dict) -> dict:
    return {k: (repr(float(row[k])) if isinstance(row.get(k), float) else row.get(k, ""))
            for k in SWEEP_COLUMNS}


def cmd_sweep(args) -> int:
    dims = parse_range(args.dims)
    ns = parse_range(args.n_range)
    if any(d < 1 for d in dims) or any(n < 1 for n in ns):
        raise UsageError("dimensions and n must be positive")
    if args.generator not in GENERATOR_KINDS:
        raise UsageError(f"unknown generator {args.generator!r}")
    jobs = sweep_jobs(dims, ns, args.trials, args.seed, args.generator, args.spacing,
                      args.jitter, search_config(args))
    if jobs:
        # refuse bad generator parameters before starting workers
        try:
            sweep_instance(dims[0], 1, args.seed, 0, args.generator, args.spacing, args.jitter)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    buf = io.StringIO()
    buf.write("# " + json.dumps(run_record(args), sort_keys=True) + "\n")
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    failed = 0
    for row in run_sweep(jobs, args.threads):
        failed += row["status"] != "ok"
        writer.writerow(format_row(row))
    if args.out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(args.out).write_text(buf.getvalue())
    if failed:
        log.error("%d of %d trials failed", failed, len(jobs))
        return EXIT_SEARCH
    return EXIT_OK


def cmd_lemmatest(args) -> int:
    report = covering_trials(args.trials, args.dim, args.seed)
    out = report.to_json()
    out["tightness_ok"] = abs(report.witness - math.sqrt(2.0)) <= 1e-12
    out["run"] = run_record(args)
    write_json(out, args.out)
    return EXIT_OK if report.passed and out["tightness_ok"] else EXIT_VERIFY


# -- parser -----------------------------------------------------------------------------

def add_search_flags(p):
    defaults = RootSearchConfig()
    p.add_argument("--eps-root", type=positive(float), default=defaults.eps_root)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--multistart", type=positive(int), default=defaults.multistart)
    p.add_argument("--refine-depth", type=positive(int), default=defaults.refine_depth)
    p.add_argument("--max-evals", type=positive(int), default=defaults.max_evals)
    p.add_argument("--density-sigma", type=positive(float), default=defaults.density_sigma)


def add_input_flags(p):
    p.add_argument("--cloud", help="shared cloud (or {\"shared\": ..., \"n\": n}) file")
    p.add_argument("--layers", help="{\"layers\": [...]} file with X_1..X_{n-1}")
    p.add_argument("--dedup", action="store_true", help="drop duplicate points on load")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densewalk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a certified point cloud")
    p.add_argument("--dim", type=positive(int), required=True)
    p.add_argument("--grid", type=positive(float), metavar="SPACING")
    p.add_argument("--jittered", type=positive(float), metavar="SPACING")
    p.add_argument("--jitter", type=float, default=0.2)
    p.add_argument("--boundary-biased", type=float, nargs="?", const=0.02, metavar="MARGIN")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region", help="LO:HI (all axes) or LO:HI,LO:HI,...")
    p.add_argument("--n", type=positive(int), help="size the region for an n-step solve")
    p.add_argument("--target", help="comma-separated target used with --n")
    p.add_argument("--materialize", action="store_true", help="write explicit points")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="compute a witness path")
    add_input_flags(p)
    p.add_argument("--n", type=positive(int), required=True)
    p.add_argument("--target", help="comma-separated coordinates (default: origin)")
    add_search_flags(p)
    p.add_argument("--force", action="store_true", help="warn instead of failing on density")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-check a solution file")
    p.add_argument("--solution", required=True)
    add_input_flags(p)
    p.add_argument("--strict-1d", action="store_true", help="also apply the 1-d bound")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="seeded batch of solves to CSV")
    p.add_argument("--dims", default="1,2,3")
    p.add_argument("--n-range", default="1:10")
    p.add_argument("--trials", type=nonnegative_int, default=5)
    p.add_argument("--generator", default="jittered_grid", choices=GENERATOR_KINDS)
    p.add_argument("--spacing", type=positive(float), default=0.5)
    p.add_argument("--jitter", type=float, default=0.2)
    add_search_flags(p)
    p.add_argument("--threads", type=positive(int), default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lemmatest", help="randomized covering-lemma trials")
    p.add_argument("--trials", type=nonnegative_int, default=10_000)
    p.add_argument("--dim", type=positive(int), default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_lemmatest)
    return parser


def glue_negative_values(argv: list[str]) -> list[str]:
    """Let ``--region -45:45`` and ``--target -1,2`` through argparse."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in ("--region", "--target"):
            nxt = next(it, None)
            if nxt is not None and nxt.startswith("-") and len(nxt) > 1 and (nxt[1].isdigit() or nxt[1] == "."):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(glue_negative_values(argv))
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 0) is None:
        args.threads = default_threads()
    try:
        return args.func(args)
    except (UsageError, CloudFormatError, GeometryError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except DensityError as exc:
        log.error("%s", exc)
        return EXIT_DENSITY


if __name__ == "__main__":
    sys.exit(main())
