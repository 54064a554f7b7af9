"""Command-line interface: ``hogl {fit,tune,simulate,prox-check}``.

Input matrices are comma-separated with one header row and no index column:
``Y`` and ``A`` have one row per individual, a custom ``X`` one row per time
point. Options may also come from a JSON file given with ``--config``; keys
are the long option names with underscores, and explicit flags win.

Exit codes: 0 success, 1 property violation (prox-check), 2 input error,
3 solver failure.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .basis import uniform_time_points
from .estimator import BASES, WEIGHTINGS, base_weights, make_basis
from .exceptions import (
    ConvergenceWarning,
    DimensionMismatchError,
    HOGLError,
    InvalidDimensionError,
    ZeroColumnError,
)
from .prox import (
    ProxProblem,
    exhaustive_alpha_star,
    monotonicity_violations,
    prox_solve,
    search_alpha_star,
    verify_kkt,
)
from .solver import PenaltySpec, build_problem, fit, lambda_max, resolve_route
from .tuning import (
    LAMBDA_MIN_RATIO,
    N_DELTAS,
    N_LAMBDAS,
    TuningGrid,
    grid_search,
    make_grid,
    make_result,
)

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3

logger = logging.getLogger("hogl")

PRESETS = {
    "baseline": {"n": 100, "p": 10, "k": 10, "q": 6, "snr": 1.0},
    "high-degree": {"n": 100, "p": 10, "k": 10, "q": 10, "snr": 1.0},
    "snr3": {"n": 300, "p": 10, "k": 10, "q": 6, "snr": 3.0},
}

# Fallbacks applied after explicit flags and the config file.
DEFAULTS = {
    "common": {"seed": 0, "verbose": False},
    "model": {
        "basis": "polynomial", "q": 4, "route": "hogl2", "weighting": "adaptive",
        "tol": 1e-6, "max_iter": 10000, "egcv_exponent": "log-np",
    },
    "fit": {"delta": 1.0, "output": "fit.json"},
    "tune": {
        "n_deltas": N_DELTAS, "n_lambdas": N_LAMBDAS,
        "lambda_min_ratio": LAMBDA_MIN_RATIO, "output": "tune.json",
    },
    "simulate": {
        "n": 100, "p": 10, "k": 10, "q": 6, "snr": 1.0, "reps": 200,
        "methods": "hogl1,hogl2", "rho": 0.5, "n_deltas": N_DELTAS,
        "n_lambdas": N_LAMBDAS, "lambda_min_ratio": LAMBDA_MIN_RATIO,
        "egcv_exponent": "log-np", "tol": 1e-6, "max_iter": 10000,
        "metrics_csv": "metrics.csv", "replications_json": "replications.json",
        "timings": False,
    },
    "prox-check": {"n_problems": 1000, "q_max": 8, "perturbations": 200,
                   "corrupt": False},
}


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


# ---------------------------------------------------------------- file I/O

def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_matrix(path, what):
    """Numeric CSV with a header row; returns a 2-d float array."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{what}: cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InputError(f"{what}: {path} needs a header row and at least one data row")
    width = len(rows[0])
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise InputError(f"{what}: {path} line {lineno} has {len(row)} fields, "
                             f"header has {width}")
        try:
            data.append([float(c) for c in row])
        except ValueError as exc:
            raise InputError(f"{what}: {path} line {lineno}: {exc}") from exc
    M = np.array(data, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InputError(f"{what}: {path} contains non-finite values")
    return M


def format_matrix(M, prefix):
    """CSV text with 17 significant digits so values re-parse exactly."""
    M = np.atleast_2d(M)
    lines = [",".join(f"{prefix}{j + 1}" for j in range(M.shape[1]))]
    lines += [",".join(f"{v:.17g}" for v in row) for row in M]
    return "\n".join(lines) + "\n"


def format_records(rows, fields):
    lines = [",".join(fields)]
    for r in rows:
        cells = []
        for f in fields:
            v = r.get(f)
            if v is None:
                cells.append("")
            elif isinstance(v, bool):
                cells.append(str(v).lower())
            elif isinstance(v, float):
                cells.append(f"{v:.17g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dump_json(path, obj):
    atomic_write(path, json.dumps(_json_safe(obj), indent=2) + "\n")


# ---------------------------------------------------------------- parsing

def _model_options(sub):
    sub.add_argument("--Y", dest="Y", help="response CSV (n rows, p columns)")
    sub.add_argument("--A", dest="A", help="explanatory-variable CSV (n rows, k columns)")
    sub.add_argument("--X", dest="X", help="custom basis CSV (p rows); overrides --basis")
    sub.add_argument("--block-sizes", help="comma-separated level sizes for a custom X")
    sub.add_argument("--time-points", help="CSV with one column of p observation times")
    sub.add_argument("--basis", choices=BASES)
    sub.add_argument("--q", type=int, help="number of basis levels")
    sub.add_argument("--route", choices=("hogl1", "hogl2", "mm", "bcd"))
    sub.add_argument("--weighting", choices=WEIGHTINGS)
    sub.add_argument("--egcv-exponent", help="log-np, sqrt-np or a number")
    sub.add_argument("--tol", type=float)
    sub.add_argument("--max-iter", type=int)
    sub.add_argument("--output", help="JSON result path")
    sub.add_argument("--theta-csv", help="coefficient CSV path (default: next to --output)")


def _common_options(sub):
    sub.add_argument("--config", help="JSON file with option values")
    sub.add_argument("--seed", type=int, help="random seed (default 0)")
    sub.add_argument("--threads", type=int,
                     help="worker count (default: $HOGL_THREADS or all cores)")
    sub.add_argument("-v", "--verbose", action="store_true", default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hogl",
        description="Hierarchical overlapping group lasso for GMANOVA models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="command", required=True)

    p_fit = subs.add_parser("fit", help="fit at a fixed (delta, lambda)")
    _model_options(p_fit)
    p_fit.add_argument("--delta", type=float)
    p_fit.add_argument("--lambda", dest="lam", type=float, metavar="LAMBDA")
    _common_options(p_fit)

    p_tune = subs.add_parser("tune", help="choose (delta, lambda) by EGCV over a grid")
    _model_options(p_tune)
    p_tune.add_argument("--n-deltas", type=int)
    p_tune.add_argument("--n-lambdas", type=int)
    p_tune.add_argument("--lambda-min-ratio", type=float)
    p_tune.add_argument("--delta", type=float, help="evaluate only this delta")
    p_tune.add_argument("--lambda", dest="lam", type=float, metavar="LAMBDA",
                        help="with --delta, evaluate only this single cell")
    p_tune.add_argument("--grid-csv", help="per-cell results CSV path")
    _common_options(p_tune)

    p_sim = subs.add_parser("simulate", help="Monte Carlo selection study")
    p_sim.add_argument("--preset", choices=sorted(PRESETS))
    for name in ("n", "p", "k", "q", "reps", "n_deltas", "n_lambdas", "max_iter"):
        p_sim.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    for name in ("snr", "rho", "lambda_min_ratio", "tol"):
        p_sim.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p_sim.add_argument("--methods", help="comma-separated subset of hogl1,hogl2")
    p_sim.add_argument("--egcv-exponent")
    p_sim.add_argument("--metrics-csv")
    p_sim.add_argument("--replications-json")
    p_sim.add_argument("--timings", action="store_true", default=None,
                       help="store wall-clock seconds in the output files")
    _common_options(p_sim)

    p_prox = subs.add_parser("prox-check", help="self-test of the closed-form prox")
    p_prox.add_argument("--n-problems", type=int)
    p_prox.add_argument("--q", type=int, help="fix the number of levels")
    p_prox.add_argument("--q-max", type=int)
    p_prox.add_argument("--perturbations", type=int)
    p_prox.add_argument("--corrupt", action="store_true", default=None,
                        help="debug: perturb each minimizer (checks must then fail)")
    _common_options(p_prox)
    return parser


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"config: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config: {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"config: {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def resolve_options(args):
    """Merge explicit flags over the config file over built-in defaults."""
    opts = vars(args).copy()
    cfg = _load_config(args.config) if args.config else {}
    unknown = set(cfg) - set(opts) - {"lambda"}
    if unknown:
        raise InputError(f"config: unknown keys {sorted(unknown)}")
    if "lambda" in cfg:
        cfg.setdefault("lam", cfg.pop("lambda"))
    cmd = args.command
    preset = opts.get("preset") or cfg.get("preset")
    layers = [DEFAULTS["common"]]
    if cmd in ("fit", "tune"):
        layers.append(DEFAULTS["model"])
    layers.append(DEFAULTS[cmd])
    if preset:
        layers.append(PRESETS[preset])
    merged = {}
    for layer in layers:
        merged.update(layer)
    merged.update({k: v for k, v in cfg.items() if v is not None})
    merged.update({k: v for k, v in opts.items() if v is not None})
    merged["command"] = cmd
    if merged.get("threads") is None:
        env = os.environ.get("HOGL_THREADS")
        try:
            merged["threads"] = int(env) if env else (os.cpu_count() or 1)
        except ValueError:
            raise InputError(f"HOGL_THREADS must be an integer, got {env!r}")
    if merged["threads"] < 1:
        raise InputError("--threads must be at least 1")
    return merged


# ---------------------------------------------------------------- commands

def _require(opts, *names):
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        flags = ", ".join("--" + ("lambda" if n == "lam" else n.replace("_", "-"))
                          for n in missing)
        raise InputError(f"missing required option(s): {flags}")


def _load_problem(opts):
    _require(opts, "Y", "A")
    Y = read_matrix(opts["Y"], "--Y")
    A = read_matrix(opts["A"], "--A")
    if Y.shape[0] != A.shape[0]:
        raise InputError(f"--Y has {Y.shape[0]} rows but --A has {A.shape[0]}")
    p = Y.shape[1]
    if opts.get("X"):
        X = read_matrix(opts["X"], "--X")
        if X.shape[0] != p:
            raise InputError(f"--X has {X.shape[0]} rows but --Y has {p} columns")
        sizes = opts.get("block_sizes")
        if sizes is None:
            sizes = (1,) * X.shape[1]
        elif isinstance(sizes, str):
            try:
                sizes = tuple(int(s) for s in sizes.split(","))
            except ValueError:
                raise InputError(f"--block-sizes: not a list of integers: {sizes!r}")
        block_sizes = tuple(int(s) for s in sizes)
    else:
        if opts.get("time_points"):
            t = read_matrix(opts["time_points"], "--time-points").ravel()
            if t.size != p:
                raise InputError(f"--time-points has {t.size} values for {p} columns of Y")
        else:
            t = uniform_time_points(p)
        X, spec = make_basis(opts["basis"], t, int(opts["q"]))
        block_sizes = spec.block_sizes
    return build_problem(Y, A, X, block_sizes)


def _check_ranges(opts):
    if opts.get("delta") is not None and not 0.0 <= opts["delta"] <= 1.0:
        raise InputError(f"--delta must lie in [0, 1], got {opts['delta']}")
    if opts.get("lam") is not None and not opts["lam"] >= 0.0:
        raise InputError(f"--lambda must be non-negative, got {opts['lam']}")
    if opts["tol"] <= 0 or opts["max_iter"] < 1:
        raise InputError("--tol must be positive and --max-iter at least 1")
    exp = opts["egcv_exponent"]
    if isinstance(exp, str) and exp not in ("log-np", "sqrt-np"):
        try:
            float(exp)
        except ValueError:
            raise InputError(f"--egcv-exponent: expected log-np, sqrt-np or a number, got {exp!r}")


def _theta_path(opts):
    if opts.get("theta_csv"):
        return opts["theta_csv"]
    out = Path(opts["output"])
    return str(out.with_name(out.stem + "_theta.csv"))


def _write_result(opts, prob, result, route, w0):
    lam_top = lambda_max(prob, result.delta, w0, route)
    payload = result.to_dict()
    payload.update({
        "method": "hogl1" if route == "mm" else "hogl2",
        "lambda_max": lam_top,
        "theta_raw": (result.coefs.theta / prob.A_scales[:, None]).tolist(),
        "a_means": prob.A_means.tolist(),
        "a_scales": prob.A_scales.tolist(),
        "block_sizes": list(prob.block_sizes),
    })
    dump_json(opts["output"], payload)
    atomic_write(_theta_path(opts), format_matrix(result.coefs.theta, "b"))
    print(f"delta={result.delta:.6g} lambda={result.lam:.6g} lambda_max={lam_top:.17g} "
          f"df={result.df} egcv={result.egcv:.6g} converged={str(result.converged).lower()}")
    print("selected variables (1-based): "
          + (" ".join(str(i + 1) for i in result.selected_variables) or "none"))


def cmd_fit(opts):
    _require(opts, "Y", "A", "lam")
    _check_ranges(opts)
    prob = _load_problem(opts)
    route = resolve_route(opts["route"])
    w0 = base_weights(prob, route, opts["weighting"])
    spec = PenaltySpec(float(opts["delta"]), float(opts["lam"]), w0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        coefs = fit(prob, spec, route, tol=opts["tol"], max_iter=opts["max_iter"])
    result = make_result(prob, coefs, spec.delta, spec.lam, opts["egcv_exponent"])
    _write_result(opts, prob, result, route, w0)
    return EXIT_OK


PATH_FIELDS = ("delta", "lambda", "egcv", "df", "converged", "n_iter")


def cmd_tune(opts):
    _check_ranges(opts)
    if opts.get("lam") is not None and opts.get("delta") is None:
        raise InputError("--lambda on tune needs --delta as well")
    prob = _load_problem(opts)
    route = resolve_route(opts["route"])
    w0 = base_weights(prob, route, opts["weighting"])
    if opts.get("delta") is not None and opts.get("lam") is not None:
        grid = TuningGrid.single(opts["delta"], opts["lam"])
    else:
        if opts["n_deltas"] < 1 or opts["n_lambdas"] < 1:
            raise InputError("--n-deltas and --n-lambdas must be positive")
        if not 0.0 < opts["lambda_min_ratio"] < 1.0:
            raise InputError("--lambda-min-ratio must lie in (0, 1)")
        grid = make_grid(prob, w0, route, opts["n_deltas"], opts["n_lambdas"],
                         opts["lambda_min_ratio"])
        if opts.get("delta") is not None:
            keep = np.isclose(grid.deltas, opts["delta"])
            if not keep.any():
                top = lambda_max(prob, opts["delta"], w0, route)
                lams = top * np.logspace(0.0, np.log10(opts["lambda_min_ratio"]),
                                         opts["n_lambdas"])
                grid = TuningGrid(np.array([opts["delta"]]), lams[None, :])
            else:
                grid = TuningGrid(grid.deltas[keep], grid.lambdas[keep])
    result = grid_search(prob, route, grid, w0, opts["egcv_exponent"], opts["tol"],
                         opts["max_iter"], keep_path=True)
    grid_csv = opts.get("grid_csv") or str(
        Path(opts["output"]).with_name(Path(opts["output"]).stem + "_grid.csv"))
    atomic_write(grid_csv, format_records(result.path, PATH_FIELDS))
    result.path = None
    _write_result(opts, prob, result, route, w0)
    return EXIT_OK


SIM_FIELDS = ("n", "p", "k", "q", "snr", "reps", "seed", "rho", "n_deltas",
              "n_lambdas", "lambda_min_ratio", "egcv_exponent", "tol", "max_iter")


def cmd_simulate(opts):
    from .simulation import SimConfig, run_monte_carlo

    methods = opts["methods"]
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    exp = opts["egcv_exponent"]
    if isinstance(exp, str) and exp not in ("log-np", "sqrt-np"):
        try:
            exp = float(exp)
        except ValueError:
            raise InputError(f"--egcv-exponent: expected log-np, sqrt-np or a number, got {exp!r}")
    kwargs = {f: opts[f] for f in SIM_FIELDS}
    kwargs["egcv_exponent"] = exp
    try:
        config = SimConfig(methods=tuple(methods), threads=opts["threads"], **kwargs)
    except (HOGLError, ValueError, TypeError) as exc:
        raise InputError(str(exc)) from exc

    def progress(done, total):
        if opts["verbose"]:
            print(f"replication {done}/{total}", file=sys.stderr)

    table = run_monte_carlo(config, progress=progress)
    print(table.format())
    if not opts["timings"]:
        for row in table.summary:
            row.pop("runtime", None)
        for rec in table.replications:
            rec.pop("runtime", None)
    fields = [f for f in table.SUMMARY_FIELDS if opts["timings"] or f != "runtime"]
    atomic_write(opts["metrics_csv"], format_records(table.summary, fields))
    payload = table.to_dict()
    payload["config"].pop("threads", None)
    dump_json(opts["replications_json"], payload)
    return EXIT_OK


def _random_prox_problem(rng, q_fixed, q_max):
    q = q_fixed if q_fixed is not None else int(rng.integers(1, q_max + 1))
    sizes = tuple(int(m) for m in rng.integers(1, 4, size=q))
    b = rng.standard_normal(sum(sizes))
    lam = rng.uniform(0.0, 2.0, size=q)
    return ProxProblem(b, lam, sizes)


def _batch_objective(G, prob):
    sq = np.cumsum(G * G, axis=1)[:, prob.offsets[1:] - 1]
    return 0.5 * np.sum(G * G, axis=1) - G @ prob.b + np.sqrt(sq) @ prob.lam


def prox_check(n_problems=1000, q=None, q_max=8, perturbations=200, corrupt=False,
               seed=0, kkt_tol=1e-8):
    """Random-instance audit of the prox; returns a dict of counts."""
    rng = np.random.default_rng(seed)
    report = {"problems": n_problems, "max_kkt_residual": 0.0, "kkt_failures": 0,
              "perturbation_failures": 0, "monotonicity_violations": 0,
              "alpha_mismatches": 0, "soft_threshold_failures": 0}
    for _ in range(n_problems):
        prob = _random_prox_problem(rng, q, q_max)
        gamma = prox_solve(prob)
        if corrupt:
            gamma = gamma + 1e-3 * rng.standard_normal(gamma.size)
        ok, res = verify_kkt(gamma, prob)
        report["max_kkt_residual"] = max(report["max_kkt_residual"], res)
        report["kkt_failures"] += not ok
        if perturbations:
            eps = 10.0 ** rng.uniform(-6, -1, size=(perturbations, 1))
            U = rng.standard_normal((perturbations, gamma.size))
            f0 = _batch_objective(gamma[None, :], prob)[0]
            f1 = _batch_objective(gamma[None, :] + eps * U, prob)
            report["perturbation_failures"] += int(np.any(f1 < f0 - 1e-12 * (1 + abs(f0))))
        report["monotonicity_violations"] += int(monotonicity_violations(prob) > 0)
        report["alpha_mismatches"] += int(
            search_alpha_star(prob).alpha_star != exhaustive_alpha_star(prob))
        if prob.q == 1:
            nb = np.linalg.norm(prob.b)
            ref = prob.b * max(0.0, 1.0 - prob.lam[0] / nb) if nb > 0 else 0 * prob.b
            report["soft_threshold_failures"] += int(not np.allclose(gamma, ref, atol=1e-12))
    return report


def cmd_prox_check(opts):
    if opts["n_problems"] < 1 or opts["q_max"] < 1 or opts["perturbations"] < 0:
        raise InputError("--n-problems and --q-max must be positive")
    if opts.get("q") is not None and opts["q"] < 1:
        raise InputError("--q must be positive")
    report = prox_check(opts["n_problems"], opts.get("q"), opts["q_max"],
                        opts["perturbations"], bool(opts["corrupt"]), opts["seed"])
    for key, value in report.items():
        print(f"{key}: {value}")
    bad = sum(v for k, v in report.items()
              if k not in ("problems", "max_kkt_residual"))
    print("prox-check: " + ("FAIL" if bad else "OK"))
    return EXIT_VIOLATION if bad else EXIT_OK


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "simulate": cmd_simulate,
            "prox-check": cmd_prox_check}

INPUT_ERRORS = (DimensionMismatchError, InvalidDimensionError, ZeroColumnError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        opts = resolve_options(args)
        logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](opts)
    except InputError as exc:
        sub.print_usage(sys.stderr)
        print(f"hogl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"hogl {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (HOGLError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"hogl {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
