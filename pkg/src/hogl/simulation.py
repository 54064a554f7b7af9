"""Monte Carlo harness for variable and degree selection in the GMANOVA model.

Data follow ``Y ~ N(A Theta X', Sigma kron I_n)`` with ``A = A0 Psi^{1/2}``,
``A0`` uniform on (-1, 1), and autocorrelated ``Psi``/``Sigma`` scaled by
``diag(1..k)`` and ``diag(1..p)``. Five explanatory variables are active and
the ``l``-th one has a degree-``l`` varying coefficient.
"""

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import polynomial_basis, uniform_time_points
from .exceptions import HOGLError, InvalidDimensionError, ZeroSignalError
from .kernels import sym_sqrt
from .solver import adaptive_weights, build_problem, fitted_values, resolve_route
from .tuning import grid_search, make_grid, render_degrees

logger = logging.getLogger(__name__)

K_TRUE = 5
THETA_STAR = np.array([
    [0.0, 0.0, 0.0, 0.0, -3.0, 0.5],
    [0.0, 0.0, 0.0, 4.0, 1.0, -2.0],
    [0.0, 0.0, 6.0, -2.0, -4.0, 2.0],
    [0.0, 12.0, 3.0, -12.0, -3.0, 1.5],
    [-12.0, -1.0, 15.0, 1.0, -1.0, -0.5],
])

METHODS = ("hogl1", "hogl2")


@dataclass(frozen=True)
class SimConfig:
    n: int
    p: int
    k: int
    q: int
    snr: float = 1.0
    reps: int = 200
    seed: int = 0
    methods: tuple = METHODS
    rho: float = 0.5
    n_deltas: int = 10
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-4
    egcv_exponent: object = "log-np"
    tol: float = 1e-6
    max_iter: int = 10000
    threads: int = 1

    def __post_init__(self):
        if self.n <= self.k + 1:
            raise InvalidDimensionError(f"need n > k + 1, got n={self.n}, k={self.k}")
        if self.q < THETA_STAR.shape[1] or self.p < self.q:
            raise InvalidDimensionError(f"need p >= q >= 6, got p={self.p}, q={self.q}")
        if self.k < K_TRUE:
            raise InvalidDimensionError(f"need k >= {K_TRUE}, got k={self.k}")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        methods = tuple(str(m).lower() for m in self.methods)
        for m in methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        object.__setattr__(self, "methods", methods)
        # keep the dataclass repr stable for cache keys (1 vs 1.0)
        for name in ("snr", "rho", "lambda_min_ratio", "tol"):
            object.__setattr__(self, name, float(getattr(self, name)))


@dataclass(frozen=True, eq=False)
class SimTruth:
    Theta: np.ndarray
    Psi: np.ndarray
    Sigma: np.ndarray
    nu: float
    X: np.ndarray
    t: np.ndarray
    Psi_half: np.ndarray = field(repr=False)
    Sigma_half: np.ndarray = field(repr=False)

    @property
    def true_degrees(self):
        k = self.Theta.shape[0]
        return [d + 1 for d in range(K_TRUE)] + [0] * (k - K_TRUE)


def autocorrelation(dim, rho):
    idx = np.arange(dim)
    return float(rho) ** np.abs(idx[:, None] - idx[None, :])


def scaled_autocorrelation(dim, rho):
    """``R^{1/2} Omega(rho) R^{1/2}`` with ``R = diag(1, ..., dim)``."""
    r = np.sqrt(np.arange(1, dim + 1, dtype=float))
    return r[:, None] * autocorrelation(dim, rho) * r[None, :]


def snr_value(Theta, Psi, Sigma, X):
    """Average over time points of signal variance over noise variance.

    The factor 1/3 is the variance of a U(-1, 1) entry of ``A0``.
    """
    M = X @ Theta.T
    signal = np.einsum("ji,il,jl->j", M, Psi, M)
    return float(np.mean(signal / np.diag(Sigma)) / 3.0)


def calibrate_nu(config, truth_unscaled):
    """Scale ``nu`` so that ``nu * Theta`` reaches the target SNR exactly."""
    base = snr_value(truth_unscaled.Theta, truth_unscaled.Psi, truth_unscaled.Sigma,
                     truth_unscaled.X)
    if base <= 0:
        raise ZeroSignalError("the unscaled coefficients carry no signal")
    return float(np.sqrt(config.snr / base))


def build_truth(config, nu=None):
    """True coefficients, covariances and basis for a configuration.

    ``nu=None`` calibrates the signal scale to ``config.snr``.
    """
    k, q, p = config.k, config.q, config.p
    if k < K_TRUE or q < THETA_STAR.shape[1] or p < q:
        raise InvalidDimensionError("need k >= 5 and p >= q >= 6")
    base = np.zeros((k, q))
    base[:K_TRUE, q - THETA_STAR.shape[1]:] = THETA_STAR
    Psi = scaled_autocorrelation(k, config.rho)
    Sigma = scaled_autocorrelation(p, config.rho)
    t = uniform_time_points(p)
    X = polynomial_basis(t, q)
    truth = SimTruth(
        Theta=base, Psi=Psi, Sigma=Sigma, nu=1.0, X=X, t=t,
        Psi_half=sym_sqrt(Psi), Sigma_half=sym_sqrt(Sigma),
    )
    if nu is None:
        nu = calibrate_nu(config, truth)
    return SimTruth(
        Theta=nu * base, Psi=Psi, Sigma=Sigma, nu=float(nu), X=X, t=t,
        Psi_half=truth.Psi_half, Sigma_half=truth.Sigma_half,
    )


def replication_rng(seed, rep):
    """Independent counter-based stream for replication ``rep``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep),))
    return np.random.Generator(np.random.Philox(ss))


def generate_dataset(truth, config, rng):
    """Draw ``(Y, A_raw)``; the noise is ``E Sigma^{1/2}`` with standard normal ``E``."""
    n = config.n
    k, p = truth.Theta.shape[0], truth.X.shape[0]
    A0 = rng.uniform(-1.0, 1.0, size=(n, k))
    A_raw = A0 @ truth.Psi_half
    E = rng.standard_normal((n, p))
    Y = A_raw @ truth.Theta @ truth.X.T + E @ truth.Sigma_half
    return Y, A_raw


def mse_metrics(theta_hat, Y_hat, truth, A_raw):
    """Covariance-weighted fitted-value error and coefficient error.

    ``theta_hat`` must be in raw-``A`` units (see :func:`to_raw_scale`).
    """
    n, p = Y_hat.shape
    k, q = truth.Theta.shape
    R = Y_hat - A_raw @ truth.Theta @ truth.X.T
    mse_f = float(np.sum(R * np.linalg.solve(truth.Sigma, R.T).T)) / (n * p)
    D = theta_hat - truth.Theta
    mse_c = float(np.sum(D * D)) / (k * q)
    return mse_f, mse_c


def to_raw_scale(theta, prob):
    """Coefficients for the unstandardized design (divide rows by column scales)."""
    return theta / prob.A_scales[:, None]


def _fit_one(config, truth, Y, A_raw, method):
    route = resolve_route(method)
    start = time.perf_counter()
    prob = build_problem(Y, A_raw, truth.X)
    weights = adaptive_weights(prob, route)
    grid = make_grid(prob, weights, route, config.n_deltas, config.n_lambdas,
                     config.lambda_min_ratio)
    res = grid_search(prob, route, grid, weights, config.egcv_exponent,
                      config.tol, config.max_iter)
    elapsed = time.perf_counter() - start
    theta_raw = to_raw_scale(res.coefs.theta, prob)
    Y_hat = fitted_values(prob, res.coefs.theta)
    mse_f, mse_c = mse_metrics(theta_raw, Y_hat, truth, A_raw)
    degrees = render_degrees(res.degrees)
    true_deg = truth.true_degrees
    variables = set(int(i) for i in res.selected_variables)
    return {
        "method": method,
        "variable_hit": variables == set(range(K_TRUE)),
        # degrees of the true variables only; false positives do not count
        "degree_hit": degrees[:K_TRUE] == true_deg[:K_TRUE],
        "degree_vector_hit": degrees == true_deg,
        "mse_f": mse_f,
        "mse_c": mse_c,
        "runtime": elapsed,
        "delta": res.delta,
        "lambda": res.lam,
        "df": res.df,
        "egcv": res.egcv,
        "degrees": degrees,
        "converged": res.converged,
    }


def run_replication(config, truth, rep):
    """Fit every configured method on replication ``rep``'s data."""
    Y, A_raw = generate_dataset(truth, config, replication_rng(config.seed, rep))
    out = []
    for method in config.methods:
        try:
            rec = _fit_one(config, truth, Y, A_raw, method)
        except HOGLError as exc:
            logger.warning("replication %d, %s failed: %s", rep, method, exc)
            rec = {"method": method, "failed": True, "error": str(exc)}
        rec["rep"] = rep
        out.append(rec)
    return out


def _run_chunk(args):
    config, truth, reps = args
    return [rec for rep in reps for rec in run_replication(config, truth, rep)]


@dataclass
class MetricsTable:
    config: SimConfig
    nu: float
    summary: list
    replications: list

    SUMMARY_FIELDS = (
        "method", "n", "p", "k", "q", "snr", "reps", "failures",
        "variable_sp", "degree_sp", "degree_vector_sp", "mse_f", "mse_c", "runtime",
    )

    def row(self, method):
        for r in self.summary:
            if r["method"] == method:
                return r
        raise KeyError(method)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.SUMMARY_FIELDS)
            writer.writeheader()
            for r in self.summary:
                writer.writerow({k: r[k] for k in self.SUMMARY_FIELDS})

    def to_dict(self):
        cfg = asdict(self.config)
        cfg["methods"] = list(cfg["methods"])
        return {"config": cfg, "nu": self.nu, "summary": self.summary,
                "replications": self.replications}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def format(self):
        head = (f"{'method':>7} {'n':>5} {'p':>4} {'k':>4} {'q':>3} "
                f"{'var SP':>7} {'deg SP':>7} {'MSE_f':>8} {'MSE_c':>9} {'sec':>7}")
        lines = [head]
        for r in self.summary:
            lines.append(
                f"{r['method']:>7} {r['n']:>5} {r['p']:>4} {r['k']:>4} {r['q']:>3} "
                f"{r['variable_sp']:7.1f} {r['degree_sp']:7.1f} {r['mse_f']:8.3f} "
                f"{r['mse_c']:9.3f} {r['runtime']:7.2f}"
            )
        return "\n".join(lines)


def summarize(config, records):
    summary = []
    for method in config.methods:
        recs = [r for r in records if r["method"] == method]
        ok = [r for r in recs if not r.get("failed")]
        cnt = max(len(ok), 1)
        summary.append({
            "method": method, "n": config.n, "p": config.p, "k": config.k,
            "q": config.q, "snr": config.snr, "reps": len(recs),
            "failures": len(recs) - len(ok),
            "variable_sp": 100.0 * sum(r["variable_hit"] for r in ok) / cnt,
            "degree_sp": 100.0 * sum(r["degree_hit"] for r in ok) / cnt,
            "degree_vector_sp": 100.0 * sum(r["degree_vector_hit"] for r in ok) / cnt,
            "mse_f": float(np.mean([r["mse_f"] for r in ok])) if ok else float("nan"),
            "mse_c": float(np.mean([r["mse_c"] for r in ok])) if ok else float("nan"),
            "runtime": float(np.mean([r["runtime"] for r in ok])) if ok else float("nan"),
        })
    return summary


def run_monte_carlo(config, progress=None):
    """Run ``config.reps`` replications and aggregate per-method metrics.

    Replications draw from independent streams keyed by ``(seed, rep)``, so
    results do not depend on ``threads`` or execution order.
    """
    truth = build_truth(config)
    reps = list(range(config.reps))
    workers = max(1, min(int(config.threads), len(reps)))
    if workers == 1:
        records = []
        for rep in reps:
            records.extend(run_replication(config, truth, rep))
            if progress is not None:
                progress(rep + 1, len(reps))
    else:
        chunks = [(config, truth, reps[i::workers]) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [rec for part in pool.map(_run_chunk, chunks) for rec in part]
        records.sort(key=lambda r: (r["rep"], config.methods.index(r["method"])))
    return MetricsTable(config=config, nu=truth.nu,
                        summary=summarize(config, records), replications=records)
