"""Extreme singular values of A = H^T and the asymptotic experiments built on them."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import sketch as sk
from . import tw
from .randgen import DomainError, SeedSpec, map_trials

# dense symmetric eigensolver up to this n, Lanczos above
DENSE_EIG_MAX = 2000
SVD_CHECK_MAX = 64
SVD_CHECK_RTOL = 1e-10


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class SingularPair:
    s1: float
    sn: float
    N: int
    n: int
    params: sk.EnsembleParams | None = None
    seed: SeedSpec | None = None

    def __post_init__(self):
        if not self.s1 >= self.sn >= 0.0:
            raise NumericalError(f"singular values out of order: s1={self.s1}, sn={self.sn}")


def _extreme_eigs(g: np.ndarray) -> tuple[float, float]:
    n = g.shape[0]
    if n <= DENSE_EIG_MAX:
        try:
            w = scipy.linalg.eigvalsh(g, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigvalsh failed on {n}x{n} Gram matrix: {exc}") from exc
        return float(w[-1]), float(w[0])
    try:
        hi = scipy.sparse.linalg.eigsh(g, k=1, which="LA", return_eigenvectors=False, tol=1e-12)[0]
        lo = scipy.sparse.linalg.eigsh(g, k=1, which="SA", return_eigenvectors=False, tol=1e-12)[0]
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise NumericalError(f"Lanczos did not converge on {n}x{n} Gram matrix: {exc}") from exc
    return float(hi), float(lo)


def extreme_singular_values(sketch: sk.SparseSketch, svd_check: bool = True) -> SingularPair:
    """Largest and smallest singular value of A = H^T from the Gram matrix H H^T.

    For n <= 64 the result is also compared with a dense SVD of A.
    """
    n, N = sketch.shape
    lmax, lmin = _extreme_eigs(sk.gram(sketch))
    s1 = math.sqrt(max(lmax, 0.0))
    sn = math.sqrt(max(lmin, 0.0))
    if svd_check and n <= SVD_CHECK_MAX:
        d = scipy.linalg.svdvals(sketch.to_dense())
        # compare squares for sn: its absolute error scales like eps * s1^2 / sn
        if abs(s1 - d[0]) > SVD_CHECK_RTOL * d[0] or abs(sn**2 - d[-1] ** 2) > SVD_CHECK_RTOL * d[0] ** 2:
            raise NumericalError(
                f"Gram eigenvalues disagree with dense SVD: s1 {s1!r} vs {d[0]!r}, sn {sn!r} vs {d[-1]!r}"
            )
    return SingularPair(s1, min(sn, s1), N, n, sketch.params, sketch.seed)


def matlab_round(x):
    """Round half away from zero, as MATLAB's round does for positive input."""
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def log_schedule(points: int = 100, lo: float = 500.0, hi: float = 1e5, aspect: float = 0.01,
                      s_ratio: float = 0.2) -> list[tuple[int, int, int]]:
    """(N, n, s) with N log-spaced on [lo, hi], n = round(aspect N), s = round(s_ratio n)."""
    Ns = matlab_round(np.logspace(np.log10(lo), np.log10(hi), points))
    ns = matlab_round(Ns * aspect)
    ss = np.maximum(matlab_round(ns * s_ratio), 1)
    return [(int(a), int(b), int(c)) for a, b, c in zip(Ns, ns, ss)]


def subsample(schedule: Sequence, count: int) -> list:
    idx = np.unique(matlab_round(np.linspace(0, len(schedule) - 1, count)))
    return [schedule[i] for i in idx]


def _point_stream(point: int, trial: int) -> int:
    return (point << 32) | trial


@dataclass
class PointSummary:
    N: int
    n: int
    s: float
    trials: int
    s1_min: float
    s1_max: float
    s1_mean: float
    sn_min: float
    sn_max: float
    sn_mean: float
    flags: list[str] = field(default_factory=list)


@dataclass
class ExperimentReport:
    """Per-trial singular values plus per-point summaries."""

    name: str
    rows: list[tuple[int, int, float, int, float, float]]
    points: list[PointSummary]
    references: dict
    meta: dict = field(default_factory=dict)

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "n", "s", "trial", "s1", "sn"])
        for N, n, s, t, s1, sn in self.rows:
            w.writerow([N, n, repr(float(s)), t, repr(s1), repr(sn)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "name": self.name,
            "references": self.references,
            "points": [vars(p) for p in self.points],
            "meta": self.meta,
        }


def _params_for(N: int, n: int, s: float | None, q: float | None) -> sk.EnsembleParams:
    if q is not None:
        return sk.EnsembleParams(sk.Ensemble.GENERAL_Q, n, N, q=q)
    return sk.EnsembleParams(sk.Ensemble.HASHING_LIKE, n, N, s=s)


def _run_points(name, specs, trials, master_seed, threads, references, flagger=None):
    jobs = [(i, t) for i in range(len(specs)) for t in range(trials)]

    def one(job):
        i, t = job
        params = specs[i]
        seed = SeedSpec(master_seed, _point_stream(i, t))
        return extreme_singular_values(sk.build(params, seed), svd_check=False)

    pairs = map_trials(one, jobs, threads)
    rows, points = [], []
    for i, params in enumerate(specs):
        chunk = pairs[i * trials:(i + 1) * trials]
        s = params.s if params.s is not None else params.expected_column_nnz
        for t, p in enumerate(chunk):
            rows.append((params.N, params.n, s, t, p.s1, p.sn))
        s1 = np.array([p.s1 for p in chunk])
        sn = np.array([p.sn for p in chunk])
        points.append(PointSummary(
            params.N, params.n, s, trials,
            float(s1.min()), float(s1.max()), float(s1.mean()),
            float(sn.min()), float(sn.max()), float(sn.mean()),
            flagger(params) if flagger else [],
        ))
    return ExperimentReport(name, rows, points, references, {"master_seed": master_seed, "trials": trials})


def baiyin_references(aspect: float) -> dict:
    r = 1.0 / math.sqrt(aspect)
    return {"aspect": aspect, "s1_limit": r + 1.0, "sn_limit": r - 1.0}


def baiyin_experiment(
    schedule: Sequence[tuple[int, int, float]] | None = None,
    trials_per_point: int = 10,
    master_seed: int = 0,
    q: float | None = None,
    aspect: float = 0.01,
    threads: int = 1,
) -> ExperimentReport:
    """Extreme singular values along a schedule of growing (N, n, s).

    With ``q`` given every point uses the general ensemble at that q and the
    s column of the schedule is ignored.
    """
    schedule = log_schedule() if schedule is None else list(schedule)
    if not schedule:
        raise DomainError("empty schedule")
    if trials_per_point < 1:
        raise DomainError("trials_per_point must be at least 1")
    specs = [_params_for(N, n, s, q) for N, n, s in schedule]
    return _run_points("baiyin", specs, trials_per_point, master_seed, threads, baiyin_references(aspect))


def zero_column_probability(n: int, s: float) -> float:
    """P(a hashing-like column is identically zero) = (1 - s/n)^n."""
    return (1.0 - s / n) ** n


def _sparsity_flags(params: sk.EnsembleParams) -> list[str]:
    s, n, N = params.expected_column_nnz, params.n, params.N
    p0 = zero_column_probability(n, s)
    flags = []
    if s < 1.0 or N * p0 >= 1.0:
        flags.append(f"probable zero columns: P(column = 0) = {p0:.3g}, expected count {N * p0:.3g}")
    return flags


def sparsity_sweep(
    N: int,
    n: int,
    s_grid: Sequence[float],
    trials: int = 10,
    master_seed: int = 0,
    threads: int = 1,
) -> ExperimentReport:
    """Extreme singular values at fixed (N, n) as the column sparsity s varies."""
    if not s_grid:
        raise DomainError("empty s grid")
    specs = [_params_for(N, n, s, None) for s in s_grid]
    report = _run_points("sparsity-sweep", specs, trials, master_seed, threads,
                         baiyin_references(n / N), _sparsity_flags)
    return report


class RescaledKind(enum.Enum):
    XI_LARGEST = "largest"
    ZETA_SMALLEST = "smallest"


@dataclass(frozen=True)
class RescaledSample:
    kind: RescaledKind
    value: float
    N: int
    n: int


def _aspect(pair: SingularPair) -> float:
    if not 0 < pair.n < pair.N:
        raise DomainError(f"rescaling needs n < N, got n={pair.n}, N={pair.N}")
    return pair.n / pair.N


def rescale_largest(pair: SingularPair) -> RescaledSample:
    y = _aspect(pair)
    r = math.sqrt(y)
    pref = 2.0 * r * (1.0 + 1.0 / r) ** (-1.0 / 3.0) * pair.N ** (2.0 / 3.0)
    v = pref * (pair.s1 - (1.0 + math.sqrt(pair.N / pair.n)))
    return RescaledSample(RescaledKind.XI_LARGEST, v, pair.N, pair.n)


def rescale_smallest(pair: SingularPair) -> RescaledSample:
    y = _aspect(pair)
    r = math.sqrt(y)
    pref = -2.0 * r * (1.0 / r - 1.0) ** (-1.0 / 3.0) * pair.N ** (2.0 / 3.0)
    v = pref * (pair.sn + (1.0 - math.sqrt(pair.N / pair.n)))
    return RescaledSample(RescaledKind.ZETA_SMALLEST, v, pair.N, pair.n)


class EmpiricalCdf:
    """Right-continuous step function (#samples <= x) / m."""

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float))
        if v.size == 0:
            raise DomainError("empirical CDF needs at least one sample")
        if not np.all(np.isfinite(v)):
            raise DomainError("samples must be finite")
        self.values = v
        self.values.flags.writeable = False

    @property
    def m(self) -> int:
        return self.values.size

    def __call__(self, x):
        out = np.searchsorted(self.values, x, side="right") / self.m
        return out if np.ndim(out) else float(out)


def ks_distance(cdf: EmpiricalCdf, F: Callable) -> float:
    """sup_x |F_hat(x) - F(x)| for continuous F, from both sides of each jump."""
    x = cdf.values
    m = cdf.m
    Fx = np.asarray(F(x), dtype=float)
    i = np.arange(1, m + 1)
    d_plus = np.max(i / m - Fx)
    d_minus = np.max(Fx - (i - 1) / m)
    return float(min(1.0, max(d_plus, d_minus, 0.0)))


@dataclass
class TwResult:
    N: int
    n: int
    s: float
    kind: RescaledKind
    cdf: EmpiricalCdf
    ks: float

    @property
    def samples(self) -> int:
        return self.cdf.m

    @property
    def mean(self) -> float:
        return float(self.cdf.values.mean())


@dataclass
class TwReport:
    results: list[TwResult]
    meta: dict

    def get(self, N: int, kind) -> TwResult:
        kind = RescaledKind(kind)
        for r in self.results:
            if r.N == N and r.kind is kind:
                return r
        raise KeyError((N, kind))

    def cdf_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "kind", "rank", "value"])
        for r in self.results:
            for k, v in enumerate(r.cdf.values):
                w.writerow([r.N, r.kind.value, k, repr(float(v))])
        return buf.getvalue()

    def summary(self) -> dict:
        mean, var = tw.default_table().moments()
        return {
            "tw1_mean": mean,
            "tw1_variance": var,
            "results": [
                {"N": r.N, "n": r.n, "s": r.s, "kind": r.kind.value, "samples": r.samples,
                 "ks": r.ks, "mean": r.mean}
                for r in self.results
            ],
            "meta": self.meta,
        }


def tw_experiment(
    Ns: Sequence[int],
    aspect: float = 0.01,
    s_ratio: float = 0.2,
    samples_per_N: int = 2000,
    master_seed: int = 0,
    kinds: Sequence = (RescaledKind.XI_LARGEST, RescaledKind.ZETA_SMALLEST),
    threads: int = 1,
) -> TwReport:
    """Empirical CDFs of the rescaled extreme singular values and their KS distance to TW1."""
    if samples_per_N < 100:
        raise DomainError("samples_per_N must be at least 100")
    kinds = [RescaledKind(k) for k in kinds]
    table = tw.default_table()
    results = []
    for i, N in enumerate(Ns):
        n = int(matlab_round(aspect * N))
        s = max(int(matlab_round(s_ratio * n)), 1)
        params = _params_for(int(N), n, s, None)

        def one(t, params=params, i=i):
            seed = SeedSpec(master_seed, _point_stream(i, t))
            return extreme_singular_values(sk.build(params, seed), svd_check=False)

        pairs = map_trials(one, range(samples_per_N), threads)
        for kind in kinds:
            f = rescale_largest if kind is RescaledKind.XI_LARGEST else rescale_smallest
            cdf = EmpiricalCdf([f(p).value for p in pairs])
            results.append(TwResult(int(N), n, s, kind, cdf, ks_distance(cdf, table.cdf)))
    meta = {"Ns": [int(N) for N in Ns], "aspect": aspect, "s_ratio": s_ratio,
            "samples_per_N": samples_per_N, "master_seed": master_seed}
    return TwReport(results, meta)
