"""Empirical Johnson-Lindenstrauss checks.

Each trial draws a fresh sketch and a fresh test vector, both from the
trial's own stream, and records whether ||Hx|| / ||x|| lands in
[1 - eps, 1 + eps].
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import sketch as sk
from .randgen import DomainError, derive_stream, map_trials

# substream of a trial's key reserved for the test vector
VECTOR_SUBSTREAM = 1


class VectorFamily(enum.Enum):
    GAUSSIAN_UNIT = "gaussian-unit"
    SPARSE_1HOT = "sparse-1hot"
    SPARSE_KHOT = "sparse-khot"
    COORDINATE_HEAVY = "coordinate-heavy"
    USER_SUPPLIED = "user-supplied"


def draw_vector(family: VectorFamily, N: int, gen: np.random.Generator, k: int = 8, user=None) -> np.ndarray:
    """Draw a unit test vector in R^N."""
    family = VectorFamily(family)
    if family is VectorFamily.GAUSSIAN_UNIT:
        x = gen.standard_normal(N)
        return x / np.linalg.norm(x)
    if family is VectorFamily.SPARSE_1HOT:
        x = np.zeros(N)
        x[gen.integers(N)] = 1.0
        return x
    if family is VectorFamily.SPARSE_KHOT:
        k = min(k, N)
        x = np.zeros(N)
        x[gen.choice(N, size=k, replace=False)] = (2 * gen.integers(0, 2, size=k) - 1) / np.sqrt(k)
        return x
    if family is VectorFamily.COORDINATE_HEAVY:
        # one coordinate carries ~99.5% of the norm, the rest is Gaussian dust
        z = gen.standard_normal(N)
        j = gen.integers(N)
        z[j] = 0.0
        z *= 0.1 / np.linalg.norm(z)
        z[j] = np.sqrt(1.0 - 0.01)
        return z
    if user is None:
        raise DomainError("user-supplied family needs a vector")
    x = np.asarray(user, dtype=np.float64)
    if x.shape != (N,):
        raise DomainError(f"user vector has shape {x.shape}, expected ({N},)")
    return x


def distortion(sketch: sk.SparseSketch, x) -> float:
    """||Hx||_2 / ||x||_2."""
    x = np.asarray(x, dtype=np.float64)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        raise DomainError("distortion is undefined for the zero vector")
    return float(np.linalg.norm(sk.apply(sketch, x)) / nx)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


@dataclass
class DistortionReport:
    epsilon: float
    trials: int
    failures: int
    failure_rate: float
    ci_low: float
    ci_high: float
    vector_family: VectorFamily
    ensemble: str
    n: int
    N: int
    mean_sq_ratio: float
    sq_ratio_stderr: float
    per_trial_ratios: list[float] | None = field(default=None, repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out["vector_family"] = self.vector_family.value
        out.pop("per_trial_ratios")
        return out

    def trials_csv(self) -> str:
        if self.per_trial_ratios is None:
            raise ValueError("report was produced without per-trial ratios")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "ratio", "pass"])
        lo, hi = 1.0 - self.epsilon, 1.0 + self.epsilon
        for t, r in enumerate(self.per_trial_ratios):
            w.writerow([t, repr(r), int(lo <= r <= hi)])
        return buf.getvalue()


def _ensemble_label(params: sk.EnsembleParams) -> str:
    p = params
    if p.ensemble is sk.Ensemble.GAUSSIAN:
        return "gaussian"
    if p.ensemble is sk.Ensemble.GENERAL_Q:
        return f"general-q(q={p.q:g})"
    return f"{p.ensemble.value}(s={p.s:g})"


def verify_jlt(
    params: sk.EnsembleParams,
    epsilon: float,
    trials: int,
    family: VectorFamily = VectorFamily.GAUSSIAN_UNIT,
    master_seed: int = 0,
    keep_ratios: bool = False,
    threads: int = 1,
    user_vector=None,
) -> DistortionReport:
    """Monte Carlo failure rate of the JL inequality at level ``epsilon``."""
    if trials < 1:
        raise DomainError("trials must be at least 1")
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    family = VectorFamily(family)

    def one(t: int) -> float:
        seed = derive_stream(master_seed, t)
        h = sk.build(params, seed)
        x = draw_vector(family, params.N, seed.generator(VECTOR_SUBSTREAM), user=user_vector)
        return distortion(h, x)

    ratios = np.array(map_trials(one, range(trials), threads))
    fails = int(np.count_nonzero((ratios < 1.0 - epsilon) | (ratios > 1.0 + epsilon)))
    lo, hi = clopper_pearson(fails, trials)
    sq = ratios**2
    stderr = float(sq.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
    return DistortionReport(
        epsilon=float(epsilon),
        trials=trials,
        failures=fails,
        failure_rate=fails / trials,
        ci_low=lo,
        ci_high=hi,
        vector_family=family,
        ensemble=_ensemble_label(params),
        n=params.n,
        N=params.N,
        mean_sq_ratio=float(sq.mean()),
        sq_ratio_stderr=stderr,
        per_trial_ratios=ratios.tolist() if keep_ratios else None,
    )


def compare_ensembles(
    ensembles: list[sk.EnsembleParams],
    epsilon: float,
    trials: int,
    family: VectorFamily = VectorFamily.GAUSSIAN_UNIT,
    master_seed: int = 0,
    threads: int = 1,
) -> list[DistortionReport]:
    """Run ``verify_jlt`` on each ensemble with the same trial seeds.

    Sharing the master seed pairs the test vectors across ensembles, which
    removes vector-to-vector variation from the comparison.
    """
    return [verify_jlt(p, epsilon, trials, family, master_seed, threads=threads) for p in ensembles]


def reports_csv(reports: list[DistortionReport]) -> str:
    buf = io.StringIO()
    rows = [r.summary() for r in reports]
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
