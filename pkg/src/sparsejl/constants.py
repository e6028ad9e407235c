"""Closed-form constants as functions of q, the tail bounds they feed, and calibration.

The theory asserts that absolute constants C2, C3, C4, C5, c23, ... exist but
does not give values.  ``AbsoluteConstants`` holds one choice of them;
``ledger_for`` turns that choice and a q into every derived quantity, and
``calibrate`` picks values that make the bounds hold on a probe grid.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .randgen import DomainError, SeedSpec, check_q

CONFIG_VERSION = 1
MARGIN = 1.2
LN2, LN5 = math.log(2.0), math.log(5.0)


class ConfigurationError(ValueError):
    """A constant or derived quantity violates a required bound."""


class CalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AbsoluteConstants:
    """Absolute constants; unset C1, C1_prime, c23_tilde are derived from the others."""

    C2: float = 1.5
    C3: float = 1.5
    C4: float = 1.5
    C5: float = 1.0
    c23: float = 0.5
    kappa: float = 0.5
    C1: float | None = None
    C1_prime: float | None = None
    c23_tilde: float | None = None

    def __post_init__(self):
        if self.C1 is None:
            object.__setattr__(self, "C1", self.C5**2)
        if self.C1_prime is None:
            object.__setattr__(self, "C1_prime", 4.0 * self.C1)
        if self.c23_tilde is None:
            object.__setattr__(self, "c23_tilde", self.c23 / 8.0)
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{f.name} must be a positive finite real, got {v!r}")
        for name in ("C2", "C3", "C4"):
            if not getattr(self, name) > 1:
                raise ConfigurationError(f"{name} > 1 violated: {getattr(self, name)!r}")
        for name in ("c23", "c23_tilde", "kappa"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigurationError(f"{name} in (0, 1) violated: {getattr(self, name)!r}")

    @classmethod
    def placeholders(cls) -> "AbsoluteConstants":
        return cls()

    @classmethod
    def calibrated(cls) -> "AbsoluteConstants":
        return default_constants()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AbsoluteConstants":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown constants: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ConstantLedger:
    q: float
    abs: AbsoluteConstants
    K1: float
    K2: float
    K3: float
    K4: float
    K5: float
    c2: float
    c0: float
    C0: float
    C0_prime: float
    gamma: float
    psi: float
    epsilon_q: float
    kappa0: float
    kappa0_prime: float
    alpha0: float
    kappa1: float
    kappa2: float

    @property
    def q_hat(self) -> float:
        return math.sqrt(self.q / 2.0)


def _log_term(q: float) -> float:
    return math.log(q / 2.0 + 1.0)


def ledger_for(q: float, abs: AbsoluteConstants | None = None) -> ConstantLedger:
    """Every derived constant at this q.  Raises ConfigurationError naming a violated bound."""
    q = check_q(q)
    a = default_constants() if abs is None else abs
    L = _log_term(q)
    qh2 = q / 2.0
    qh = math.sqrt(qh2)
    K1 = 1.0 / math.sqrt(L)
    K2 = a.C2 * K1
    K3 = a.C3 * K2
    K4 = a.C4 / math.sqrt(L)
    K5 = a.C5 * q / L
    c2 = (a.c23 / K1) ** 2
    c0 = a.c23_tilde**2 * L
    C0 = math.sqrt(LN5 / c0)
    C0p = math.sqrt(LN5 / LN2) / a.c23_tilde
    gamma = 3.0 * math.log(qh2 + 1.0) / (16.0 * a.C4**2 * qh2)
    k0p = 0.5 - LN2 / 4.0
    psi = math.exp(-(gamma**2) * k0p)
    k0 = 3.0 * a.c23_tilde / (128.0 * a.C4**2 * math.sqrt(LN5))
    eps_q = gamma / (8.0 * C0 * qh)
    kappa1 = gamma / 8.0
    kappa2 = 0.25 * (1.0 - a.kappa) * (1.0 - LN2 / 2.0) * gamma**2

    if not 0 < gamma < 1:
        raise ConfigurationError(f"gamma in (0, 1) violated at q={q}: gamma={gamma}")
    if not 0 < psi < 1:
        raise ConfigurationError(f"psi in (0, 1) violated at q={q}: psi={psi}")
    if not eps_q < min(3.0 * psi, 1.0):
        raise ConfigurationError(f"epsilon_q < min(3 psi, 1) violated at q={q}: epsilon_q={eps_q}, psi={psi}")
    alpha0 = a.kappa * (gamma**2 * k0p) / math.log(3.0 / eps_q)
    if not 0 < alpha0 < 1:
        raise ConfigurationError(f"alpha0 in (0, 1) violated at q={q}: alpha0={alpha0}")
    return ConstantLedger(q, a, K1, K2, K3, K4, K5, c2, c0, C0, C0p, gamma, psi, eps_q, k0, k0p,
                          alpha0, kappa1, kappa2)


def subgaussian_norm_empirical(q: float, rtol: float = 1e-13) -> float:
    """Root in t of E exp(Y^2/t^2) = 2 for the three-point law, by bisection.

    Compared in the log domain so small t does not overflow.
    """
    q = check_q(q)
    p = 2.0 / q
    rhs = math.log1p(p)  # E exp(Y^2/t^2) = 2  <=>  1/t^2 + ln p = ln(1 + p)

    def excess(t):
        return 1.0 / (t * t) + math.log(p) - rhs

    lo, hi = 1e-3, 1e3
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def hoeffding_bound(t: float, ledger: ConstantLedger) -> float:
    if t < 0:
        raise DomainError("t must be nonnegative")
    return min(1.0, 2.0 * math.exp(-ledger.c2 * t * t))


@dataclass(frozen=True)
class TailBound:
    threshold: float
    bound: float
    in_regime: bool
    note: str = ""


def s1_tail_bound(t: float, N: int, n: int, ledger: ConstantLedger, s: float | None = None) -> TailBound:
    """Bound on P(s1(A) > q_hat t sqrt(N/n)); with ``s`` the threshold is t sqrt(N/s).

    Below t = C0 the statement does not apply and the bound is reported as 1.
    """
    if s is not None:
        if not math.isclose(2.0 * n / s, ledger.q, rel_tol=1e-12):
            raise DomainError(f"s={s} does not match the ledger's q={ledger.q} at n={n}")
        threshold = t * math.sqrt(N / s)
    else:
        threshold = ledger.q_hat * t * math.sqrt(N / n)
    if t < ledger.C0:
        return TailBound(threshold, 1.0, False, f"t={t:g} below C0={ledger.C0:g}")
    return TailBound(threshold, math.exp(-ledger.c0 * N * t * t), True)


def sn_lower_bound(ledger: ConstantLedger, N: int, n: int) -> TailBound:
    """Threshold kappa1 sqrt(N/n) and the bound exp(-kappa2 N) on P(sn(A) <= threshold)."""
    threshold = ledger.kappa1 * math.sqrt(N / n)
    if n > ledger.alpha0 * N:
        return TailBound(threshold, 1.0, False, f"n={n} exceeds alpha0 N={ledger.alpha0 * N:g}")
    return TailBound(threshold, math.exp(-ledger.kappa2 * N), True)


def _check_eps_delta(epsilon, delta):
    if not 0 < epsilon <= 0.5:
        raise DomainError(f"epsilon must lie in (0, 1/2], got {epsilon!r}")
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta!r}")


def jl_dimension_real(epsilon: float, delta: float, q: float, ledger: ConstantLedger | None = None) -> float:
    _check_eps_delta(epsilon, delta)
    led = ledger if ledger is not None and ledger.q == q else ledger_for(q, ledger.abs if ledger else None)
    return led.K5**2 * math.log(2.0 / delta) / epsilon**2


def jl_min_dimension(epsilon: float, delta: float, q: float, ledger: ConstantLedger | None = None) -> int:
    """ceil(K5^2 eps^-2 ln(2/delta))."""
    return max(1, math.ceil(jl_dimension_real(epsilon, delta, q, ledger)))


def sparsity_threshold(ledger: ConstantLedger) -> float:
    """tau = 4 C1' ln 4 / (ln 2)^2: at eps = delta = 1/2, s = n works once n >= tau."""
    return 4.0 * ledger.abs.C1_prime * math.log(4.0) / LN2**2


def hashing_sparsity_check(n: int, s: float, epsilon: float, delta: float, ledger: ConstantLedger) -> bool:
    if not 0 < s <= n:
        raise DomainError(f"s must lie in (0, n], got s={s}, n={n}")
    rhs = ledger.abs.C1_prime * n * math.log(2.0 / delta) / (epsilon**2 * math.log(n / s + 1.0) ** 2)
    # one-ulp slack so the boundary case s^2 = rhs is not lost to rounding
    return s * s >= rhs * (1.0 - 2.0**-50)


# --------------------------------------------------------------------------
# exact laws of sums of ternary variables


def ternary_sum_pmf(q: float, m: int) -> np.ndarray:
    """P(Y_1 + ... + Y_m = d) for d = -m..m, by repeated convolution."""
    p = 1.0 / q
    base = np.array([p, 1.0 - 2.0 * p, p])
    out = np.array([1.0])
    sq = base
    k = m
    while k:
        if k & 1:
            out = np.convolve(out, sq)
        k >>= 1
        if k:
            sq = np.convolve(sq, sq)
    return out


def exact_sum_tail(q: float, m: int, t) -> np.ndarray:
    """P(|sum_l Y_l / sqrt(m)| >= t) for unit weights a_l = 1/sqrt(m)."""
    pmf = ternary_sum_pmf(q, m)
    d = np.abs(np.arange(-m, m + 1)) / math.sqrt(m)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    # guard against t landing a hair above a lattice point
    return np.array([pmf[d >= tt * (1 - 1e-12)].sum() for tt in t])


def exact_sum_moment(q: float, m: int, p: float) -> float:
    """(E |sum_l Y_l / sqrt(m)|^p)^(1/p)."""
    pmf = ternary_sum_pmf(q, m)
    d = np.abs(np.arange(-m, m + 1)) / math.sqrt(m)
    return float((pmf @ d**p) ** (1.0 / p))


def _y_moment_ratio(q: float, p: float) -> float:
    # (E|Y|^p)^(1/p) / (K1 sqrt p)
    return (2.0 / q) ** (1.0 / p) * math.sqrt(_log_term(q)) / math.sqrt(p)


def _min_C3(q: float, C2: float) -> float:
    """Smallest C3 for which both exponential-moment bounds on Y hold at this q."""
    K2 = C2 / math.sqrt(_log_term(q))
    p = 2.0 / q
    lam = np.concatenate([np.linspace(1e-4, 1, 400), np.logspace(0, 2.5, 400)])
    # E exp(lam Y) = 1 + p (cosh lam - 1) <= exp(K3^2 lam^2) for all lam
    need = np.max(np.log1p(2.0 * p * np.sinh(lam / 2) ** 2) / lam**2)
    K3 = math.sqrt(need)

    def ok(K3):
        lam2 = np.linspace(1e-6, 1.0 / K3, 400) ** 2
        return np.all(np.log1p(p * np.expm1(lam2)) <= K3**2 * lam2 * (1 + 1e-12))

    while not ok(K3):
        K3 *= 1.01
    return K3 / K2


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class Budget:
    jl_trials: int = 2000
    jl_max_n: int = 400
    singular_trials: int = 200


@dataclass(frozen=True)
class ProbeGrid:
    q_values: tuple = (2.0, 3.0, 4.0, 10.0, 50.0, 1e3, 1e6)
    moment_m: tuple = (1, 2, 8, 64, 512)
    moment_p: tuple = (1, 2, 4, 6)
    hoeffding_t: tuple = tuple(np.round(np.linspace(0.25, 6.0, 24), 4))
    jl_probes: tuple = ((2.0, 0.5, 0.5), (2.0, 0.25, 0.1), (4.0, 0.5, 0.5), (10.0, 0.5, 0.25))
    jl_families: tuple = ("gaussian-unit", "sparse-1hot", "coordinate-heavy")
    jl_N: int = 1000
    singular_probes: tuple = ((2.0, 2000, 20), (10.0, 8000, 80), (2.0, 20000, 4), (10.0, 50000, 4))

    def describe(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class CalibrationResult:
    constants: AbsoluteConstants
    seed: int
    budget: Budget
    grid: ProbeGrid
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "version": CONFIG_VERSION,
            "constants": self.constants.to_dict(),
            "seed": self.seed,
            "margin": MARGIN,
            "budget": asdict(self.budget),
            "probe_grid": self.grid.describe(),
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _floor_above_one(x: float) -> float:
    return max(MARGIN * x, MARGIN)


def _c23_from_hoeffding(grid: ProbeGrid):
    worst = math.inf
    where = None
    t = np.asarray(grid.hoeffding_t)
    for q in grid.q_values:
        L = _log_term(q)
        for m in grid.moment_m:
            tail = exact_sum_tail(q, m, t)
            pos = tail > 0
            # need 2 exp(-c23^2 L t^2) >= tail  <=>  c23 <= sqrt(ln(2/tail) / (L t^2))
            lim = np.sqrt((LN2 - np.log(tail[pos])) / (L * t[pos] ** 2))
            if lim.size and lim.min() < worst:
                worst = float(lim.min())
                where = {"q": q, "m": m, "t": float(t[pos][lim.argmin()])}
    return worst, where


def _C4_from_khintchine(grid: ProbeGrid):
    worst, where = 0.0, None
    for q in grid.q_values:
        L = _log_term(q)
        for m in grid.moment_m:
            for p in grid.moment_p:
                need = exact_sum_moment(q, m, p) * math.sqrt(L) / math.sqrt(p)
                if need > worst:
                    worst, where = need, {"q": q, "m": m, "p": p}
    return worst, where


def _jl_failure(q, n, N, eps, family, trials, seed):
    from . import jl, sketch as sk

    params = sk.EnsembleParams(sk.Ensemble.GENERAL_Q, n, N, q=q)
    return jl.verify_jlt(params, eps, trials, family, seed)


def calibrate(
    abs_init: AbsoluteConstants | None = None,
    budget: Budget | None = None,
    seed: int = 20240917,
    grid: ProbeGrid | None = None,
) -> CalibrationResult:
    """Pick absolute constants that make every bound hold on the probe grid.

    Hoeffding tails and Khintchine moments at unit weights are computed from
    the exact law of the sum; the JL dimension and the singular value bounds
    are checked by simulation.  Each constant is moved by the 1.2 margin in
    the conservative direction.
    """
    from . import spectra, sketch as sk

    a0 = abs_init or AbsoluteConstants()
    budget = budget or Budget()
    grid = grid or ProbeGrid()
    diag, warns = {}, []

    c23_lim, c23_at = _c23_from_hoeffding(grid)
    c23 = min(c23_lim / MARGIN, 1.0 - 1e-3)
    diag["hoeffding"] = {"c23_limit": c23_lim, "binding": c23_at}

    C2_need = max(_y_moment_ratio(q, p) for q in grid.q_values for p in grid.moment_p)
    C2 = _floor_above_one(C2_need)
    C3_need = max(_min_C3(q, C2) for q in grid.q_values)
    C3 = _floor_above_one(C3_need)
    C4_need, C4_at = _C4_from_khintchine(grid)
    C4 = _floor_above_one(C4_need)
    diag["moments"] = {"C2_need": C2_need, "C3_need": C3_need, "C4_need": C4_need, "C4_binding": C4_at}

    # C5: smallest n with empirical JL failure <= delta, mapped back through K5
    C5_need, jl_rows = 0.0, []
    for qi, (q, eps, delta) in enumerate(grid.jl_probes):
        L = _log_term(q)
        for fi, fam in enumerate(grid.jl_families):
            pseed = (seed + 1000 * qi + fi) % (1 << 64)
            n_found = None
            for n in range(1, budget.jl_max_n + 1):
                r = _jl_failure(q, n, grid.jl_N, eps, fam, budget.jl_trials, pseed)
                if r.failure_rate <= delta:
                    n_found = n
                    break
            if n_found is None:
                warns.append(f"no n <= {budget.jl_max_n} met delta for q={q}, eps={eps}, family={fam}")
                n_found = budget.jl_max_n
            need = math.sqrt(n_found * eps**2 / math.log(2.0 / delta)) * L / q
            C5_need = max(C5_need, need)
            jl_rows.append({"q": q, "epsilon": eps, "delta": delta, "family": fam, "n_min": n_found, "C5_need": need})
    C5 = MARGIN * C5_need

    abs_c = AbsoluteConstants(C2=C2, C3=C3, C4=C4, C5=C5, c23=c23, kappa=a0.kappa)

    # confirm the JL dimension at the calibrated C5 on fresh streams
    for row in jl_rows:
        n = jl_min_dimension(row["epsilon"], row["delta"], row["q"], ledger_for(row["q"], abs_c))
        n = min(n, grid.jl_N)
        r = _jl_failure(row["q"], n, grid.jl_N, row["epsilon"], row["family"], budget.jl_trials, seed + 7)
        row.update(n_calibrated=n, failure_rate=r.failure_rate, ci_high=r.ci_high)
        if r.failure_rate > row["delta"]:
            warns.append(f"JL failure {r.failure_rate:.3f} > delta at {row}")
        elif r.ci_high > row["delta"]:
            warns.append(
                f"calibration-uncertain: JL upper confidence {r.ci_high:.3f} exceeds delta={row['delta']} "
                f"for q={row['q']}, family={row['family']}; raise jl_trials"
            )
    diag["jl"] = jl_rows

    # singular value bounds; shrink c23_tilde or grow C4 on a violation
    sing_rows = []
    for k, (q, N, n) in enumerate(grid.singular_probes):
        for attempt in range(20):
            led = ledger_for(q, abs_c)
            params = sk.EnsembleParams(sk.Ensemble.GENERAL_Q, n, N, q=q)
            pairs = [
                spectra.extreme_singular_values(sk.build(params, SeedSpec(seed, (k << 32) | t)), svd_check=False)
                for t in range(budget.singular_trials)
            ]
            s1 = np.array([p.s1 for p in pairs])
            sn = np.array([p.sn for p in pairs])
            b1 = s1_tail_bound(led.C0, N, n, led)
            b2 = sn_lower_bound(led, N, n)
            f1 = float(np.mean(s1 > b1.threshold))
            f2 = float(np.mean(sn <= b2.threshold))
            if f1 > b1.bound:
                abs_c = replace(abs_c, c23_tilde=abs_c.c23_tilde / MARGIN)
                continue
            if f2 > b2.bound:
                abs_c = replace(abs_c, C4=abs_c.C4 * MARGIN)
                continue
            break
        sing_rows.append({"q": q, "N": N, "n": n, "s1_exceed": f1, "s1_bound": b1.bound,
                          "sn_below": f2, "sn_bound": b2.bound, "sn_in_regime": b2.in_regime})
    diag["singular"] = sing_rows
    for w in warns:
        warnings.warn(w, CalibrationWarning, stacklevel=2)
    return CalibrationResult(abs_c, seed, budget, grid, diag, warns)


# --------------------------------------------------------------------------
# persistence

_DEFAULT_FILE = "constants.json"


def load_constants(path) -> AbsoluteConstants:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"constants file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported constants file version {doc.get('version')!r}")
    return AbsoluteConstants.from_dict(doc["constants"])


def save_result(result: CalibrationResult, path) -> None:
    Path(path).write_text(result.to_json())


_cached: AbsoluteConstants | None = None


def default_constants() -> AbsoluteConstants:
    """The shipped calibrated constants (placeholders if the file is missing)."""
    global _cached
    if _cached is None:
        try:
            text = resources.files("sparsejl").joinpath("data", _DEFAULT_FILE).read_text()
        except FileNotFoundError:
            warnings.warn("no shipped constants file; using placeholders", CalibrationWarning, stacklevel=2)
            return AbsoluteConstants()
        doc = json.loads(text)
        _cached = AbsoluteConstants.from_dict(doc["constants"])
    return _cached
