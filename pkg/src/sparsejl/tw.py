"""GOE Tracy-Widom (TW1) distribution from the Hastings-McLeod solution.

F1(x) = exp( -1/2 int_x^inf q(t) dt - 1/2 int_x^inf (t - x) q(t)^2 dt )

where q solves q'' = t q + 2 q^3 with q(t) ~ Ai(t) as t -> +inf.  The ODE is
integrated backward from the Airy tail, carrying the two integrals as extra
state so that the CDF comes out of a single pass:

    I1' = -q,   J' = -q^2,   I2' = -J,

with I1 = int_x^inf q, J = int_x^inf q^2 and I2 = int_x^inf (t - x) q^2.
"""
from __future__ import annotations

import functools
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .airy import airy_ai, airy_tail_integrals
from .randgen import DomainError, SeedSpec

GRID_LO = -10.0
GRID_HI = 12.0
GRID_NODES = 2201
T_START = 12.0
RTOL = 3e-14
ATOL = 1e-300


class TableBuildError(RuntimeError):
    """The backward integration left the Hastings-McLeod branch."""


def _rhs(t, y):
    q, p, _, j, _ = y
    return [p, t * q + 2.0 * q**3, -q, -q * q, -j]


def _blowup(t, y):
    # HM stays positive and close to sqrt(-t/2) on the left; leaving a wide
    # band around that means the integration picked up the unstable mode.
    q = y[0]
    return min(q, 3.0 * math.sqrt(max(-t, 1.0) / 2.0) + 1.0 - q)


_blowup.terminal = True


def _solve(lo: float, t_start: float, rtol: float, max_step: float, t_eval=None):
    ai, aip = airy_ai(t_start)
    i1, j, i2 = airy_tail_integrals(t_start)
    sol = solve_ivp(
        _rhs,
        (t_start, lo),
        [ai, aip, i1, j, i2],
        method="DOP853",
        rtol=rtol,
        atol=ATOL,
        max_step=max_step,
        t_eval=t_eval,
        events=_blowup,
        dense_output=t_eval is None,
    )
    if sol.status == 1:
        raise TableBuildError(
            f"Hastings-McLeod integration diverged near t={sol.t_events[0][0]:.3f}; "
            "tighten rtol or start further right"
        )
    if not sol.success:
        raise TableBuildError(sol.message)
    return sol


def hastings_mcleod(t_grid, t_start: float = T_START, rtol: float = RTOL, max_step: float = 0.01):
    """Values of the Hastings-McLeod solution q(t) at ``t_grid``.

    Returns ``(q, q_prime)`` in the order of ``t_grid``.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.max() > t_start:
        raise DomainError(f"grid extends past the Airy boundary at t={t_start}")
    sol = _solve(min(t.min(), t_start - 1e-6), t_start, rtol, max_step)
    y = sol.sol(t)
    return y[0], y[1]


@dataclass(frozen=True, eq=False)
class Tw1Table:
    """F1 tabulated on an ascending grid, with monotone cubic interpolation."""

    grid: np.ndarray
    F1: np.ndarray
    meta: dict = field(default_factory=dict)

    @cached_property
    def _interp(self) -> PchipInterpolator:
        return PchipInterpolator(self.grid, self.F1, extrapolate=False)

    @cached_property
    def _inverse(self) -> PchipInterpolator:
        keep = np.concatenate([[True], np.diff(self.F1) > 0])
        keep &= (self.F1 > 0) & (self.F1 < 1)
        return PchipInterpolator(self.F1[keep], self.grid[keep], extrapolate=True)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = self._interp(np.clip(x, self.grid[0], self.grid[-1]))
        out = np.where(x < self.grid[0], 0.0, np.where(x > self.grid[-1], 1.0, out))
        out = np.clip(out, 0.0, 1.0)
        return out if out.ndim else float(out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.grid[0]) & (x <= self.grid[-1])
        d = self._interp.derivative()(np.clip(x, self.grid[0], self.grid[-1]))
        out = np.where(inside, np.maximum(d, 0.0), 0.0)
        return out if out.ndim else float(out)

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise DomainError(f"quantile level must lie in (0, 1), got {p!r}")
        x0 = float(self._inverse(p))
        lo, hi = max(self.grid[0], x0 - 0.1), min(self.grid[-1], x0 + 0.1)
        if not self.cdf(lo) <= p <= self.cdf(hi):
            lo, hi = self.grid[0], self.grid[-1]
        return brentq(lambda x: self.cdf(x) - p, lo, hi, xtol=1e-13, rtol=1e-13)

    def sample(self, seed: SeedSpec, count: int) -> np.ndarray:
        """Inverse-transform samples; deterministic for a fixed seed."""
        u = seed.generator().random(count)
        # keep u away from the flat tails where the inverse is undefined
        u = np.clip(u, self.F1[self.F1 > 0][0], self.F1[self.F1 < 1][-1])
        return self._inverse(u)

    def moments(self) -> tuple[float, float]:
        """Mean and variance from tail integrals of the tabulated CDF."""
        x, F = self.grid, self.F1
        right = x >= 0
        left = x <= 0
        m1 = simpson(1.0 - F[right], x=x[right]) - simpson(F[left], x=x[left])
        m2 = 2.0 * simpson(x[right] * (1.0 - F[right]), x=x[right]) - 2.0 * simpson(
            x[left] * F[left], x=x[left]
        )
        return float(m1), float(m2 - m1 * m1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# tw1-table {json.dumps(self.meta, sort_keys=True)}\n")
        buf.write("x,F1\n")
        for x, f in zip(self.grid, self.F1):
            buf.write(f"{x:.17g},{f:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Tw1Table":
        lines = text.splitlines()
        meta = {}
        if lines and lines[0].startswith("# tw1-table "):
            meta = json.loads(lines[0][len("# tw1-table "):])
            lines = lines[1:]
        if not lines or lines[0].strip() != "x,F1":
            raise ValueError("expected an 'x,F1' header")
        data = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()])
        return cls(data[:, 0], data[:, 1], meta)


def build_table(
    lo: float = GRID_LO,
    hi: float = GRID_HI,
    nodes: int = GRID_NODES,
    rtol: float = RTOL,
    max_step: float | None = None,
    t_start: float = T_START,
) -> Tw1Table:
    """Tabulate F1 on ``nodes`` equispaced points of [lo, hi]."""
    if hi > t_start:
        raise DomainError("table cannot extend past the Airy boundary")
    grid = np.linspace(lo, hi, nodes)
    h = grid[1] - grid[0]
    if max_step is None:
        max_step = h
    sol = _solve(lo, t_start, rtol, max_step, t_eval=grid[::-1])
    y = sol.y[:, ::-1]
    exponent = -0.5 * (y[2] + y[4])
    F = np.clip(np.exp(exponent), 0.0, 1.0)
    F = np.maximum.accumulate(F)
    meta = {
        "lo": lo,
        "hi": hi,
        "nodes": nodes,
        "rtol": rtol,
        "max_step": max_step,
        "t_start": t_start,
        "method": "DOP853",
    }
    return Tw1Table(grid, F, meta)


@functools.lru_cache(maxsize=1)
def default_table() -> Tw1Table:
    return build_table()


def tw1_cdf(x):
    return default_table().cdf(x)


def tw1_pdf(x):
    return default_table().pdf(x)


def tw1_quantile(p: float) -> float:
    return default_table().quantile(p)


def tw1_sample(seed: SeedSpec, count: int) -> np.ndarray:
    return default_table().sample(seed, count)
