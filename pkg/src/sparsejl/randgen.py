"""Seedable random generation for the ternary entry laws and per-trial streams.

Every random quantity in the package is drawn from a Philox counter-based
generator keyed by ``(master_seed, stream_id)``.  Streams are therefore
derivable without sequential dependency, and a Monte Carlo trial produces
the same numbers whether it runs first, last, or on another thread.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

_U64 = 1 << 64

T = TypeVar("T")
R = TypeVar("R")


class DomainError(ValueError):
    """A parameter lies outside the domain where an operation is defined."""


@dataclass(frozen=True)
class SeedSpec:
    """Key of one independent random stream."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < _U64:
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def generator(self, substream: int = 0) -> np.random.Generator:
        """Return a fresh generator for this stream.

        ``substream`` selects a disjoint block of the Philox counter space
        (blocks are 2**192 draws apart), so one trial can feed several
        consumers without them sharing numbers.
        """
        if not 0 <= substream < _U64:
            raise DomainError("substream must be an unsigned 64-bit integer")
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        counter = np.array([0, 0, 0, substream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_stream(master_seed: int, trial: int) -> SeedSpec:
    """Map ``(master_seed, trial)`` to the stream used by that trial.

    The Philox key is the pair itself, so the map is injective and two
    trials never share a stream.
    """
    return SeedSpec(master_seed, trial)


class EntryKind(enum.Enum):
    MU_X = "mu_x"
    MU_Y = "mu_y"
    SIGNED_BERNOULLI = "signed_bernoulli"
    STD_GAUSSIAN = "std_gaussian"


@dataclass(frozen=True)
class EntryDistribution:
    kind: EntryKind
    q: float | None = None

    def __post_init__(self):
        if self.kind in (EntryKind.MU_X, EntryKind.MU_Y):
            check_q(self.q)
        elif self.kind is EntryKind.SIGNED_BERNOULLI:
            object.__setattr__(self, "q", 2.0)

    @property
    def q_hat(self) -> float:
        return math.sqrt(self.q / 2.0)

    def support(self) -> tuple[float, float, float]:
        if self.kind is EntryKind.STD_GAUSSIAN:
            raise DomainError("the Gaussian law has no finite support")
        a = self.q_hat if self.kind is EntryKind.MU_X else 1.0
        return (-a, 0.0, a)

    def probabilities(self) -> tuple[float, float, float]:
        if self.kind is EntryKind.STD_GAUSSIAN:
            raise DomainError("the Gaussian law has no point masses")
        p = 1.0 / self.q
        return (p, 1.0 - 2.0 * p, p)

    def sample(self, seed: SeedSpec, count: int) -> np.ndarray:
        if self.kind is EntryKind.STD_GAUSSIAN:
            return seed.generator().standard_normal(count)
        if self.kind is EntryKind.MU_X:
            return sample_mu_x(seed, self.q, count)
        return sample_mu_y(seed, self.q, count)


def check_q(q) -> float:
    if q is None or not np.isfinite(q) or q < 2:
        raise DomainError(f"q must be a real number >= 2, got {q!r}")
    return float(q)


def mu_y_from_uniform(u: np.ndarray, q: float) -> np.ndarray:
    """Map uniforms in [0, 1) to {-1, 0, +1} with P(+-1) = 1/q.

    ``u < 1/q`` gives -1, ``1/q <= u < 2/q`` gives +1, anything else 0.
    """
    p = 1.0 / q
    lower = u < p
    upper = u < 2.0 * p
    out = upper.astype(np.int8)
    out -= 2 * lower.astype(np.int8)
    return out


def sample_mu_y(seed: SeedSpec, q: float, count: int) -> np.ndarray:
    """Draw ``count`` independent copies of Y ~ mu_Y(q) as int8."""
    q = check_q(q)
    if count < 1:
        raise DomainError("count must be positive")
    return mu_y_from_uniform(seed.generator().random(count), q)


def sample_mu_x(seed: SeedSpec, q: float, count: int) -> np.ndarray:
    """Draw X ~ mu_X(q); equals sqrt(q/2) times ``sample_mu_y`` on the same seed."""
    q = check_q(q)
    return math.sqrt(q / 2.0) * sample_mu_y(seed, q, count).astype(np.float64)


def map_trials(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Evaluate ``fn`` over ``items`` and return results in input order.

    Each item must carry its own seed, so the output does not depend on
    ``threads``.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def trial_seeds(master_seed: int, trials: int, offset: int = 0) -> Sequence[SeedSpec]:
    return [derive_stream(master_seed, offset + t) for t in range(trials)]
