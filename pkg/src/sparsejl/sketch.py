"""Sparse random sketching matrices and their binary file format.

A sketch H is an n x N matrix (n <= N).  Ternary ensembles store only the
sign pattern in compressed-sparse-column form together with a single scale,
since every nonzero has the same magnitude.  The Gaussian baseline keeps a
dense array of standard normals and the scale 1/sqrt(n).
"""
from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .randgen import DomainError, SeedSpec, check_q, mu_y_from_uniform

# Roughly this many matrix entries are generated or densified at once.
CHUNK_ENTRIES = 1 << 22

MAGIC = b"SKSP1"


class Ensemble(enum.Enum):
    HASHING_LIKE = "hashing-like"
    EXACT_HASHING = "exact-hashing"
    GENERAL_Q = "general-q"
    GAUSSIAN = "gaussian"


_ENSEMBLE_CODES = {e: i for i, e in enumerate(Ensemble)}


@dataclass(frozen=True)
class EnsembleParams:
    """Which ensemble to draw and its dimensions.

    ``s`` is the (expected) number of nonzeros per column for the hashing
    ensembles and ``q`` the parameter of the general ensemble.  A
    hashing-like matrix is the general ensemble with q = 2n/s; when both
    are given they must agree.
    """

    ensemble: Ensemble
    n: int
    N: int
    s: float | None = None
    q: float | None = None

    def __post_init__(self):
        ens = Ensemble(self.ensemble)
        object.__setattr__(self, "ensemble", ens)
        if int(self.n) != self.n or int(self.N) != self.N or self.n < 1 or self.N < 1:
            raise DomainError("n and N must be positive integers")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "N", int(self.N))
        if self.n > self.N:
            raise DomainError(f"target dimension n={self.n} exceeds ambient dimension N={self.N}")

        if ens in (Ensemble.HASHING_LIKE, Ensemble.EXACT_HASHING):
            if self.s is None or not np.isfinite(self.s) or not 0 < self.s <= self.n:
                raise DomainError(f"s must lie in (0, n] = (0, {self.n}], got {self.s!r}")
            if ens is Ensemble.EXACT_HASHING and float(self.s) != int(self.s):
                raise DomainError(f"exact hashing needs an integer s, got {self.s!r}")
            implied = 2.0 * self.n / self.s
            if self.q is not None and not math.isclose(self.q, implied, rel_tol=1e-12):
                raise DomainError(f"q={self.q} disagrees with 2n/s={implied}")
            object.__setattr__(self, "q", implied)
        elif ens is Ensemble.GENERAL_Q:
            check_q(self.q)
            object.__setattr__(self, "q", float(self.q))
            if self.s is not None and not math.isclose(self.s, 2.0 * self.n / self.q, rel_tol=1e-12):
                raise DomainError(f"s={self.s} disagrees with 2n/q={2.0 * self.n / self.q}")
        elif self.s is not None or self.q is not None:
            raise DomainError("the Gaussian ensemble takes neither s nor q")

    @property
    def q_hat(self) -> float:
        return math.sqrt(self.q / 2.0)

    @property
    def expected_column_nnz(self) -> float:
        if self.ensemble is Ensemble.GAUSSIAN:
            return float(self.n)
        return 2.0 * self.n / self.q


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseSketch:
    """Immutable n x N sketch; the stored matrix is ``scale * pattern``."""

    params: EnsembleParams
    seed: SeedSpec
    scale: float
    indptr: np.ndarray | None = None
    indices: np.ndarray | None = None
    signs: np.ndarray | None = None
    dense: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("indptr", "indices", "signs", "dense"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _readonly(value))
        if self.dense is None and self.indptr is None:
            raise ValueError("a sketch needs either sparse or dense storage")

    @property
    def rows(self) -> int:
        return self.params.n

    @property
    def cols(self) -> int:
        return self.params.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    @property
    def nnz(self) -> int:
        if self.is_dense:
            return int(np.count_nonzero(self.dense))
        return int(self.indptr[-1])

    def column_nnz(self) -> np.ndarray:
        if self.is_dense:
            return np.count_nonzero(self.dense, axis=0)
        return np.diff(self.indptr)

    @cached_property
    def _csc(self) -> sp.csc_matrix:
        data = self.signs.astype(np.float64)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=self.shape)

    def to_scipy(self) -> sp.csc_matrix:
        """Scaled matrix as a scipy CSC matrix (sparse storage only)."""
        if self.is_dense:
            raise TypeError("dense sketch has no sparse representation")
        return self._csc * self.scale

    def to_dense(self) -> np.ndarray:
        if self.is_dense:
            return self.scale * self.dense
        return self.scale * self._csc.toarray()

    def pattern_block(self, j0: int, j1: int, dtype=np.float64) -> np.ndarray:
        """Unscaled columns ``j0:j1`` as a dense n x (j1 - j0) array."""
        if self.is_dense:
            return np.asarray(self.dense[:, j0:j1], dtype=dtype)
        lo, hi = self.indptr[j0], self.indptr[j1]
        block = np.zeros((self.rows, j1 - j0), dtype=dtype)
        cols = np.repeat(np.arange(j1 - j0), np.diff(self.indptr[j0:j1 + 1]))
        block[self.indices[lo:hi], cols] = self.signs[lo:hi]
        return block

    def __eq__(self, other):
        if not isinstance(other, SparseSketch):
            return NotImplemented
        if (self.params, self.seed, self.scale, self.is_dense) != (
            other.params,
            other.seed,
            other.scale,
            other.is_dense,
        ):
            return False
        if self.is_dense:
            return np.array_equal(self.dense, other.dense)
        return (
            np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.signs, other.signs)
        )

    __hash__ = None


def _chunk_columns(n: int, N: int):
    step = max(1, CHUNK_ENTRIES // n)
    for j0 in range(0, N, step):
        yield j0, min(N, j0 + step)


def _ternary_csc(params: EnsembleParams, seed: SeedSpec, scale: float) -> SparseSketch:
    # Uniforms are consumed column by column, so the pattern equals
    # sample_mu_y(seed, q, n*N) reshaped in column-major order.
    n, N, q = params.n, params.N, params.q
    gen = seed.generator()
    counts, indices, signs = [], [], []
    for j0, j1 in _chunk_columns(n, N):
        y = mu_y_from_uniform(gen.random((j1 - j0) * n), q).reshape(j1 - j0, n)
        col, row = np.nonzero(y)
        counts.append(np.count_nonzero(y, axis=1))
        indices.append(row.astype(np.int32))
        signs.append(y[col, row])
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(np.concatenate(counts), out=indptr[1:])
    return SparseSketch(params, seed, scale, indptr, np.concatenate(indices), np.concatenate(signs))


def build_hashing_like(params: EnsembleParams, seed: SeedSpec) -> SparseSketch:
    """s-hashing-like matrix: i.i.d. entries in {0, +-1/sqrt(s)}, P(+-1/sqrt(s)) = s/2n."""
    if params.ensemble is not Ensemble.HASHING_LIKE:
        raise DomainError(f"expected a hashing-like ensemble, got {params.ensemble.value}")
    return _ternary_csc(params, seed, 1.0 / math.sqrt(params.s))


def build_general_q(params: EnsembleParams, seed: SeedSpec) -> SparseSketch:
    """(1/sqrt(n)) X with X ~ mu_X(q), stored as (q_hat/sqrt(n)) * Y."""
    if params.ensemble is not Ensemble.GENERAL_Q:
        raise DomainError(f"expected a general-q ensemble, got {params.ensemble.value}")
    return _ternary_csc(params, seed, params.q_hat / math.sqrt(params.n))


def build_exact_hashing(params: EnsembleParams, seed: SeedSpec) -> SparseSketch:
    """s-hashing matrix: every column has exactly s entries +-1/sqrt(s).

    Row subsets come from Floyd's algorithm, run for a block of columns at a
    time; the signs of a block are drawn after its subsets.
    """
    if params.ensemble is not Ensemble.EXACT_HASHING:
        raise DomainError(f"expected an exact-hashing ensemble, got {params.ensemble.value}")
    n, N, s = params.n, params.N, int(params.s)
    gen = seed.generator()
    indices, signs = [], []
    for j0, j1 in _chunk_columns(n, N):
        m = j1 - j0
        member = np.zeros((m, n), dtype=bool)
        cols = np.arange(m)
        for j in range(n - s, n):
            t = gen.integers(0, j + 1, size=m)
            pick = np.where(member[cols, t], j, t)
            member[cols, pick] = True
        _, row = np.nonzero(member)
        indices.append(row.astype(np.int32))
        signs.append((2 * gen.integers(0, 2, size=m * s) - 1).astype(np.int8))
    indptr = np.arange(N + 1, dtype=np.int64) * s
    return SparseSketch(params, seed, 1.0 / math.sqrt(s), indptr, np.concatenate(indices), np.concatenate(signs))


def build_gaussian(n: int, N: int, seed: SeedSpec) -> SparseSketch:
    """Dense baseline with i.i.d. N(0, 1/n) entries."""
    params = EnsembleParams(Ensemble.GAUSSIAN, n, N)
    z = seed.generator().standard_normal(n * N).reshape(N, n).T
    return SparseSketch(params, seed, 1.0 / math.sqrt(n), dense=z)


def build(params: EnsembleParams, seed: SeedSpec) -> SparseSketch:
    if params.ensemble is Ensemble.HASHING_LIKE:
        return build_hashing_like(params, seed)
    if params.ensemble is Ensemble.EXACT_HASHING:
        return build_exact_hashing(params, seed)
    if params.ensemble is Ensemble.GENERAL_Q:
        return build_general_q(params, seed)
    return build_gaussian(params.n, params.N, seed)


def apply(sketch: SparseSketch, x) -> np.ndarray:
    """Compute H @ x in O(nnz) for sparse storage."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != sketch.cols:
        raise DomainError(f"vector has length {x.shape[0]}, sketch expects {sketch.cols}")
    if sketch.is_dense:
        return sketch.scale * (sketch.dense @ x)
    return sketch.scale * (sketch._csc @ x)


def gram(sketch: SparseSketch) -> np.ndarray:
    """Return the n x n matrix H H^T, i.e. A^T A for A = H^T.

    For ternary sketches the sign pattern's Gram matrix has integer entries
    bounded by N, which float32 products and float64 block sums represent
    exactly; the result is then scaled once.
    """
    n, N = sketch.shape
    if sketch.is_dense:
        return sketch.scale**2 * (sketch.dense @ sketch.dense.T)
    if N >= 1 << 24:
        raise DomainError("N too large for exact float32 block accumulation")
    g = np.zeros((n, n), dtype=np.float64)
    for j0, j1 in _chunk_columns(n, N):
        block = sketch.pattern_block(j0, j1, dtype=np.float32)
        g += block @ block.T
    return sketch.scale**2 * g


# --- binary format ------------------------------------------------------------

_HEADER = struct.Struct("<5sBQQddQQdQB")


class SketchFormatError(ValueError):
    """Malformed sketch stream; ``position`` is the byte offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


def serialize(sketch: SparseSketch) -> bytes:
    p = sketch.params
    nan = float("nan")
    s = nan if p.s is None else float(p.s)
    q = nan if p.q is None else float(p.q)
    storage = 1 if sketch.is_dense else 0
    nnz = p.n * p.N if sketch.is_dense else sketch.nnz
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            MAGIC,
            _ENSEMBLE_CODES[p.ensemble],
            p.n,
            p.N,
            s,
            q,
            sketch.seed.master_seed,
            sketch.seed.stream_id,
            sketch.scale,
            nnz,
            storage,
        )
    )
    if sketch.is_dense:
        buf.write(np.asarray(sketch.dense, dtype="<f8").tobytes(order="F"))
    else:
        buf.write(np.asarray(sketch.indptr, dtype="<u8").tobytes())
        buf.write(np.asarray(sketch.indices, dtype="<u4").tobytes())
        buf.write(np.asarray(sketch.signs, dtype="i1").tobytes())
    return buf.getvalue()


def deserialize(data: bytes) -> SparseSketch:
    if len(data) < _HEADER.size:
        raise SketchFormatError("truncated header", len(data))
    magic, code, n, N, s, q, master, stream, scale, nnz, storage = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SketchFormatError(f"bad magic {magic!r}", 0)
    try:
        ensemble = list(Ensemble)[code]
    except IndexError:
        raise SketchFormatError(f"unknown ensemble code {code}", 5) from None
    pos = _HEADER.size

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal pos
        size = count * np.dtype(dtype).itemsize
        if pos + size > len(data):
            raise SketchFormatError(f"truncated payload, needed {size} bytes", pos)
        out = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pos += size
        return out

    try:
        params = EnsembleParams(
            ensemble,
            n,
            N,
            None if math.isnan(s) else s,
            None if math.isnan(q) or ensemble is not Ensemble.GENERAL_Q else q,
        )
    except DomainError as exc:
        raise SketchFormatError(f"invalid parameters: {exc}", 6) from None
    seed = SeedSpec(master, stream)

    if storage == 1:
        dense = take(n * N, "<f8").reshape(N, n).T.astype(np.float64)
        sketch = SparseSketch(params, seed, scale, dense=dense)
    elif storage == 0:
        indptr = take(N + 1, "<u8").astype(np.int64)
        if indptr[0] != 0 or indptr[-1] != nnz or np.any(np.diff(indptr) < 0):
            raise SketchFormatError("inconsistent column pointers", _HEADER.size)
        idx_pos = pos
        indices = take(nnz, "<u4").astype(np.int32)
        if nnz and indices.max() >= n:
            raise SketchFormatError("row index out of range", idx_pos)
        sign_pos = pos
        signs = take(nnz, "i1").copy()
        if np.any((signs != 1) & (signs != -1)):
            raise SketchFormatError("sign byte not in {-1, +1}", sign_pos)
        sketch = SparseSketch(params, seed, scale, indptr, indices, signs)
    else:
        raise SketchFormatError(f"unknown storage kind {storage}", _HEADER.size - 1)
    if pos != len(data):
        raise SketchFormatError("trailing bytes after payload", pos)
    return sketch


def save(sketch: SparseSketch, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(sketch))


def load(path) -> SparseSketch:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
