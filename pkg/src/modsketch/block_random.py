"""Block-sparse signed random matrices and their measurable noise behavior.

A matrix from the family ``D(b, q, d)`` is d x d and column-block structured:
each column is split into d/b blocks of b entries, each block is independently
active with probability q, and an active block carries three sub-blocks of
b/3 entries each, all of magnitude 1/sqrt(d*q):

* a per-column "random string" (shared by all blocks of the column),
* a "column signature" encoding the column index and two parity bits,
* a "matrix signature" shared by every active block of the whole matrix.

Each sub-block is multiplied by its own per-(block, column) sign flip.  The
signatures are what make the family *identifiable*: sketches built from these
matrices can later be decomposed without knowing the matrices, because every
strong enough coefficient leaves legible signed block patterns behind
(see :mod:`modsketch.dictlearn`).

Columns are unit norm in expectation, and the family behaves like a noisy
rotation: ``<Rx, Rx>`` concentrates on ``<x, x>`` (isometry) and ``<Rx, y>``
concentrates on zero for independent x, y (desynchronization).
:func:`measure_noise_profile` measures both deviations empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from modsketch._seeding import derive_rng

__all__ = [
    "ParameterError",
    "DimensionMismatchError",
    "CorruptCodewordError",
    "BlockParams",
    "auto_params",
    "corollary_q",
    "encode_column_signature",
    "decode_column_signature",
    "BlockRandomMatrix",
    "OrthonormalMatrix",
    "IdentityMatrix",
    "sample_matrix",
    "sample_orthonormal",
    "MatrixExpr",
    "apply",
    "NoiseProfile",
    "measure_noise_profile",
]


class ParameterError(ValueError):
    """Invalid block parameters or operation arguments."""


class DimensionMismatchError(ValueError):
    """Vector/matrix dimensions do not agree."""


class CorruptCodewordError(ValueError):
    """A column-signature codeword decoded to an out-of-range index."""


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _ceil_log2(n: int) -> int:
    if n <= 1:
        return 0
    return int(math.ceil(math.log2(n)))


@dataclass(frozen=True)
class BlockParams:
    """Parameters of the block-sparse matrix family.

    b must be a multiple of 3 and large enough that a third of a block can
    hold the column-index code: b >= 3 * max(ceil(log2 n_cap),
    ceil(log2 d) + 3).  Matrix sampling additionally requires d to be a
    multiple of b (the signature code alone does not); use
    :func:`auto_params` to round a requested dimension up to the next
    aligned value.
    """

    b: int
    q: float
    d: int
    n_cap: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ParameterError(f"d must be positive, got {self.d}")
        if self.n_cap < 2:
            raise ParameterError(f"n_cap must be >= 2, got {self.n_cap}")
        if self.b % 3 != 0:
            raise ParameterError(f"b must be a multiple of 3, got {self.b}")
        floor = 3 * max(_ceil_log2(self.n_cap), _ceil_log2(self.d) + 3)
        if self.b < floor:
            raise ParameterError(
                f"b={self.b} too small for d={self.d}, n_cap={self.n_cap}; need b >= {floor}"
            )
        if not 0.0 <= self.q <= 1.0:
            raise ParameterError(f"q must lie in [0, 1], got {self.q}")

    @property
    def sub_block(self) -> int:
        """Entries per sub-block (b/3)."""
        return self.b // 3

    @property
    def index_bits(self) -> int:
        """Bits used for the column index inside the signature code."""
        return _ceil_log2(self.d)

    @property
    def n_blocks(self) -> int:
        if self.d % self.b != 0:
            raise ParameterError(
                f"d={self.d} is not a multiple of b={self.b}; matrix layout undefined"
            )
        return self.d // self.b

    @property
    def entry_scale(self) -> float:
        """Magnitude of every nonzero entry, 1/sqrt(d*q)."""
        if self.q <= 0.0:
            raise ParameterError("entry scale undefined for q = 0")
        return 1.0 / math.sqrt(self.d * self.q)

    def require_alignment(self) -> None:
        self.n_blocks  # raises if misaligned


def corollary_q(d: int, n_cap: int) -> float:
    """Default activation probability sqrt((log2 N + log2 d) * log2 N / d).

    This is the sparsity at which the family's isometry/desynchronization
    deviation scales like ~1/sqrt(d) (up to log factors); capped at 1.
    """
    ln_n = max(1.0, math.log2(n_cap))
    ln_d = max(1.0, math.log2(d))
    return min(1.0, math.sqrt((ln_n + ln_d) * ln_n / d))


def auto_params(d_request: int, n_cap: int, q: float | None = None) -> BlockParams:
    """Build aligned parameters for a requested dimension.

    b is the smallest admissible block size and d is rounded *up* to the next
    multiple of b; because b itself depends on ceil(log2 d), the two are
    iterated to a fixpoint.  q defaults to :func:`corollary_q` of the final
    dimension.
    """
    if d_request < 1:
        raise ParameterError("requested dimension must be positive")
    d = d_request
    for _ in range(8):
        b = 3 * max(_ceil_log2(n_cap), _ceil_log2(d) + 3)
        d_aligned = ((d + b - 1) // b) * b
        if d_aligned == d:
            break
        d = d_aligned
    else:  # pragma: no cover - the fixpoint stabilizes in <= 3 rounds
        raise ParameterError(f"could not align d={d_request} to a block size")
    q_val = corollary_q(d, n_cap) if q is None else q
    return BlockParams(b=b, q=q_val, d=d, n_cap=n_cap)


# ---------------------------------------------------------------------------
# Column-signature code
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _index_code_table(d: int, sub_block: int) -> np.ndarray:
    """Unscaled +/-1 codewords for all columns of a d-dimensional matrix.

    Layout per row: a leading +1, the MSB-first binary of j-1 mapped
    0 -> -1 / 1 -> +1, two +1 placeholders for the parity bits, and +1
    padding out to b/3 entries.
    """
    t = _ceil_log2(d)
    if sub_block < t + 3:
        raise ParameterError(f"sub-block of {sub_block} cannot hold {t} index bits + 3")
    table = np.ones((d, sub_block), dtype=np.int8)
    j = np.arange(d, dtype=np.int64)
    for k in range(t):
        bits = (j >> (t - 1 - k)) & 1
        table[:, 1 + k] = 2 * bits.astype(np.int8) - 1
    return table


def encode_column_signature(j: int, b_m: int, b_s: int, params: BlockParams) -> np.ndarray:
    """Encode column index j (1-based) and two parity bits as a sub-block.

    Returns a (b/3)-vector over {+-1/sqrt(d*q)}: leading +1, MSB-first sign
    bits of j-1, then b_m, b_s, then +1 padding, all scaled.
    """
    if not 1 <= j <= params.d:
        raise ParameterError(f"column index {j} outside [1, {params.d}]")
    if b_m not in (-1, 1) or b_s not in (-1, 1):
        raise ParameterError("parity bits must be +1 or -1")
    t = params.index_bits
    code = _index_code_table(params.d, params.sub_block)[j - 1].astype(np.float64)
    code[t + 1] = b_m
    code[t + 2] = b_s
    return code * params.entry_scale


def decode_column_signature(z: np.ndarray, params: BlockParams) -> tuple[int, int]:
    """Invert :func:`encode_column_signature` up to global sign.

    The input must already lie on the scaled hypercube (callers round first).
    Returns (column index, b_m).  A decoded index beyond d signals a
    corrupted codeword.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.sub_block,):
        raise DimensionMismatchError(
            f"codeword length {z.shape} != sub-block {params.sub_block}"
        )
    if z[0] < 0:
        z = -z
    t = params.index_bits
    bits = (z[1 : t + 1] > 0).astype(np.int64)
    j = 0
    for bit in bits:
        j = (j << 1) | int(bit)
    j += 1
    if j > params.d:
        raise CorruptCodewordError(f"decoded column index {j} exceeds d={params.d}")
    sign = 1 if z[t + 1] > 0 else -1
    return j, sign


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------


@dataclass
class BlockRandomMatrix:
    """A materialized draw from D(b, q, d) in compressed block storage.

    ``flips`` stacks the per-(block, column) sign triples in the order
    (f_s, f_c, f_m); ``eta`` marks active blocks.  The scipy CSC form is what
    actually multiplies vectors; the structured fields exist so that tests
    and the dictionary learner can inspect ground truth, and so the matrix is
    re-derivable bit-exactly from ``seed_key``.
    """

    params: BlockParams
    seed_key: str
    sigma_m: np.ndarray  # (b/3,) scaled floats
    sigma_s: np.ndarray  # (d, b/3) scaled floats
    flips: np.ndarray  # (3, n_blocks, d) int8
    eta: np.ndarray  # (n_blocks, d) bool
    csc: sp.csc_matrix = field(repr=False)
    col_sq_norms: np.ndarray = field(repr=False)  # (d,)

    @property
    def d(self) -> int:
        return self.params.d

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csc @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return self.csc.T @ x

    def column(self, j: int) -> np.ndarray:
        """Dense column j (1-based)."""
        return np.asarray(self.csc[:, j - 1].todense()).ravel()

    def active_blocks(self, j: int) -> np.ndarray:
        """Indices of active blocks of column j (1-based), 0-based blocks."""
        return np.nonzero(self.eta[:, j - 1])[0]

    def prefix_col_sq_norms(self, d_prime: int) -> np.ndarray:
        """Per-column squared norms restricted to the first d_prime rows."""
        contrib = (self.csc.data**2) * (self.csc.indices < d_prime)
        running = np.concatenate([[0.0], np.cumsum(contrib)])
        return np.diff(running[self.csc.indptr])


@dataclass
class OrthonormalMatrix:
    """Haar-random rotation; the idealized stand-in used by prototype oracles."""

    dense: np.ndarray
    seed_key: str

    @property
    def d(self) -> int:
        return self.dense.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.dense @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return self.dense.T @ x

    def column(self, j: int) -> np.ndarray:
        return self.dense[:, j - 1].copy()

    @property
    def col_sq_norms(self) -> np.ndarray:
        return np.ones(self.d)

    def prefix_col_sq_norms(self, d_prime: int) -> np.ndarray:
        return np.sum(self.dense[:d_prime, :] ** 2, axis=0)


@dataclass
class IdentityMatrix:
    """Test-mode matrix: R = I, so transparent wrappers pass vectors through."""

    dim: int
    seed_key: str = "identity"

    @property
    def d(self) -> int:
        return self.dim

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).copy()

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).copy()

    def column(self, j: int) -> np.ndarray:
        col = np.zeros(self.dim)
        col[j - 1] = 1.0
        return col

    @property
    def col_sq_norms(self) -> np.ndarray:
        return np.ones(self.dim)

    def prefix_col_sq_norms(self, d_prime: int) -> np.ndarray:
        return (np.arange(self.dim) < d_prime).astype(np.float64)


AnyMatrix = BlockRandomMatrix | OrthonormalMatrix | IdentityMatrix


def sample_matrix(params: BlockParams, seed_key: str) -> BlockRandomMatrix:
    """Draw a matrix from D(b, q, d), deterministically given seed_key.

    Per column j: a fresh random-string sub-block; per (block i, column j):
    three Rademacher flips (f_s, f_c, f_m), parity bits f'_m = f_m *
    sign(sigma_m[1]) and f'_s = f_s * sign(sigma_s_j[1]) baked into the
    column signature Enc(j, f'_m, f'_s), and a Bernoulli(q) activation.  The
    active block of the column is f_s*sigma_s_j || f_c*sigma_c || f_m*sigma_m.
    """
    params.require_alignment()
    d, b, q = params.d, params.b, params.q
    m = params.sub_block
    n_blocks = params.n_blocks
    scale = params.entry_scale if q > 0 else 0.0

    rng = derive_rng(0, "block-matrix", seed_key, b, q, d)
    # Draw order is part of the format: sigma_m, sigma_s, flips, eta.
    sigma_m = (rng.integers(0, 2, size=m, dtype=np.int8) * 2 - 1).astype(np.float64) * scale
    sigma_s = (rng.integers(0, 2, size=(d, m), dtype=np.int8) * 2 - 1).astype(np.float64) * scale
    flips = rng.integers(0, 2, size=(3, n_blocks, d), dtype=np.int8)
    flips += flips
    flips -= 1
    eta = rng.random(size=(n_blocks, d)) < q

    # Assemble active blocks column-major so the CSC arrays come out sorted.
    ja, ia = np.nonzero(eta.T)
    npair = len(ja)
    t = params.index_bits

    if npair:
        fs = flips[0, ia, ja].astype(np.float64)
        fc = flips[1, ia, ja].astype(np.float64)
        fm = flips[2, ia, ja].astype(np.float64)
        sign_m0 = 1.0 if sigma_m[0] > 0 else -1.0
        sign_s0 = np.where(sigma_s[ja, 0] > 0, 1.0, -1.0)

        enc = _index_code_table(d, m)[ja].astype(np.float64)
        enc[:, t + 1] = fm * sign_m0
        enc[:, t + 2] = fs * sign_s0
        enc *= scale

        block = np.empty((npair, b))
        block[:, :m] = fs[:, None] * sigma_s[ja]
        block[:, m : 2 * m] = fc[:, None] * enc
        block[:, 2 * m :] = fm[:, None] * sigma_m[None, :]

        data = block.ravel()
        indices = (
            ia[:, None].astype(np.int32) * b + np.arange(b, dtype=np.int32)[None, :]
        ).ravel()
    else:
        data = np.empty(0)
        indices = np.empty(0, dtype=np.int32)

    counts = eta.sum(axis=0).astype(np.int64) * b
    indptr = np.concatenate([[0], np.cumsum(counts)])
    csc = sp.csc_matrix((data, indices, indptr), shape=(d, d))
    col_sq = eta.sum(axis=0).astype(np.float64) * b * (scale**2)

    return BlockRandomMatrix(
        params=params,
        seed_key=seed_key,
        sigma_m=sigma_m,
        sigma_s=sigma_s,
        flips=flips,
        eta=eta,
        csc=csc,
        col_sq_norms=col_sq,
    )


def sample_orthonormal(d: int, seed_key: str) -> OrthonormalMatrix:
    """Haar-random d x d rotation via QR of a Gaussian draw."""
    rng = derive_rng(0, "orthonormal-matrix", seed_key, d)
    g = rng.standard_normal((d, d))
    qmat, r = np.linalg.qr(g)
    qmat = qmat * np.sign(np.diag(r))[None, :]
    return OrthonormalMatrix(dense=qmat, seed_key=seed_key)


# ---------------------------------------------------------------------------
# Matrix expressions
# ---------------------------------------------------------------------------

FactorKind = Literal["plain", "transpose", "transparent", "transparent_transpose", "identity"]


@dataclass(frozen=True)
class _Factor:
    kind: FactorKind
    mat: AnyMatrix | None

    @property
    def d(self) -> int:
        assert self.mat is not None
        return self.mat.d


@dataclass
class MatrixExpr:
    """An ordered product of matrix factors, applied right-to-left.

    Transparent factors compute (x + Rx)/2, preserving an unrotated copy of
    the input alongside the rotated one.
    """

    factors: list[_Factor]

    @staticmethod
    def of(*specs: tuple[FactorKind, AnyMatrix | None]) -> "MatrixExpr":
        return MatrixExpr([_Factor(kind, mat) for kind, mat in specs])

    @staticmethod
    def plain(mat: AnyMatrix) -> "MatrixExpr":
        return MatrixExpr.of(("plain", mat))

    @staticmethod
    def transparent(mat: AnyMatrix) -> "MatrixExpr":
        return MatrixExpr.of(("transparent", mat))

    def then(self, kind: FactorKind, mat: AnyMatrix | None = None) -> "MatrixExpr":
        """Return the expression with one more factor applied *after* this one."""
        return MatrixExpr([_Factor(kind, mat)] + self.factors)

    @property
    def d(self) -> int:
        for f in self.factors:
            if f.mat is not None:
                return f.d
        raise ParameterError("expression has no dimensioned factor")


def _apply_factor(factor: _Factor, x: np.ndarray) -> np.ndarray:
    if factor.kind == "identity":
        return x
    mat = factor.mat
    assert mat is not None
    if x.shape[0] != mat.d:
        raise DimensionMismatchError(f"vector of length {x.shape[0]} vs matrix d={mat.d}")
    if factor.kind == "plain":
        return mat.matvec(x)
    if factor.kind == "transpose":
        return mat.rmatvec(x)
    if factor.kind == "transparent":
        return (x + mat.matvec(x)) * 0.5
    if factor.kind == "transparent_transpose":
        return (x + mat.rmatvec(x)) * 0.5
    raise ParameterError(f"unknown factor kind {factor.kind}")


def apply(expr: MatrixExpr, x: np.ndarray) -> np.ndarray:
    """Evaluate the factor chain right-to-left on x."""
    v = np.asarray(x, dtype=np.float64)
    for factor in reversed(expr.factors):
        v = _apply_factor(factor, v)
    return v


# ---------------------------------------------------------------------------
# Noise measurement
# ---------------------------------------------------------------------------


@dataclass
class NoiseProfile:
    """Empirical deviation of an expression family from an exact rotation.

    delta_* are high quantiles of |<Ex, Ex> - alpha <x, x>| (isometry) and
    |<E_L x, E_R y> - alpha <x, y>| (desynchronization) over fresh matrix
    draws; alpha is the fitted scale/leak factor.
    """

    delta_iso: float
    delta_desync: float
    alpha: float
    trials: int
    quantile: float


TemplateSpec = Sequence[FactorKind]


def _build_expr(
    spec: TemplateSpec, params: BlockParams, trial: int, side: str, master_seed: int
) -> MatrixExpr:
    factors: list[_Factor] = []
    for slot, kind in enumerate(spec):
        if kind == "identity":
            factors.append(_Factor("identity", None))
            continue
        key = f"noise:{master_seed}:{trial}:{side}:{slot}"
        factors.append(_Factor(kind, sample_matrix(params, key)))
    return MatrixExpr(factors)


def measure_noise_profile(
    expr_family: TemplateSpec,
    mode: Literal["isometry", "desynchronization", "both"],
    trials: int,
    params: BlockParams,
    quantile: float = 0.99,
    master_seed: int = 0,
    right_family: TemplateSpec | None = None,
    pairs_per_trial: int = 1,
) -> NoiseProfile:
    """Measure the noise profile of an expression template.

    ``expr_family`` names the factor kinds of fresh independent draws, e.g.
    ``("plain",)`` for a single matrix, ``("transparent",)`` for (I+R)/2, or
    ``("plain", "plain")`` for a product of two draws.  In desynchronization
    mode, ``right_family`` (default: none) is applied to the second test
    vector, so independent-matrices-on-both-sides setups are expressible.

    Each trial draws fresh matrices; ``pairs_per_trial`` fresh unit test
    vector pairs are derived per trial seed (more pairs stabilize the
    quantile estimate without extra matrix draws).  alpha is fitted by least
    squares of the raw statistic on the reference inner product, and delta
    is the empirical ``quantile`` of the residual.
    """
    if trials < 30:
        raise ParameterError("need at least 30 trials for a stable quantile")
    if not 0.0 < quantile < 1.0:
        raise ParameterError("quantile must lie strictly inside (0, 1)")
    if pairs_per_trial < 1:
        raise ParameterError("need at least one vector pair per trial")
    d = params.d

    n_samples = trials * pairs_per_trial
    iso_raw = np.empty(n_samples)
    des_raw = np.empty(n_samples)
    des_ip = np.empty(n_samples)
    want_iso = mode in ("isometry", "both")
    want_des = mode in ("desynchronization", "both")

    pos = 0
    for trial in range(trials):
        rng = derive_rng(master_seed, "noise-vectors", trial)
        expr = _build_expr(expr_family, params, trial, "L", master_seed)
        expr_r = (
            _build_expr(right_family, params, trial, "R", master_seed)
            if right_family is not None
            else None
        )
        for _pair in range(pairs_per_trial):
            x = rng.standard_normal(d)
            x /= np.linalg.norm(x)
            ex = apply(expr, x)
            if want_iso:
                iso_raw[pos] = float(ex @ ex)
            if want_des:
                # Correlated second vector so the leak factor alpha is identifiable.
                rho = rng.uniform(-0.8, 0.8)
                perp = rng.standard_normal(d)
                perp -= (perp @ x) * x
                perp /= np.linalg.norm(perp)
                y = rho * x + math.sqrt(1.0 - rho * rho) * perp
                y_side = apply(expr_r, y) if expr_r is not None else y
                des_raw[pos] = float(ex @ y_side)
                des_ip[pos] = rho
            pos += 1

    def fit(raw: np.ndarray, ip: np.ndarray) -> tuple[float, float]:
        denom = float(ip @ ip)
        alpha = float(raw @ ip) / denom if denom > 1e-12 else 0.0
        resid = np.abs(raw - alpha * ip)
        return alpha, float(np.quantile(resid, quantile))

    alpha_i = delta_i = 0.0
    alpha_d = delta_d = 0.0
    if want_iso:
        alpha_i, delta_i = fit(iso_raw, np.ones(n_samples))
    if want_des:
        alpha_d, delta_d = fit(des_raw, des_ip)

    alpha = alpha_i if want_iso else alpha_d
    return NoiseProfile(
        delta_iso=delta_i,
        delta_desync=delta_d,
        alpha=alpha,
        trials=trials,
        quantile=quantile,
    )
