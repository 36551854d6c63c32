"""Information recovery from sketches.

Every recovery is a contraction of the sketch against known matrix columns.
An attribute term of a depth-h object enters the overall sketch attenuated by
exactly w * 2^-(4h-3): 3(h-1) transparent halvings on the walk down, (h-1)
pair weights of 1/2, and the 1/2 in the attribute subsketch.  Recoveries
therefore scale by

    beta = 2^(4h-3) / w          (2/3 more, i.e. 3*2^(4h-4)/w, in
                                  signature mode, whose attr coefficient
                                  is 1/3 instead of 1/2)

and contract with the relevant module matrix.  Contractions are normalized
per column, est_j = beta * <col_j, s> / ||col_j||^2, which is the plain
beta * (R^T s)_j in expectation but immune to the per-column norm
fluctuation of the block-sparse family (sd ~ sqrt(b/(qd)), non-negligible at
desk dimensions).  For erased sketches the normalizer is the column's
surviving-prefix norm, which realizes the d/d' rescale exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from modsketch.block_random import AnyMatrix, ParameterError
from modsketch.calibrated import PREDICTED_ERROR_COEFF, delta_desync_fit
from modsketch.sketcher import MatrixRegistry, Sketch

__all__ = [
    "RecoveryError",
    "EmptyClassError",
    "ModeMismatchError",
    "RecoveryReport",
    "beta_factor",
    "predicted_error",
    "signal_threshold",
    "recover_attributes_unique",
    "PathStep",
    "recover_attributes_by_path",
    "recover_frequency",
    "recover_summed_attributes",
    "recover_mean_attributes",
    "recover_signature",
    "recover_from_prefix",
    "sketch_similarity",
    "report_csv_header",
    "report_csv_row",
]


class RecoveryError(ValueError):
    pass


class EmptyClassError(RecoveryError):
    """Mean attributes requested for a module whose recovered count is zero."""


class ModeMismatchError(RecoveryError):
    """Signature recovery on a sketch built without the signature extension."""


@dataclass
class RecoveryReport:
    """Outcome of one recovery query.

    ``estimate`` is a d-vector for vector recoveries and a float for
    frequency; ``predicted_error`` is the calibrated noise bound for the
    query (see :func:`predicted_error`).
    """

    kind: str
    estimate: np.ndarray | float
    beta: float
    module: str
    depth: int
    weight: float
    erased_prefix: int
    d: int
    predicted_error: float
    path: tuple[int, ...] | None = None
    rounded: int | None = None
    low_confidence: bool = False
    extras: dict = field(default_factory=dict)


def beta_factor(h: int, w: float, signature_mode: bool = False) -> float:
    """Inverse of the depth-h attribute attenuation, 2^(4h-3)/w."""
    if h < 2:
        raise RecoveryError(f"recoverable objects sit at depth >= 2, got {h}")
    if w <= 0:
        raise RecoveryError("effective weight must be positive")
    coeff = 3.0 if signature_mode else 2.0
    return coeff * float(2 ** (4 * h - 4)) / w


def predicted_error(
    h: int, w: float, registry: MatrixRegistry, erased_prefix: int | None = None
) -> float:
    """Calibrated noise scale for a depth-h, weight-w recovery.

    The form mirrors the analysis bound O(2^{3h} h delta / w): the fitted
    desynchronization deviation, amplified by beta and by the number of
    accumulation steps h, inflated by sqrt(d/d') on an erased prefix.
    """
    p = registry.params
    delta = delta_desync_fit(p.d, p.b, p.n_cap)
    scale = beta_factor(h, w) * h * delta * PREDICTED_ERROR_COEFF
    if erased_prefix is not None and erased_prefix < p.d:
        scale *= math.sqrt(p.d / erased_prefix)
    return scale


def signal_threshold(h: int, w: float, registry: MatrixRegistry, erased_prefix=None) -> float:
    """Default decision level for "is this coordinate real signal": 3x the
    calibrated query noise."""
    return 3.0 * predicted_error(h, w, registry, erased_prefix)


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------


def _column_contract(mat: AnyMatrix, sk: Sketch) -> np.ndarray:
    """Per-column normalized transpose contraction of the sketch."""
    num = mat.rmatvec(sk.values)
    if sk.erased_prefix < sk.d:
        den = mat.prefix_col_sq_norms(sk.erased_prefix)
    else:
        den = mat.col_sq_norms
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 1e-12)
    return out


def _check_erasure(sk: Sketch, registry: MatrixRegistry) -> None:
    if sk.erased_prefix < registry.params.b:
        raise RecoveryError(
            f"surviving prefix {sk.erased_prefix} shorter than one block ({registry.params.b})"
        )


def recover_attributes_unique(
    sk: Sketch,
    module: str,
    h: int,
    w: float,
    registry: MatrixRegistry,
    signature_mode: bool = False,
) -> RecoveryReport:
    """Estimate the attribute vector of the module's single object.

    The caller asserts uniqueness (several objects of the module would
    superpose); the estimate is beta * normalized R_{M,1}^T contraction.
    """
    _check_erasure(sk, registry)
    beta = beta_factor(h, w, signature_mode)
    est = beta * _column_contract(registry.module_matrix(module, 1), sk)
    return RecoveryReport(
        kind="attributes_unique",
        estimate=est,
        beta=beta,
        module=module,
        depth=h,
        weight=w,
        erased_prefix=sk.erased_prefix,
        d=sk.d,
        predicted_error=predicted_error(h, w, registry, sk.erased_prefix),
    )


@dataclass(frozen=True)
class PathStep:
    """One descent: which input position was taken and who produced the child."""

    tuple_position: int
    module: str


def recover_attributes_by_path(
    sk: Sketch,
    path: list[PathStep],
    registry: MatrixRegistry,
    w: float,
    signature_mode: bool = False,
) -> RecoveryReport:
    """Isolate one object by its input-index path, even under module reuse.

    Applies the plain transposes of the matrices along the walk (tuple
    position, module transparent, pair position) outermost first, then
    contracts with the target module's attribute matrix.  Plain (not
    transparent) transposes are deliberate: a transparent product would let
    through the other objects of the same module.
    """
    if not path:
        raise RecoveryError("path must contain at least one step")
    _check_erasure(sk, registry)
    h = len(path) + 1
    v = sk.values
    rescale = 1.0
    if sk.erased_prefix < sk.d:
        # the first transpose sees only the surviving prefix
        rescale = sk.d / sk.erased_prefix
    for i, step in enumerate(path):
        is_last = i == len(path) - 1
        v = registry.tuple_matrix(step.tuple_position, 2 * i + 1).rmatvec(v)
        v = registry.module_matrix(step.module, 0).rmatvec(v)
        pair_pos = 1 if is_last else 2
        v = registry.tuple_matrix(pair_pos, 2 * i + 2).rmatvec(v)
    target = path[-1].module
    beta = beta_factor(h, w, signature_mode)
    dense = Sketch(values=v, kind=sk.kind, depth=sk.depth, erased_prefix=len(v))
    est = rescale * beta * _column_contract(registry.module_matrix(target, 1), dense)
    return RecoveryReport(
        kind="attributes_by_path",
        estimate=est,
        beta=beta,
        module=target,
        depth=h,
        weight=w,
        erased_prefix=sk.erased_prefix,
        d=sk.d,
        predicted_error=predicted_error(h, w, registry, sk.erased_prefix),
        path=tuple(s.tuple_position for s in path),
    )


def recover_frequency(
    sk: Sketch,
    module: str,
    h: int,
    w_star: float,
    registry: MatrixRegistry,
    signature_mode: bool = False,
    beta: float | None = None,
) -> RecoveryReport:
    """Estimate how many objects the module produced (all at weight w_star).

    Every object contributes one unit through the e_1 slot of its attribute
    subsketch, so the first coordinate of the R_{M,2} contraction counts
    them; the count is exact whenever the noise stays below 1/2.  Pass
    ``beta`` to override the depth scaling (the flat prototype uses 4/w).
    """
    _check_erasure(sk, registry)
    b = beta if beta is not None else beta_factor(h, w_star, signature_mode)
    est = b * _column_contract(registry.module_matrix(module, 2), sk)
    real = float(est[0])
    return RecoveryReport(
        kind="frequency",
        estimate=real,
        beta=b,
        module=module,
        depth=h,
        weight=w_star,
        erased_prefix=sk.erased_prefix,
        d=sk.d,
        predicted_error=predicted_error(h, w_star, registry, sk.erased_prefix),
        rounded=int(round(real)),
        low_confidence=abs(real - round(real)) > 0.4,
    )


def recover_summed_attributes(
    sk: Sketch,
    module: str,
    h: int,
    w_star: float,
    registry: MatrixRegistry,
    signature_mode: bool = False,
) -> RecoveryReport:
    """Estimate the sum of attribute vectors over the module's objects."""
    report = recover_attributes_unique(sk, module, h, w_star, registry, signature_mode)
    report.kind = "summed_attributes"
    return report


def recover_mean_attributes(
    sk: Sketch,
    module: str,
    h: int,
    w_star: float,
    registry: MatrixRegistry,
    signature_mode: bool = False,
) -> RecoveryReport:
    """Summed attributes divided by the rounded recovered count."""
    freq = recover_frequency(sk, module, h, w_star, registry, signature_mode)
    count = freq.rounded or 0
    if count <= 0:
        raise EmptyClassError(f"module {module!r} has recovered count {count}")
    summed = recover_summed_attributes(sk, module, h, w_star, registry, signature_mode)
    summed.kind = "mean_attributes"
    summed.estimate = summed.estimate / count
    summed.rounded = count
    summed.low_confidence = freq.low_confidence
    return summed


def recover_signature(
    sk: Sketch,
    module: str,
    h: int,
    w: float,
    registry: MatrixRegistry,
) -> RecoveryReport:
    """Recover an object's sparse signature and decide whether it is clean.

    Signatures are (log2 n_cap)-sparse with entries 1/sqrt(sparsity);
    recovery quantizes at the half-gap, and reports a match only when the
    residual stays below it, so a too-noisy sketch yields no-match rather
    than a wrong signature.
    """
    if not getattr(sk, "signature_mode", False):
        raise ModeMismatchError("sketch was not built with the signature extension")
    _check_erasure(sk, registry)
    beta = beta_factor(h, w, signature_mode=True)
    est = beta * _column_contract(registry.module_matrix(module, 3), sk)
    n_ones = max(1, int(np.ceil(np.log2(max(2, registry.params.n_cap)))))
    level = 1.0 / math.sqrt(n_ones)
    quantized = np.where(est >= level / 2.0, level, 0.0)
    residual = float(np.max(np.abs(est - quantized)))
    matched = residual < level / 2.0
    return RecoveryReport(
        kind="signature",
        estimate=quantized,
        beta=beta,
        module=module,
        depth=h,
        weight=w,
        erased_prefix=sk.erased_prefix,
        d=sk.d,
        predicted_error=predicted_error(h, w, registry, sk.erased_prefix),
        extras={"residual": residual, "matched": matched, "raw": est, "level": level},
    )


def recover_from_prefix(sk: Sketch, query: str, registry: MatrixRegistry, **kwargs) -> RecoveryReport:
    """Run any recovery against an erased sketch.

    All recoveries already contract only over the surviving prefix and
    renormalize by the prefix column norms, so this is a thin dispatcher
    that additionally validates the prefix length.
    """
    _check_erasure(sk, registry)
    dispatch = {
        "attributes_unique": recover_attributes_unique,
        "attributes_by_path": recover_attributes_by_path,
        "frequency": recover_frequency,
        "summed_attributes": recover_summed_attributes,
        "mean_attributes": recover_mean_attributes,
        "signature": recover_signature,
    }
    if query not in dispatch:
        raise RecoveryError(f"unknown recovery query {query!r}")
    return dispatch[query](sk, registry=registry, **kwargs)


def sketch_similarity(a: Sketch, b: Sketch) -> float:
    """Plain inner product; unrelated sketches sit near zero, shared
    same-module objects push it up."""
    if a.d != b.d:
        raise ParameterError(f"sketch dimensions differ: {a.d} vs {b.d}")
    if a.erased_prefix != b.erased_prefix:
        raise ParameterError("sketches have different surviving prefixes")
    return float(a.values @ b.values)


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def report_csv_header() -> str:
    return "kind,module,depth,weight,d,d_prime,seed,linf_error,predicted_error"


def report_csv_row(report: RecoveryReport, seed: str, truth: np.ndarray | float | None = None) -> str:
    err = ""
    if truth is not None:
        if isinstance(report.estimate, np.ndarray):
            err = repr(float(np.max(np.abs(report.estimate - truth))))
        else:
            err = repr(abs(float(report.estimate) - float(truth)))
    return (
        f"{report.kind},{report.module},{report.depth},{float(report.weight)!r},"
        f"{report.d},{report.erased_prefix},{seed},{err},{float(report.predicted_error)!r}"
    )
