"""The recursive sketch construction.

Sketching walks the network from the output pseudo-object down.  The
building block is the tuple sketch

    tuple(s_1..s_k; w_1..w_k) = sum_i w_i * (I + R_i)/2 * s_i

whose transparent factors pass every child through both unrotated and
rotated, so information can later be retrieved either way.  Each object theta
contributes

    attr(theta)   = 1/2 R_{M,1} x_theta + 1/2 R_{M,2} e_1
    input(theta)  = tuple(object(child_1), ..., object(child_k); w_1..w_k)
    object(theta) = (I + R_{M,0})/2 * tuple(attr, input; 1/2, 1/2)

and the overall sketch is the *input* subsketch of the output pseudo-object
(not its object sketch, which would inject a shared R_{out,2} e_1 term into
every sketch and ruin dissimilarity of unrelated inputs).

Tuple matrices are drawn per (position, tuple depth), where tuple depth
starts at 1 for the overall sketch and increases every time a tuple sketch
is taken; module matrices are drawn per (module, slot).  All draws are
deterministic functions of the registry's master seed.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from modsketch._seeding import derive_rng
from modsketch.block_random import (
    AnyMatrix,
    BlockParams,
    IdentityMatrix,
    ParameterError,
    sample_matrix,
    sample_orthonormal,
)
from modsketch.calibrated import delta_iso_fit
from modsketch.network import ModularNetwork, ObjectNode

__all__ = [
    "Sketch",
    "MatrixRegistry",
    "DimensionFloorError",
    "PrototypeScopeError",
    "tuple_sketch",
    "attribute_subsketch",
    "input_subsketch",
    "object_sketch",
    "overall_sketch",
    "prototype_a_overall",
    "prototype_b_overall",
    "erase_to_prefix",
    "object_signature",
    "save_sketch",
    "load_sketch",
    "export_sketch_csv",
]

SketchKind = Literal["tuple", "attribute", "input", "object", "overall"]
RegistryMode = Literal["block-random", "orthonormal", "identity"]


class DimensionFloorError(ValueError):
    """Sketch dimension too small for the requested recursion depth."""


class PrototypeScopeError(ValueError):
    """Prototype sketches only cover networks one level below the output."""


@dataclass
class Sketch:
    """A d-vector with provenance: what it summarizes and how much survives."""

    values: np.ndarray
    kind: SketchKind
    depth: int
    erased_prefix: int
    signature_mode: bool = False

    @property
    def d(self) -> int:
        return len(self.values)

    def copy_with(self, values: np.ndarray) -> "Sketch":
        return replace(self, values=values)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


class MatrixRegistry:
    """Deterministic, lazily sampled matrix store.

    Knowing (master_seed, params, mode) is knowing every matrix: each key
    maps to exactly one matrix, sampled on first use and cached.  Keys
    serialize as ``m:<module>:<slot>`` and ``t:<index>:<depth>``.
    """

    def __init__(
        self,
        params: BlockParams,
        master_seed: int,
        mode: RegistryMode = "block-random",
        allow_high_noise: bool = False,
    ) -> None:
        params.require_alignment()
        self.params = params
        self.master_seed = master_seed
        self.mode = mode
        self.allow_high_noise = allow_high_noise
        self._cache: dict[str, AnyMatrix] = {}
        self._lock = threading.Lock()

    @property
    def d(self) -> int:
        return self.params.d

    def seed_fingerprint(self) -> str:
        raw = f"{self.master_seed}|{self.mode}|{self.params.b}|{self.params.q}|{self.params.d}"
        return hashlib.blake2b(raw.encode(), digest_size=8).hexdigest()

    def check_dimension_floor(self, recursion_budget: int) -> None:
        """Refuse dimensions whose fitted noise exceeds 1/(4H).

        The recovery guarantees assume the per-matrix deviation delta is at
        most 1/(4H); at desk-scale dimensions this usually fails, which is
        exactly what the override flag acknowledges.
        """
        if self.mode != "block-random" or self.allow_high_noise:
            return
        delta = delta_iso_fit(self.params.d, self.params.b, self.params.n_cap)
        bound = 1.0 / (4.0 * recursion_budget)
        if delta > bound:
            raise DimensionFloorError(
                f"fitted delta {delta:.4f} exceeds 1/(4H) = {bound:.4f} at d={self.params.d}; "
                "increase d or pass allow_high_noise=True"
            )

    def _get(self, key: str) -> AnyMatrix:
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        seed_key = f"s{self.master_seed}/{key}"
        if self.mode == "identity":
            mat: AnyMatrix = IdentityMatrix(self.params.d, seed_key)
        elif self.mode == "orthonormal":
            mat = sample_orthonormal(self.params.d, seed_key)
        else:
            mat = sample_matrix(self.params, seed_key)
        with self._lock:
            return self._cache.setdefault(key, mat)

    def module_matrix(self, module_id: str, slot: int) -> AnyMatrix:
        if slot not in (0, 1, 2, 3):
            raise ParameterError(f"module matrix slot must be 0..3, got {slot}")
        return self._get(f"m:{module_id}:{slot}")

    def tuple_matrix(self, position: int, tuple_depth: int) -> AnyMatrix:
        if position < 1 or tuple_depth < 1:
            raise ParameterError("tuple position and depth are 1-based")
        return self._get(f"t:{position}:{tuple_depth}")


def _transparent(mat: AnyMatrix, x: np.ndarray) -> np.ndarray:
    return (x + mat.matvec(x)) * 0.5


# ---------------------------------------------------------------------------
# Sketch operations
# ---------------------------------------------------------------------------


def tuple_sketch(
    sketches: list[Sketch],
    weights: list[float],
    tuple_depth: int,
    registry: MatrixRegistry,
    depth: int = 1,
) -> Sketch:
    """Weighted sum of transparent-matrix applications; empty input -> zero."""
    if len(sketches) != len(weights):
        raise ParameterError("sketches and weights must have equal length")
    total = sum(weights)
    if any(w < 0 for w in weights) or total > 1.0 + 1e-9:
        raise ParameterError(f"weights must be nonnegative with sum <= 1, got sum {total}")
    d = registry.d
    acc = np.zeros(d)
    for pos, (sk, w) in enumerate(zip(sketches, weights), start=1):
        if sk.d != d:
            raise ParameterError("sketch dimension mismatch")
        if w == 0.0:
            continue
        mat = registry.tuple_matrix(pos, tuple_depth)
        acc += w * _transparent(mat, sk.values)
    return Sketch(values=acc, kind="tuple", depth=depth, erased_prefix=d)


def object_signature(obj: ObjectNode, n_cap: int, d: int) -> np.ndarray:
    """Deterministic sparse signature ("magic number") of an object.

    A ceil(log2 n_cap)-sparse vector with entries 1/sqrt(sparsity), derived
    by hashing the producing module and the quantized attributes, so equal
    objects always carry equal signatures and recovered signatures can serve
    as fingerprints.
    """
    n_ones = max(1, int(np.ceil(np.log2(max(2, n_cap)))))
    quantized = np.round(obj.attributes * 1e6).astype(np.int64)
    digest = hashlib.blake2b(
        obj.producer.encode() + quantized.tobytes(), digest_size=8
    ).hexdigest()
    rng = derive_rng(int(digest, 16) % (2**63), "object-signature")
    idx = rng.choice(d, size=n_ones, replace=False)
    sig = np.zeros(d)
    sig[idx] = 1.0 / np.sqrt(n_ones)
    return sig


def attribute_subsketch(
    obj: ObjectNode,
    registry: MatrixRegistry,
    signature_mode: bool = False,
    n_cap: int | None = None,
) -> Sketch:
    """1/2 R_{M,1} x + 1/2 R_{M,2} e_1 (thirds, plus a signature term, when
    signature_mode is on)."""
    d = registry.d
    e1 = np.zeros(d)
    e1[0] = 1.0
    r1 = registry.module_matrix(obj.producer, 1)
    r2 = registry.module_matrix(obj.producer, 2)
    if signature_mode:
        r3 = registry.module_matrix(obj.producer, 3)
        sig = object_signature(obj, n_cap or registry.params.n_cap, d)
        values = (r1.matvec(obj.attributes) + r2.matvec(e1) + r3.matvec(sig)) / 3.0
    else:
        values = 0.5 * r1.matvec(obj.attributes) + 0.5 * r2.matvec(e1)
    return Sketch(values=values, kind="attribute", depth=obj.depth, erased_prefix=d)


def _pair_tuple_depth(object_depth: int) -> int:
    # attr/input pair of a depth-k object
    return 2 * (object_depth - 1)


def _input_tuple_depth(object_depth: int) -> int:
    # input tuple of a depth-k object (the overall sketch is k=1 -> depth 1)
    return 2 * object_depth - 1


def input_subsketch(
    net: ModularNetwork,
    obj: ObjectNode,
    registry: MatrixRegistry,
    signature_mode: bool = False,
    _memo: dict[str, Sketch] | None = None,
) -> Sketch:
    memo = {} if _memo is None else _memo
    children = [
        object_sketch(net, net.objects[cid], registry, signature_mode, memo)
        for cid, _ in obj.inputs
    ]
    weights = [w for _, w in obj.inputs]
    sk = tuple_sketch(children, weights, _input_tuple_depth(obj.depth), registry, obj.depth)
    return replace(sk, kind="input", signature_mode=signature_mode)


def object_sketch(
    net: ModularNetwork,
    obj: ObjectNode,
    registry: MatrixRegistry,
    signature_mode: bool = False,
    _memo: dict[str, Sketch] | None = None,
) -> Sketch:
    memo = {} if _memo is None else _memo
    hit = memo.get(obj.id)
    if hit is not None:
        return hit
    attr = attribute_subsketch(obj, registry, signature_mode, net.n_cap)
    inp = input_subsketch(net, obj, registry, signature_mode, memo)
    pair = tuple_sketch(
        [attr, inp], [0.5, 0.5], _pair_tuple_depth(obj.depth), registry, obj.depth
    )
    r0 = registry.module_matrix(obj.producer, 0)
    sk = Sketch(
        values=_transparent(r0, pair.values),
        kind="object",
        depth=obj.depth,
        erased_prefix=registry.d,
    )
    memo[obj.id] = sk
    return sk


def overall_sketch(
    net: ModularNetwork,
    registry: MatrixRegistry,
    signature_mode: bool = False,
) -> Sketch:
    """Input subsketch of the output pseudo-object."""
    if net.d != registry.d:
        raise ParameterError(f"network dimension {net.d} != registry dimension {registry.d}")
    registry.check_dimension_floor(net.recursion_budget)
    root = net.objects[net.output_object_id]
    sk = input_subsketch(net, root, registry, signature_mode, {})
    return replace(sk, kind="overall", signature_mode=signature_mode)


# ---------------------------------------------------------------------------
# Prototypes (flat-network oracles)
# ---------------------------------------------------------------------------


def _flat_children(net: ModularNetwork) -> list[tuple[ObjectNode, float]]:
    root = net.objects[net.output_object_id]
    children = [(net.objects[cid], w) for cid, w in root.inputs]
    for child, _ in children:
        if child.inputs:
            raise PrototypeScopeError(
                "prototype sketches require every object to feed the output directly"
            )
    return children


def prototype_a_overall(net: ModularNetwork, registry: MatrixRegistry) -> Sketch:
    """Flat convex combination sum_i w_i R_{M(theta_i)} x_i (slot-1 matrices)."""
    children = _flat_children(net)
    acc = np.zeros(registry.d)
    for obj, w in children:
        mat = registry.module_matrix(obj.producer, 1)
        acc += w * mat.matvec(obj.attributes)
    return Sketch(values=acc, kind="overall", depth=1, erased_prefix=registry.d)


def prototype_b_overall(net: ModularNetwork, registry: MatrixRegistry) -> Sketch:
    """Flat tuple of per-object sketches 1/2 R_{M,1} x + 1/2 R_{M,2} e_1."""
    children = _flat_children(net)
    sketches = [attribute_subsketch(obj, registry) for obj, _ in children]
    weights = [w for _, w in children]
    sk = tuple_sketch(sketches, weights, tuple_depth=1, registry=registry)
    return replace(sk, kind="overall")


# ---------------------------------------------------------------------------
# Erasure and serialization
# ---------------------------------------------------------------------------


def erase_to_prefix(sk: Sketch, d_prime: int) -> Sketch:
    """Zero all coordinates beyond d_prime and record the surviving prefix."""
    if not 0 < d_prime <= sk.d:
        raise ParameterError(f"prefix {d_prime} outside (0, {sk.d}]")
    if d_prime >= sk.erased_prefix:
        # already erased at least this far
        return replace(sk, erased_prefix=min(sk.erased_prefix, d_prime))
    values = sk.values.copy()
    values[d_prime:] = 0.0
    return Sketch(values=values, kind=sk.kind, depth=sk.depth, erased_prefix=d_prime)


_SKETCH_MAGIC = "modsketch-sketch v1"


def save_sketch(sk: Sketch, path: str, seed_fingerprint: str = "") -> None:
    """Header line + little-endian float64 payload."""
    header = (
        f"{_SKETCH_MAGIC} d={sk.d} kind={sk.kind} depth={sk.depth} "
        f"erased_prefix={sk.erased_prefix} sig={int(sk.signature_mode)} "
        f"seed={seed_fingerprint or 'unknown'}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(struct.pack(f"<{sk.d}d", *sk.values))


def load_sketch(path: str) -> tuple[Sketch, str]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith(_SKETCH_MAGIC):
            raise ParameterError(f"not a sketch file: {path}")
        fields = dict(tok.split("=", 1) for tok in header[len(_SKETCH_MAGIC) :].split())
        d = int(fields["d"])
        values = np.array(struct.unpack(f"<{d}d", fh.read(8 * d)))
    sk = Sketch(
        values=values,
        kind=fields["kind"],  # type: ignore[arg-type]
        depth=int(fields["depth"]),
        erased_prefix=int(fields["erased_prefix"]),
        signature_mode=bool(int(fields.get("sig", "0"))),
    )
    return sk, fields["seed"]


def export_sketch_csv(sk: Sketch, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,value\n")
        for i, v in enumerate(sk.values):
            fh.write(f"{i},{float(v)!r}\n")
