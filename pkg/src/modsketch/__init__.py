"""Recursive sketching of modular computation DAGs.

The package is organized around six building blocks:

``block_random``
    The block-sparse signed matrix family used everywhere else: the
    column-signature code, seeded sampling, sparse application, and
    empirical isometry / desynchronization measurement.
``network``
    The communication-graph model: modules, objects with weighted input
    edges and normalized attribute vectors, synthetic generation, and a
    text serialization format.
``sketcher``
    The recursive sketch construction over a network, driven by a
    deterministic matrix registry, plus the two flat prototype variants,
    the signature extension, and prefix erasure.
``recovery``
    Everything that interrogates a sketch: attribute recovery (unique and
    path-disambiguated), frequency and summed/mean attribute statistics,
    similarity, signature recovery, and erased-prefix variants.
``dictlearn``
    Recovery of the random matrices and coefficient vectors from sketch
    samples alone, and the level-by-level unrolling that turns overall
    sketches into per-module input/output pairs.
``repository``
    An in-memory sketch store with similarity retrieval (brute force or
    hyperplane-bucketed) and seeded k-means clustering.

``cli`` wires the above into the ``modsketch`` command.
"""

from modsketch.block_random import (
    BlockParams,
    BlockRandomMatrix,
    MatrixExpr,
    NoiseProfile,
    apply,
    auto_params,
    decode_column_signature,
    encode_column_signature,
    measure_noise_profile,
    sample_matrix,
)
from modsketch.dictlearn import (
    DLConfig,
    LearnedDictionary,
    classify_recovered_vectors,
    learn_dictionary,
    match_permutation,
    unroll_network,
)
from modsketch.network import (
    ModularNetwork,
    SyntheticProfile,
    build_network,
    effective_weight,
    generate_synthetic,
    load_network,
    save_network,
)
from modsketch.recovery import (
    PathStep,
    RecoveryReport,
    recover_attributes_by_path,
    recover_attributes_unique,
    recover_frequency,
    recover_mean_attributes,
    recover_signature,
    recover_summed_attributes,
    sketch_similarity,
)
from modsketch.repository import SketchRepository
from modsketch.sketcher import (
    MatrixRegistry,
    Sketch,
    erase_to_prefix,
    overall_sketch,
    prototype_a_overall,
    prototype_b_overall,
)

__all__ = [
    "BlockParams",
    "BlockRandomMatrix",
    "MatrixExpr",
    "NoiseProfile",
    "apply",
    "auto_params",
    "decode_column_signature",
    "encode_column_signature",
    "measure_noise_profile",
    "sample_matrix",
    "DLConfig",
    "LearnedDictionary",
    "classify_recovered_vectors",
    "learn_dictionary",
    "match_permutation",
    "unroll_network",
    "ModularNetwork",
    "SyntheticProfile",
    "build_network",
    "effective_weight",
    "generate_synthetic",
    "load_network",
    "save_network",
    "PathStep",
    "RecoveryReport",
    "recover_attributes_by_path",
    "recover_attributes_unique",
    "recover_frequency",
    "recover_mean_attributes",
    "recover_signature",
    "recover_summed_attributes",
    "sketch_similarity",
    "SketchRepository",
    "MatrixRegistry",
    "Sketch",
    "erase_to_prefix",
    "overall_sketch",
    "prototype_a_overall",
    "prototype_b_overall",
]

__version__ = "0.1.0"
