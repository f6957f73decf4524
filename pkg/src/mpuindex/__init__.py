"""Matrix product unitaries on rings: builders, fixed-point checks and rank-ratio indices."""

from .builders import (
    CircuitSpec,
    Layer,
    brick_layer,
    build_circuit,
    controlled_phase,
    fractional_example,
    load_circuit,
    load_fixture,
    parse_circuit,
    product_unitary,
    random_local_unitary,
    translation_left,
    translation_right,
    two_body_layer,
)
from .mpo import (
    DenseOperator,
    MpoTensor,
    PeriodicMpo,
    TransferData,
    assemble_dense,
    block,
    compose_t,
    dagger,
    is_injective,
    reduce_to_injective,
    segment,
    stack,
    transfer,
)

from .analysis import check_fixed_point, check_unitary_dense, conjugate_local, find_fixed_point
from .index import (
    IndexReport,
    circuit_overlap_index,
    gnvw_overlap_index,
    index_scan,
    rank_ratio,
    stabilized_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "CircuitSpec",
    "DenseOperator",
    "IndexReport",
    "Layer",
    "MpoTensor",
    "PeriodicMpo",
    "TransferData",
    "assemble_dense",
    "block",
    "brick_layer",
    "build_circuit",
    "check_fixed_point",
    "check_unitary_dense",
    "circuit_overlap_index",
    "compose_t",
    "conjugate_local",
    "controlled_phase",
    "dagger",
    "find_fixed_point",
    "fractional_example",
    "gnvw_overlap_index",
    "index_scan",
    "is_injective",
    "load_circuit",
    "load_fixture",
    "parse_circuit",
    "product_unitary",
    "random_local_unitary",
    "rank_ratio",
    "reduce_to_injective",
    "segment",
    "stabilized_ratio",
    "stack",
    "transfer",
    "translation_left",
    "translation_right",
    "two_body_layer",
]
