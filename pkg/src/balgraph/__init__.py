"""Balanced signed graph construction, spectral denoising, and classification."""

from .graphs import (
    COMBINATORIAL,
    GENERALIZED,
    SIGNED,
    Laplacian,
    SignedGraph,
    build_laplacian,
    gct_shift,
    glr,
    glr_edge_sum,
    load_graph,
    normalize_weights,
    parse_graph,
    format_graph,
    save_graph,
    similarity_transform,
    validate_polarity,
)
from .balance import (
    BALANCED_CHT,
    LOGISTIC_UNBALANCED,
    POSITIVE_ONLY,
    SIGNED_AFFINITY,
    BalanceCheck,
    PolarityUpdate,
    WeightScheme,
    assign_weights,
    edge_weight,
    init_polarity,
    is_balanced,
    update_polarities,
)
from .spectral import (
    EXACT,
    IDEAL,
    LANCZOS,
    SIGMOID,
    EigenPair,
    FilterSpec,
    LanczosBasis,
    eigh,
    lanczos_basis,
    lp_filter,
    lp_filter_exact,
    lp_filter_lanczos,
    sigmoid_response,
)

__version__ = "0.1.0"
