"""Multilinear dyadic operators, their commutators, sparse domination and
two-weight (Bloom) inequality checks on finite dyadic grids."""

from .dyadic import (
    Cube,
    DomainError,
    DyadicGrid,
    GridFunction,
    HaarIndex,
    ResolutionError,
    average,
    cancellative_indices,
    dyadic_maximal,
    haar_coefficient,
    haar_function,
    lp_norm,
    parseval_error,
    weak_lp_norm,
)
from .operators import (
    Commutator,
    CommutatorSpec,
    HaarMultiplierSpec,
    MultiplicationOperator,
    Operator,
    ParaproductSpec,
    apply_haar_multiplier,
    apply_paraproduct,
    build_iterated_commutator,
    commutator_single,
    conjugated_family,
    constant_epsilon,
    epsilon_from_map,
    expand_first_order,
    first_order_commutator,
    maximal_truncation,
    operator_from_dict,
    random_sign_epsilon,
    truncated_tail,
)
from .sparse import (
    DominationCertificate,
    SparseCollection,
    adapted_sparse_apply,
    augment_for_symbol,
    cz_stopping_cubes,
    gamma_term,
    make_collection,
    sparse_dominate_commutator,
    sparse_operator,
    verify_sparsity,
)
from .weights import (
    BloomSetup,
    ExponentVector,
    WeightVector,
    ap_characteristic,
    bmo_norm,
    conjugate_weight,
    dual_weight,
    holder_combination,
    john_nirenberg_check,
    multilinear_ap_characteristic,
    reverse_holder_exponent,
    theorem_constant,
    weight_product,
    weighted_bmo_norm,
)

__version__ = "0.1.0"
