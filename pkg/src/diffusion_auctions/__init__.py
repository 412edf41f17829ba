"""Truthful single-item auctions on networks.

Mechanisms (exponential level auction, unit-exponent baseline, referral
auctions, the revenue-optimal transformed auction), executable incentive
checks, and a reproducible revenue-experiment harness.
"""

from .network import (
    SELLER,
    DiffusionNetwork,
    Instance,
    InstanceError,
    Outcome,
    ReferralTree,
    Report,
    ReportProfile,
    build_referral_tree,
    filter_subnetwork,
    load_instance,
    network_from_edges,
    random_tree_instance,
    save_instance,
    subtree_max,
    subtree_values,
    truthful_profile,
)
from .mechanisms import (
    ArgmaxRule,
    LblevAuction,
    LevelRule,
    LevelTrace,
    Mechanism,
    NonMonotoneRuleError,
    PowerRule,
    ReferralAuction,
    SecondPriceReserveRule,
    myerson_level_payment,
    rc_example_mechanism,
    run_idm_tree,
    run_lblev,
    run_referral_auction,
    transformed_auction_revenue,
    unit_exponents,
)
from .bayes import (
    InterimEstimate,
    MaxVivaAuction,
    MaxVivaTA,
    PowerTA,
    SecondPriceTA,
    ValuationDistribution,
    check_mhr,
    estimate_interim,
    expected_revenue,
    exponential_distribution,
    interim_allocation_second_price,
    interim_payment_second_price,
    invert_virtual,
    max_of_iid,
    maxviva_level,
    paired_revenue_gap,
    parse_distribution,
    revenue_identity_sides,
    run_maxviva,
    truncated_normal,
    uniform_distribution,
    virtual_valuation,
    write_revenue_csv,
)
from .verify import (
    DeviationGrid,
    VerificationReport,
    Witness,
    check_allocation_monotonicity,
    check_ddsic_deviations,
    check_diffusion_constraint,
    check_ic_deviations,
    check_ir,
    check_neighbor_misreport,
    check_payment_identity,
    check_ta_equivalence,
    make_grid,
    replay_witness,
    verify_mechanism,
)
from .experiments import (
    ExperimentConfig,
    SweepRow,
    activate_edges,
    exponent_schedule,
    generate_base_tree,
    grid_search_lambda_star,
    sample_valuations,
    sweep_lambda,
)

__version__ = "0.1.0"
