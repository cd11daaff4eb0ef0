"""Predictive inference for Fleming-Viot dependent Dirichlet processes.

Filters the posterior law of the latent random measure across collection
times, evaluates and samples the time-dependent mixture-of-Polya-urns
predictive distribution, and samples the induced random partitions.
"""

__version__ = "0.1.0"

from .dataset import Dataset, ingest, synthetic, write_dataset
from .death_process import (
    LatticeBudgetError,
    NumericalInstabilityError,
    SeriesDivergenceError,
    dm_probability,
    level_transition,
    node_transition,
    propagate_weights_exact,
    propagate_weights_mc,
    rate,
    reach_probability,
    sample_landing_node,
    simulate_level,
)
from .filtering import (
    FilterState,
    ModelMisspecificationError,
    advance_time,
    hyper_posterior,
    init_state,
    log_marginal_likelihood,
    run_filter,
    state_from_json,
    state_to_json,
    update_batch,
    update_one,
)
from .lattice import (
    Node,
    WeightedNodeSet,
    counts_of,
    enumerate_below,
    extend_support,
    lattice_size,
)
from .measures import (
    BaseMeasure,
    BinomialP0,
    FiniteUniformP0,
    NegativeBinomialP0,
    PoissonP0,
    TablePmf,
)
from .partition import (
    PartitionSample,
    conveyor_simulate,
    dp_eppf,
    lemma2_oracle,
    sample_partition,
)
from .predictive import (
    PredictiveState,
    UrnCoefficients,
    approx_predict,
    coefficients,
    correlation,
    exact_predict,
    from_filter,
    limit_pmf,
    observe_draw,
    predictive_pmf,
    sample_next,
    sample_sequence,
)
