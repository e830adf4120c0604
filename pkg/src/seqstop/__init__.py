"""Sequential-design regression Monte Carlo for discrete-time optimal stopping.

The package prices Bermudan-style contracts by backward induction over
estimated stopping rules.  The classical driver regresses pathwise timing
values on fixed per-step designs; the sequential driver adaptively grows
each design toward the stopping boundary using an expected-improvement
score over a dynamic-tree posterior, cutting the simulation budget needed
for a given accuracy.
"""

from ._streams import replication_seed, substream
from .design import CandidateSet, EiConfig, ei_score, lhs_candidates, loss_sign, loss_zc, select_batch
from .lattice import OracleResult, OracleSpec, binomial_oracle, black_scholes_put, oracle_timing_value
from .models import (
    DensityModel,
    GbmParams,
    SimCounters,
    SvParams,
    density_box,
    gbm_transition,
    state_density,
    sv_transition,
)
from .payoffs import PayoffSpec, payoff
from .policy import (
    ClassifierStack,
    ConstantRule,
    ThresholdRule,
    TimingSamples,
    forward_stop,
    sample_timing_batch,
)
from .regression import (
    PartitionRegression,
    PartitionSpec,
    PosteriorBatch,
    PosteriorSummary,
    TreeEnsemble,
    TreeSpec,
    alc,
    bw_partition,
    fit,
    predict,
    update,
)
from .rmc import (
    DesignSet,
    RunReport,
    StoppingProblem,
    run_lsmc,
    run_sequential,
    simulate_pilot,
    value_estimate,
)

__version__ = "0.1.0"
