"""Simulation and limit laws for the longest edges of continuous-time GW trees."""

from .analytics import (
    EmptyMixture,
    LimitLaw,
    alpha_star,
    asymptotic_hit_probability,
    geometric_parameter,
    limit_cdf_kth,
    limit_pmf,
    mean_all_count,
    mean_interior_count,
    mean_pendant_count,
    second_moment_pendant,
    variance_bound_all,
    variance_bound_interior,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    TooFewSurvivors,
    estimate_m_infty,
    ks_distance,
    mean_z_score,
    run_convergence_diagnostic,
    run_count_experiment,
    run_experiment,
    run_length_experiment,
    tv_distance,
)
from .model import (
    BirthDeathParams,
    ModelParams,
    OffspringDistribution,
    birth_death_model,
    heavy_tail_zeta3,
    mean,
    second_moment,
    truncate,
)
from .rng import ReplicateSeed
from .simulator import (
    EdgeCensus,
    EdgeClass,
    EdgeRecord,
    Overflow,
    SimTree,
    census,
    kth_longest,
    simulate_batch,
    simulate_tree,
)

__version__ = "0.1.0"
