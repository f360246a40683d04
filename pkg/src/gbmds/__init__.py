"""Generalized Bayesian multidimensional scaling.

Infers low-dimensional object configurations from pairwise dissimilarities
under truncated Gaussian, skew-normal, or Student-t error models, using an
adaptive annealed sequential Monte Carlo sampler whose running marginal
likelihood estimate supports model and dimension comparison via Bayes
factors.
"""

__version__ = "0.1.0"

from .adaptive import BatchPlan, fit_gbmds, reference_from_posterior, run_adaptive
from .cmds import classical_mds, stress
from .dissimilarity import (
    DataMatrix,
    DissimilarityMatrix,
    TokenSet,
    build_matrix,
    cosine,
    euclidean,
    jaccard,
    ngram_tokenize,
)
from .errors import (
    GBMDSError,
    GBMDSWarning,
    InputError,
    IterationLimitError,
    MetricError,
    NumericalError,
)
from .harness import (
    ExperimentSpec,
    gen_known_dimension,
    gen_outliers,
    gen_skewed_errors,
    run_experiment,
)
from .model import (
    HyperParams,
    ModelSpec,
    ParticleState,
    annealed_log_target,
    delta_matrix,
    latent_distances,
    log_lik_tsn,
    log_lik_tt,
    log_prior,
    log_skew_normal_cdf,
)
from .postprocess import (
    BayesFactor,
    ComparisonTable,
    FitResult,
    bayes_factor,
    credible_ellipses,
    posterior_mode,
    procrustes,
    sweep,
)
from .smc import (
    AnnealedTarget,
    GBMDSTarget,
    LatentReference,
    ParticleCloud,
    SMCConfig,
    cmds_reference,
    incremental_log_weights,
    initialize_particles,
    multinomial_resample,
    next_tau,
    propagate_gbmds,
    rcess,
    ress,
    run_asmc,
)

__all__ = [name for name in dir() if not name.startswith("_")]
