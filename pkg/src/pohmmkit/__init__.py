"""PoHMM toolkit (products of HMM experts): contrastive-divergence training, annealed importance
sampling of the partition function, exact small-instance oracles and held-out metrics."""

__version__ = "0.1.0"

from .data import AlphabetSpec, SequenceDataset
from .errors import CapacityError, InvalidInputError, ParseError, UnsupportedVersionError
from .hmm import (
    Hmm,
    HmmGradient,
    PosteriorStats,
    ancestral_sample,
    base_rate_hmm,
    em_fit,
    log_forward,
    log_likelihood_gradient,
    posterior_stats,
    sample_posterior_path,
)
from .product import (
    ProductHmm,
    TrainConfig,
    cd_step,
    gibbs_sweep,
    model_sample,
    train_cd,
    unnorm_log_likelihood,
)
from .ais import (
    AisEstimate,
    AnnealingSchedule,
    ais_single_run,
    estimate_log_partition,
    estimate_log_ratio,
    intermediate_gibbs_transition,
    intermediate_unnorm_logp,
)
from .kernels import BACKEND
