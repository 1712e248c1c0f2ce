"""Diffusion-based lesion segmentation with accelerated sampling.

Masks are generated by a conditional denoising chain; the accelerated path
skips most of it by forward-diffusing a pre-segmentation to an intermediate
step and denoising only from there. Ensembles of samples give the final
mask and a pixel-wise uncertainty map.
"""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    load_denoiser,
    load_preseg,
    save_checkpoint,
    save_denoiser,
    save_preseg,
)
from .denoiser import (
    ConvDenoiser,
    ConvDenoiserConfig,
    Denoiser,
    GaussianOracleDenoiser,
    training_loss,
)
from .diffusion import (
    ReverseStepParams,
    SamplerConfig,
    decode_to_probability,
    encode_probability,
    pd_sample,
    q_sample,
    q_step,
    reverse_chain,
    reverse_step_params,
    sample_ensemble_members,
    vanilla_sample,
)
from .ensemble import EnsembleResult, ensemble, mean_uncertainty, write_result_maps
from .metrics import MetricReport, compute_all, dice, hd95, jaccard, lesion_f1
from .preseg import (
    DegradationError,
    DegradationSpec,
    PresegConfig,
    PresegModel,
    PresegNet,
    degrade_to_dice,
    segment,
)
from .rng import Rng
from .schedule import NoiseSchedule, build_cosine_schedule, build_linear_schedule
from .synth import Case, CorpusConfig, CorpusError, generate_corpus, load_corpus, save_corpus
from .train import TrainConfig, denoising_loss, train_denoiser, train_preseg

__version__ = "0.1.0"
