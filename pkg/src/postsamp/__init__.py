"""postsamp: a desk-scale numerical laboratory for posterior-sampling generators.

Everything here is closed-form or Monte-Carlo checkable without training a
network: diversity-aware supervision losses and their Gaussian closed
forms, the recovery/collapse optimization studies, the spread-weight
feedback controller, conditional and unconditional Frechet metrics on
Gaussian-approximated embeddings, masking / subsampled-Fourier operators
with exact data consistency, and calibrated detection from samples.
"""

from .streams import SeededStream
from .toy import (
    GeneratorParams,
    SampleBatch,
    ToyPosterior,
    generator_sampler,
    p_sample_average,
    posterior_sampler,
    sample_generator,
    sample_posterior,
)
from .regularizers import (
    LossEstimate,
    RegKind,
    RegularizerKind,
    assemble_generator_loss,
    beta_sd_nominal,
    closed_form_j,
    closed_form_j_grad,
    closed_form_l2p,
    closed_form_l2varp,
    gamma_p,
    mc_l1p,
    mc_l2p,
    mc_lsdp,
    mc_lvarp,
)
from .proplab import (
    ContourGrid,
    OptimizationReport,
    OptimizerSettings,
    contour_grid,
    minimize_regularizer,
    steepness_probe,
)
from .autotune import (
    AutotuneState,
    AutotuneTrace,
    NonMonotonePlantError,
    ValidationSet,
    apsd,
    e_hat,
    make_validation_set,
    psnr_gain_curve,
    simulate_autotune,
    target_ratio_db,
    update_beta,
)
from .cfid import (
    ConditionalStats,
    EmbeddingSet,
    JointGaussianStats,
    cfid,
    cfid_decompose,
    compute_stats,
    conditional_stats,
    fid,
    gaussian_w2_squared,
    read_embeddings,
    sqrtm_psd,
    write_embeddings,
)
from .linops import (
    FourierSubsampler,
    MaskOperator,
    data_consistency,
    dense_dft_matrix,
    load_operator,
    save_mask_file,
    unitary_dft,
)
from .detect import (
    Classifier,
    detection_probability,
    logistic_classifier,
    plug_in_gap,
    threshold_classifier,
)

__version__ = "0.1.0"

__all__ = [
    "SeededStream",
    "ToyPosterior",
    "GeneratorParams",
    "SampleBatch",
    "sample_posterior",
    "sample_generator",
    "p_sample_average",
    "posterior_sampler",
    "generator_sampler",
    "LossEstimate",
    "RegKind",
    "RegularizerKind",
    "gamma_p",
    "beta_sd_nominal",
    "mc_l1p",
    "mc_lsdp",
    "mc_l2p",
    "mc_lvarp",
    "closed_form_j",
    "closed_form_j_grad",
    "closed_form_l2p",
    "closed_form_l2varp",
    "assemble_generator_loss",
    "OptimizerSettings",
    "OptimizationReport",
    "ContourGrid",
    "minimize_regularizer",
    "contour_grid",
    "steepness_probe",
    "AutotuneState",
    "AutotuneTrace",
    "ValidationSet",
    "NonMonotonePlantError",
    "e_hat",
    "make_validation_set",
    "target_ratio_db",
    "update_beta",
    "simulate_autotune",
    "psnr_gain_curve",
    "apsd",
    "EmbeddingSet",
    "JointGaussianStats",
    "ConditionalStats",
    "compute_stats",
    "conditional_stats",
    "sqrtm_psd",
    "gaussian_w2_squared",
    "cfid",
    "cfid_decompose",
    "fid",
    "read_embeddings",
    "write_embeddings",
    "MaskOperator",
    "FourierSubsampler",
    "data_consistency",
    "unitary_dft",
    "dense_dft_matrix",
    "load_operator",
    "save_mask_file",
    "Classifier",
    "threshold_classifier",
    "logistic_classifier",
    "detection_probability",
    "plug_in_gap",
    "__version__",
]
