"""Change-aware conditional diffusion for reference-based super-resolution.

Subpackages:
    edm           noise preconditioning, loss weighting, Heun sampler
    conditioning  mask encoding, LR upsampling, input assembly
    denoiser      change-aware U-Net with decoupled spatial feature transforms
    degradation   blind-SR LR synthesis pipeline
    datagen       synthetic change-pair generator and dataset ingestion
    training      Adam loop, checkpoints, sampling, validation
    metrics       PSNR, region PSNR, Frechet feature distance
    cli           experiment entry points (gen-data, train, sample, eval, ...)
"""

from .edm import (
    NumericError,
    PrecondCoeffs,
    SigmaParams,
    denoise,
    heun_sample,
    karras_schedule,
    loss_weight,
    precond_coeffs,
    sample_training_sigma,
    training_loss,
)
from .conditioning import (
    ConditionSet,
    assemble_input,
    build_condition_set,
    encode_mask,
    input_channels,
    split_input,
    upsample_lr,
)
from .denoiser import ChangeAwareUNet, DenoiserConfig, SpatialFeatureTransform
from .degradation import DegradationConfig, degrade, gaussian_kernel, jpeg_roundtrip, motion_kernel
from .datagen import (
    SamplePair,
    SceneSpec,
    TrainingExample,
    corrupt_mask,
    generate_pairs,
    generate_scene,
    ingest_dataset,
    make_example,
    mutate_scene,
    write_dataset,
)
from .metrics import (
    EmptyRegionError,
    FeatureStats,
    feature_stats,
    frechet_distance,
    psnr,
    region_psnr,
    toy_extractor,
)
from .training import (
    AdamState,
    CheckpointError,
    PairDataSource,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    build_model,
    load_checkpoint,
    load_model,
    sample_sr,
    save_checkpoint,
    train,
    validate,
)

__version__ = "0.1.0"
