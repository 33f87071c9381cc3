"""Difficulty-weighted semi-supervised multimodal image synthesis on
procedurally generated phantoms."""

from .difficulty import (
    BACKGROUND_VALUE, CLAMP_MAX, DifficultyMap, build_pyramid,
    compute_difficulty_map, constant_difficulty_map,
)
from .losses import (
    LossBundle, LossWeights, METRICS_COLUMNS, PatchSamplingPlan, combined_objective,
    feature_distill, image_distill, lsgan_d, lsgan_g, patch_difficulty_infonce,
    pixelwise_difficulty_l1, schedule_weight, student_total, teacher_total,
)
from .metrics import MetricReport, error_map, export_grayscale, mse, psnr, ssim
from .nets import (
    DiscriminatorSpec, FeatureTapSet, GeneratorSpec, LayerEntry, ProjectionHeads,
    build_discriminator, build_generator, build_heads, checkpoint_id, copy_weights,
    extract_patch_embeddings, layer_table, load_checkpoint, make_checkpoint,
    restore_networks, save_checkpoint, state_hash,
)
from .phantom import (
    Blob, DatasetSplit, Ellipse, MultimodalSample, Phantom, build_split,
    generate_phantom, load_split, make_sample, render_modalities, save_split,
    split_hash,
)
from .sweep import evaluate_checkpoint, run_sweep
from .trainer import (
    Stage1Result, Stage2Result, TrainConfig, TrainState, build_split_from_config,
    config_hash, predict, run_training, train_stage1, train_stage2,
)

__version__ = "0.1.0"
