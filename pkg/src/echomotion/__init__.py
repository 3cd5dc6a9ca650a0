"""Motion-curve-conditioned video generation on a synthetic phantom testbed.

The package splits into a data layer (phantom rendering, curve files,
dataset IO), a model layer (frame autoencoder, conditioning network,
masked-attention denoiser, diffusion schedule), and an evaluation layer
(frame metrics, curve-consistency, Fréchet distance).  `echomotion.cli`
ties them together into the train/generate/edit/evaluate workflow.
"""

from .attention import (
    GaussianMaskStack,
    build_gaussian_masks,
    cross_attention,
    gaussian_bump,
    masked_cross_attention,
    masks_to_attention,
)
from .codec import FrameAutoencoder, train_codec
from .config import RunConfig
from .conditioning import ConditioningNetwork, GeneralFeatureBank, StructureEncoder, crop_rois
from .curves import (
    MotionCurveSet,
    curves_equal,
    curves_to_boxes,
    extract_curves,
    load_curves,
    replace_curve,
    resample_curve,
    save_curves,
    scale_curve,
)
from .dataset_io import DatasetManifest, generate_dataset, read_clip, read_dataset, write_clip
from .diffusion import (
    GenerationPipeline,
    NoiseSchedule,
    VideoDiffusionGenerator,
    ddim_sample,
    frame_masks,
    q_sample,
    train_diffusion,
)
from .encoding import MotionEncoder, fourier_features, temporal_dft_features
from .errors import (
    ConfigError,
    EchoMotionError,
    FormatError,
    ShapeError,
    SpecError,
    TrainingDivergedError,
)
from .metrics import (
    EncoderFeatureExtractor,
    FrechetStats,
    MetricReport,
    box_iou,
    evaluate_clips,
    frechet_distance,
    frechet_stats,
    iou_consistency,
    mae,
    psnr,
    ssim,
)
from .phantom import (
    StructureSpec,
    VideoClip,
    default_intensity_bands,
    default_structure_specs,
    detect_boxes,
    render_phantom,
    sample_structure_specs,
)
from .unet import DenoiserUNet

__version__ = "0.1.0"

__all__ = [
    "ConditioningNetwork",
    "ConfigError",
    "DatasetManifest",
    "DenoiserUNet",
    "EchoMotionError",
    "EncoderFeatureExtractor",
    "FormatError",
    "FrameAutoencoder",
    "FrechetStats",
    "GaussianMaskStack",
    "GeneralFeatureBank",
    "GenerationPipeline",
    "MetricReport",
    "MotionCurveSet",
    "MotionEncoder",
    "NoiseSchedule",
    "RunConfig",
    "ShapeError",
    "SpecError",
    "StructureEncoder",
    "StructureSpec",
    "TrainingDivergedError",
    "VideoClip",
    "VideoDiffusionGenerator",
    "box_iou",
    "build_gaussian_masks",
    "cross_attention",
    "crop_rois",
    "curves_equal",
    "curves_to_boxes",
    "ddim_sample",
    "default_intensity_bands",
    "default_structure_specs",
    "detect_boxes",
    "evaluate_clips",
    "extract_curves",
    "fourier_features",
    "frame_masks",
    "frechet_distance",
    "frechet_stats",
    "gaussian_bump",
    "generate_dataset",
    "iou_consistency",
    "load_curves",
    "mae",
    "masked_cross_attention",
    "masks_to_attention",
    "psnr",
    "q_sample",
    "read_clip",
    "read_dataset",
    "render_phantom",
    "replace_curve",
    "resample_curve",
    "sample_structure_specs",
    "save_curves",
    "scale_curve",
    "ssim",
    "temporal_dft_features",
    "train_codec",
    "train_diffusion",
    "write_clip",
]
