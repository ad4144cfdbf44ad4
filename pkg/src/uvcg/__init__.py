"""uvcg: embed imperceptible l-inf bounded perturbations into a video so a
latent encoder maps its frames onto a chosen target video's latent
sequence, plus the metrics needed to measure the effect."""

__version__ = "0.1.0"

from .advisor import TargetScore, proximity_score, rank_targets, simplicity_score
from .encoder import (
    EncoderEndpoint,
    EncoderSpec,
    LatentSequence,
    LatentTensor,
    build_encoder,
    encode_sequence,
    finite_difference_gradient,
)
from .errors import (
    CapabilityError,
    ConfigError,
    DataError,
    FormatError,
    IntegrityError,
    IoError,
    NumericalError,
    SchemaError,
    SidecarError,
    UvcgError,
)
from .media import FrameImage, Manifest, VideoClip, load_clip, save_clip
from .metrics import (
    EmbedderEndpoint,
    EvaluationReport,
    ReferenceEmbedder,
    emit_report,
    frame_consistency,
    prompt_consistency,
    psnr,
    ssim,
)
from .protect import (
    PerturbationField,
    ProtectionConfig,
    ProtectionResult,
    init_delta,
    pgd_step,
    protect_frame,
    protect_video,
    random_noise_baseline,
    target_for_frame,
)

__all__ = [
    "__version__",
    "CapabilityError",
    "ConfigError",
    "DataError",
    "EmbedderEndpoint",
    "EncoderEndpoint",
    "EncoderSpec",
    "EvaluationReport",
    "FormatError",
    "FrameImage",
    "IntegrityError",
    "IoError",
    "LatentSequence",
    "LatentTensor",
    "Manifest",
    "NumericalError",
    "PerturbationField",
    "ProtectionConfig",
    "ProtectionResult",
    "ReferenceEmbedder",
    "SchemaError",
    "SidecarError",
    "TargetScore",
    "UvcgError",
    "VideoClip",
    "build_encoder",
    "emit_report",
    "encode_sequence",
    "finite_difference_gradient",
    "frame_consistency",
    "init_delta",
    "load_clip",
    "pgd_step",
    "prompt_consistency",
    "protect_frame",
    "protect_video",
    "proximity_score",
    "psnr",
    "random_noise_baseline",
    "rank_targets",
    "save_clip",
    "simplicity_score",
    "ssim",
    "target_for_frame",
]
