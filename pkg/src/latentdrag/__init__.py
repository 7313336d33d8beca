"""Interactive drag-based image editing by latent optimization over a
pluggable diffusion backend."""

from .adaptation import (
    AdapterConfig,
    AdapterWeights,
    apply_adapters,
    finetune_identity,
    load_adapters,
    reconstruction_error,
    save_adapters,
)
from .backends import (
    BackendDescriptor,
    BackendError,
    DiffusionBackend,
    DiffusionSchedule,
    FeatureMap,
    LatentCode,
    SyntheticBackend,
    available_backends,
    create_backend,
    register_backend,
    uniform_schedule,
)
from .encoders import LinearProjectionEncoder, VisionLanguageEncoder
from .evaluation import (
    MetricReport,
    evaluate_run,
    mean_distance,
    perceptual_similarity,
    run_benchmark,
    semantic_scores,
)
from .objective import (
    EditMask,
    GaussianMoments,
    LossWeights,
    PatchSpec,
    PointPair,
    estimate_moments,
    gaussian_kl,
    motion_supervision_loss,
    prior_preservation_loss,
    reward_guidance,
    reward_loss,
    step_direction,
    total_loss,
)
from .optimizer import (
    EditRequest,
    EditSession,
    OptimizerConfig,
    StepReport,
    Toggles,
    check_convergence,
    drag_step,
    prepare_session,
    run_drag,
)
from .tracking import TrackerConfig, TrackResult, baseline_track, direction_vector, dwpt_track

__version__ = "0.1.0"
