"""Feature generation and hypothesis verification for anti-spoofing.

Generates real-face and known-attack feature hypotheses from standard-normal
latents, trains them against three cosine-based constraints, and verifies
inputs at test time through correlation consistency and latent-space drift.
"""

from .autodiff import SGD, Tensor, leaky_relu, linear_forward, logaddexp
from .constraints import (
    LossBreakdown,
    cosine,
    cosine_matrix,
    distribution_discrimination,
    overall_loss,
    relative_correlation,
    variance_constraint,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DegenerateFeatureError,
    FghvError,
    MetricError,
    OptimizationError,
    ShapeError,
)
from .metrics import MetricsReport, acer, class_histogram, eer, hter, roc_auc
from .models import (
    Checkpoint,
    ExtractorParams,
    GeneratorParams,
    HypothesisBatch,
    extract_feature,
    generate_hypotheses,
    init_extractor,
    init_generator,
    load_checkpoint,
    sample_latents,
    save_checkpoint,
)
from .synthdata import Sample, SynthSpec, generate, read_dataset, write_dataset
from .training import RunConfig, TrainResult, run_training
from .verification import (
    ClassifyThresholds,
    GhvmConfig,
    LatentTrajectory,
    ScoreTriple,
    classify,
    epistemic_uncertainty,
    fhvm_score,
    ghvm_score,
    kl_mean,
    kl_per_dim,
    latent_objective,
    optimize_latents,
    score_sample,
)

__version__ = "0.1.0"
