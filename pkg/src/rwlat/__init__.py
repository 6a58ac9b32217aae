"""READ/WRITE lattice kernel and evaluation toolkit for simultaneous
translation transducers: exact marginalization over expansion paths, a
node-additive expected-latency loss with analytic gradients, streaming
policy simulation, AL/DAL metrics, block-attention masks, and a desk-scale
toy trainer."""

__version__ = "0.1.0"

from .blockmask import (
    BlockSpec,
    build_mask,
    lookahead,
    mask_intervals,
    stacked_future_visibility,
)
from .errors import (
    FormatError,
    NoAdmissiblePathError,
    RwlatError,
    ScorerError,
    TrainingDivergedError,
    ValidationError,
)
from .lattice import (
    ActionPath,
    ArcPosteriors,
    ForwardBackwardTables,
    Lattice,
    TargetSequence,
    Vocab,
    arc_posteriors,
    forward_backward,
    log_marginal_nll,
    nll_gradient,
    normalize_scores,
    path_log_prob,
    random_lattice,
)
from .latency import (
    LatencyParams,
    average_lagging,
    differentiable_average_lagging,
    latency_expectation,
    latency_gradient,
    node_latency,
    path_delays,
    path_latency,
)
from .policy import (
    ChunkConfig,
    DecodeResult,
    Scorer,
    chunk_source,
    greedy_decode,
    wait_k_path,
)
from .toy import (
    CurveRow,
    LossBreakdown,
    LossConfig,
    SyntheticTaskSpec,
    TinyScorer,
    ce_auxiliary_loss,
    fill_lattice,
    generate_corpus,
    sentence_quality,
    token_accuracy,
    total_loss_and_grad,
    tradeoff_curve,
    train,
)

__all__ = [
    "ActionPath",
    "ArcPosteriors",
    "BlockSpec",
    "ChunkConfig",
    "CurveRow",
    "DecodeResult",
    "FormatError",
    "ForwardBackwardTables",
    "Lattice",
    "LatencyParams",
    "LossBreakdown",
    "LossConfig",
    "NoAdmissiblePathError",
    "RwlatError",
    "Scorer",
    "ScorerError",
    "SyntheticTaskSpec",
    "TargetSequence",
    "TinyScorer",
    "TrainingDivergedError",
    "ValidationError",
    "Vocab",
    "arc_posteriors",
    "average_lagging",
    "build_mask",
    "ce_auxiliary_loss",
    "chunk_source",
    "differentiable_average_lagging",
    "fill_lattice",
    "forward_backward",
    "generate_corpus",
    "greedy_decode",
    "latency_expectation",
    "latency_gradient",
    "log_marginal_nll",
    "lookahead",
    "mask_intervals",
    "nll_gradient",
    "node_latency",
    "normalize_scores",
    "path_delays",
    "path_latency",
    "path_log_prob",
    "random_lattice",
    "sentence_quality",
    "stacked_future_visibility",
    "token_accuracy",
    "total_loss_and_grad",
    "tradeoff_curve",
    "train",
    "wait_k_path",
]
