"""Attention-weighted graph-convolutional pedestrian trajectory forecasting."""

from .data import (
    Scene,
    SequenceSample,
    TrackPoint,
    load_scene,
    parse_trajectory_file,
    split_dataset,
    window_sequences,
)
from .errors import (
    CheckpointError,
    CrowdGcnError,
    DataError,
    DomainError,
    NumericError,
    ParseError,
    ShapeError,
    TrainingDiverged,
)
from .evaluation import (
    BenchReport,
    MetricsReport,
    ade,
    benchmark_inference,
    best_of_n,
    cvm_predict,
    evaluate_baseline,
    evaluate_model,
    fde,
    linear_predict,
    most_likely,
)
from .graph import (
    GraphSequence,
    build_graph_sequence,
    normalize_adjacency,
    npa_attention,
    pairwise_distances,
)
from .losses import LossValue, cde_loss, nll_loss
from .model import (
    GaussianField,
    ModelParams,
    init_params,
    parameter_census,
    predict_deterministic,
    predict_probabilistic,
    relative_to_absolute,
    stgcnn_forward,
    txpcnn_forward,
)
from .training import (
    OptimizerState,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    make_optimizer,
    optimizer_step,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
