"""Edge-guided camouflaged object segmentation."""

from .config import (
    ABLATIONS,
    PRESETS,
    LossWeights,
    NetworkConfig,
    TrainConfig,
    format_value,
    from_flat,
    parse_value,
    read_flat_config,
    to_flat,
    write_flat_config,
)
from .context import AtrousPyramid, ContextFeatures, ContextIntegrator, SqueezeExcite, integrate
from .data import Sample, denormalize, load_dataset, make_edge_map, preprocess, split_stems
from .errors import (
    CheckpointError,
    ConfigError,
    DataLayoutError,
    NonFiniteLossError,
    ShapeMismatchError,
    WeightLoadError,
)
from .decoder import DecodeOutputs, EdgeFusion, ProgressiveDecoder, binarize, fuse_stage
from .edges import EdgeExtractor, EdgeOutputs, extract_edges
from .encoder import (
    FlatTokenEncoder,
    HierarchicalEncoder,
    MultiScaleFeatures,
    build_encoder,
    load_external_weights,
)
from .losses import (
    LossBreakdown,
    boundary_weight_map,
    combine_losses,
    edge_loss,
    structure_loss,
    total_loss,
)
from .metrics import (
    MetricReport,
    aggregate_rows,
    compute_all,
    e_measure,
    evaluate_directory,
    mae,
    mean_f,
    s_measure,
    weighted_f,
)
from .model import CamoNet, ModelOutputs, build_model
from .synth import SynthConfig, synthesize
from .training import (
    Checkpoint,
    TrainResult,
    clip_global_norm,
    model_to_checkpoint,
    prepare_tensors,
    train,
    validate,
)

__version__ = "0.1.0"
