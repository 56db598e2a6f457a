"""panoctx: omni-range context tooling for panoramic segmentation at desk scale.

Segment/pyramid attention with a non-local oracle, manual reverse-mode
gradients checked against finite differences, multi-space prediction
fusion, rotation-ensemble pseudo-labeling, and an affinity-complexity
auditor, all behind a reproducible CLI.
"""
from .attention import (
    AttentionWeights,
    HeadWeights,
    HsaConfig,
    PsaConfig,
    context_head,
    default_reduced,
    hsa_attention_maps,
    hsa_forward,
    load_head_weights,
    load_weights,
    nonlocal_forward,
    psa_attention_maps,
    psa_forward,
    random_head_weights,
    random_weights,
    save_head_weights,
    save_weights,
)
from .audit import AffinityLedger, Hsa, HsaNoPool, NonLocal, Psa, analytic_counts, measured_counts
from .autodiff import GradCheckReport, Tape, TapeNode, backward, grad_check
from .distill import (
    ColumnZeroPredictor,
    IdentityPredictor,
    LinearPredictor,
    RotationSchedule,
    directional_correlation,
    ensemble_members,
    rotate_columns,
    rotation_ensemble,
)
from .errors import (
    ContractError,
    DimensionError,
    GeometryError,
    NumericError,
    PanoctxError,
    SchemaError,
    UndefinedCorrelationError,
)
from .formats import LabelMap, load_label_map, load_tensors, save_label_map, save_tensors
from .fusion import (
    FusedResult,
    FusionStrategy,
    LogitVolume,
    SemanticSpace,
    fuse,
    intersect_spaces,
    load_logit_volume,
    pixel_variance,
    save_logit_volume,
    select_head,
)
from .tensor import (
    FeatureMap,
    Tensor,
    adaptive_avg_pool,
    concat_channels,
    concat_h,
    matmul,
    project_1x1,
    softmax_rows,
    split_h,
)

__version__ = "0.1.0"
