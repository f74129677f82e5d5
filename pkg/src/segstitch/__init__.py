"""Repulsive-prior scene synthesis and sliding-window consensus segmentation."""

from .boxes import (
    BoundingBox,
    ProposalSet,
    SafParams,
    nms,
    overlap,
    saf_transform,
    select_top_k,
)
from .config import RunConfig, desk_scale_config
from .consensus import (
    CommunityLabels,
    EdgeList,
    IndexMatrix,
    ResolutionConfig,
    WindowPlan,
    auto_resolution,
    consensus_segment,
    detect_communities,
    merge_edges,
    point_estimate,
    tile_plan,
    window_edges,
)
from .dpp import (
    KernelMatrix,
    KernelParams,
    build_rbf_kernel,
    dpp_expected_cardinality,
    dpp_log_prob,
    dpp_sample,
    grid_kl_mc,
)
from .errors import (
    ConfigError,
    DimensionError,
    NumericalError,
    ParameterError,
    SegstitchError,
)
from .estimator import ConsensusSegmenter
from .grids import GridSpec
from .metrics import EvalReport, ari, boundary_split_count
from .objective import (
    LossTerms,
    NGridState,
    QValues,
    SaprState,
    estimate_sigma,
    gaussian_kl,
    kl_total,
    overlap_penalty,
    q_values,
    recon_loss,
    sapr_step,
    warmup_blend,
)
from .scene import (
    BackgroundParams,
    BlobPriors,
    FourierBlobParams,
    NoiseConfig,
    SceneBundle,
    SceneConfig,
    compose,
    crop,
    generate_scene,
    mix,
    paste,
    render_background,
    render_blob,
    sample_mask,
    simulate_posterior_samples,
)

__version__ = "0.1.0"
