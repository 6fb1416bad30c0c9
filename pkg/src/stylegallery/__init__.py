"""StyleGallery: training-free semantic-aware style transfer.

Gallery-scale region matching over diffusion-feature clusters, with
energy-guided latent sampling. Every stage runs on a deterministic
synthetic backend so the whole pipeline is testable on a CPU.
"""

__version__ = "0.1.0"

from .backends import (  # noqa: F401
    AttentionBundle,
    DiffusionBackend,
    FeatureStack,
    ImageRecord,
    LatentState,
    SemanticTokenGrid,
    SyntheticBackend,
    create_backend,
)
from .clustering import (  # noqa: F401
    ClusterMask,
    ClusterOptConfig,
    FusionWeights,
    classification_accuracy,
    fuse_features,
    ingest_base_mask,
    initial_clusters,
    optimize_clusters,
)
from .geometry import Circle, min_enclosing_circle  # noqa: F401
from .matching import (  # noqa: F401
    MatchTable,
    RegionDescriptor,
    SimilarityConfig,
    apply_overrides,
    describe_regions,
    match_gallery,
    pairwise_similarity,
)
from .metrics import (  # noqa: F401
    BlockFeatureSet,
    MetricReport,
    SyntheticBlockExtractor,
    art_fid,
    block_features,
    evaluate_pair,
    gram_loss,
    style_score,
)
from .transfer import (  # noqa: F401
    LossConfig,
    LossReport,
    SparseAttentionPlan,
    build_attention_plan,
    global_content_loss,
    guided_sampling,
    masked_attention,
    regional_style_loss,
    total_loss,
)
