"""Portrait time-translation toolkit: per-decade generator families, latent
inversion, transferable weight-offset tuning, identity clustering, and a
generative metric suite."""

from .specs import (
    GeneratorSpec,
    LatentCode,
    ParameterVector,
    TmtOffset,
    layer_swap,
    offset_apply,
    offset_diff,
)
from .networks import synthesize
from .family import GeneratorFamily, load_family, save_family
from .training import TrainConfig, finetune_decade, identity_loss, train_family
from .inversion import (
    InversionResult,
    ProjectConfig,
    TmtConfig,
    project,
    transform_across_decades,
    tune_pivotal,
)
from .perception import (
    EmbeddingVector,
    WeightedMask,
    cosine_similarity,
    masked_loss,
    segment_to_mask,
)
from .metrics import (
    FeatureSet,
    MetricReport,
    compute_dca,
    compute_fid,
    compute_id_acc,
    compute_kmmd,
    evaluate_suite,
)
from .clustering import (
    ClusterResult,
    FaceGraph,
    FaceNode,
    assign_identity,
    build_face_graph,
    cluster_faces,
    enumerate_maximal_cliques,
    purify_cluster,
    select_disjoint_clusters,
)
from .weightspace import WeightPoint, offset_direction_similarity, pca_embed_weights
from .manifest import DatasetManifest, ManifestRecord, curate_manifest, split_dataset
from .config import ExperimentConfig

__version__ = "0.1.0"
