"""Measure how the diversity of consumed content shifts over a user's history.

The package covers the full path from raw viewing logs to a statistical
report: log ingestion and block extraction, a bipartite user-content graph,
negative-sampling SGD embeddings, agglomerative and fuzzy clustering on the
content vectors, per-block diversity metrics, and paired significance tests.
"""

from viewdrift.corpus import (
    BlockPair,
    EligibilityCriteria,
    EventLog,
    Excluded,
    ParseError,
    UserProfile,
    ViewEvent,
    WatchedHistory,
    derive_watched,
    extract_blocks,
    filter_eligible,
    load_events,
    load_profiles,
)
from viewdrift.graph import (
    AliasTable,
    BipartiteGraph,
    GraphConstructionError,
    build_alias_table,
    build_bipartite,
    build_noise_table,
)
from viewdrift.embedding import (
    EmbeddingMatrix,
    SecondOrderEmbedding,
    TrainConfig,
    TrainingDivergedError,
    edge_loss,
    learning_rate,
    load_embeddings,
    nearest_neighbors,
    save_embeddings,
    train,
)
from viewdrift.clustering import (
    AverageLinkageClustering,
    FuzzyCMeans,
    HardAssignment,
    MembershipMatrix,
    cut_assignments,
    fcm_objective,
    hard_cluster,
    soft_cluster,
)
from viewdrift.diversity import (
    DiversityScore,
    ambiguity,
    avg_pairwise_distance,
    cde,
    cosine_distance,
    kd_sweep,
    max_ambiguity,
)
from viewdrift.stats import (
    DegenerateVarianceError,
    GroupSplit,
    TestResult,
    ambiguity_group_report,
    diversity_change_report,
    paired_t,
    regularized_incomplete_beta,
    split_by_max_ambiguity,
    student_t_cdf,
    welch_t,
)
from viewdrift.synth import GroundTruth, SynthConfig, generate, write_corpus
from viewdrift.pipeline import PipelineConfig, emit_histogram, run_pipeline

__version__ = "0.1.0"
