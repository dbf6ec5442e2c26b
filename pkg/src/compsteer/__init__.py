"""Compression-based similarity analysis with context-steered embeddings."""

from .compressors import (
    CodecId,
    ReferenceIndex,
    RlzParse,
    RlzPhrase,
    compressed_size,
    concat_compressed_size,
    rlz_compressed_size_bits,
    rlz_factorize,
)
from .distances import (
    CorpusObject,
    DistanceMatrix,
    RowStats,
    build_distance_matrix,
    compute_row_stats,
    hex_encode,
    load_matrix,
    ncd,
    nrc,
    row_stats_from_matrix,
    save_matrix,
    standardize_rows,
)
from .clustering import (
    BehaviorMatrix,
    Dendrogram,
    Partition,
    behavior_distance,
    best_partition,
    class_grouped_distance,
    enumerate_partitions,
    linkage,
    silhouette,
)
from .steering import (
    EmbeddingModel,
    SelectionPolicy,
    SteeringConfig,
    build_embedding_model,
    embed_row,
    embed_rows,
    model_from_json,
    model_to_json,
    norm01,
    reference_weights,
    select_clusters,
    select_references,
)
from .forest import RandomForest, macro_f1
from .evaluation import (
    EvalReport,
    FoldPlan,
    MethodConfig,
    baseline_context,
    fragment_vote,
    knn_predict,
    make_folds,
    mask_columns,
    run_experiment,
)

__version__ = "0.1.0"
