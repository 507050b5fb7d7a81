"""Similar-patch search for tiled slide images.

Pipeline: synthesize or mount a tile store, extract labeled patches,
embed each patch under all 8 orientations, index the embeddings in
sharded kd-trees or hash buckets, and serve region queries with
orientation dedup and a same-slide diversity filter. The evaluation
module scores retrieval runs; the service module adds HTTP access and a
blinded rating-study workflow.
"""

from .core import (
    Gleason,
    LabelSet,
    Magnification,
    Orientation,
    PatchRecord,
    SlideRef,
    apply_orientation,
    base_center,
    compose_orientations,
)
from .embedder import (
    EmbedderDescriptor,
    OrientedEmbeddingSet,
    embed_all_orientations,
    get_embedder,
    import_embeddings,
    preprocess_query,
    reference_embed,
    resize_to_224,
)
from .index import (
    IndexParams,
    ShardSet,
    brute_force_search,
    build_shards,
    load_db,
    save_db,
    storage_stats,
)
from .query import (
    QueryEngine,
    QueryOutcome,
    QueryResult,
    QuerySpec,
    RegionSource,
    dedup_orientations,
    diversity_filter,
    latency_bench,
    random_results,
)
from .evaluation import (
    ChiSquaredResult,
    EvalReport,
    QueryRecord,
    RetrievalRun,
    chi_squared_2x2,
    confusion_matrix,
    evaluate_run,
    metric_variants,
    rubric_score,
    top_k_score,
)

__version__ = "0.1.0"
