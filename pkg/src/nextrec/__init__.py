"""Next-POI recommendation with pre-trained POI embeddings.

Pipeline: ingest and filter check-in corpora, pre-train POI embeddings from
geographically biased random walks (skip-gram, hierarchical softmax), learn
user/POI/meta intent representations with temporal context through one ReLU
layer trained by SGD, and evaluate ranked recommendations with Acc@K / MAP,
including cold-start users and hidden-dimension interpretation.
"""

from .config import RunConfig
from .data import (
    CheckIn,
    DataError,
    Dataset,
    GeoStats,
    Poi,
    Split,
    TransitionGraph,
    UserRecord,
    build_transition_counts,
    build_transition_graph,
    compute_geo_stats,
    filter_activity,
    load_checkins,
    split_chronological,
)
from .evaluation import (
    EvalReport,
    acc_at_k,
    cold_start_eval,
    dimension_keywords,
    evaluate,
    mean_average_precision,
    word_contribution,
)
from .model import (
    Hyperparams,
    MetaIndex,
    Parameters,
    QueryContext,
    build_meta_index,
    init_parameters,
    interval_matrix,
    predict_distribution,
    recommend_topk,
)
from .pretrain import (
    WalkConfig,
    generate_walks,
    geo_kernel,
    init_user_embeddings,
    walk_transition_distribution,
)
from .skipgram import SkipGramConfig, train_skipgram
from .train import (
    DivergenceError,
    TrainConfig,
    gradient_check,
    instance_gradients,
    instance_loss,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CheckIn",
    "DataError",
    "Dataset",
    "DivergenceError",
    "EvalReport",
    "GeoStats",
    "Hyperparams",
    "MetaIndex",
    "Parameters",
    "Poi",
    "QueryContext",
    "RunConfig",
    "SkipGramConfig",
    "Split",
    "TrainConfig",
    "TransitionGraph",
    "UserRecord",
    "WalkConfig",
    "acc_at_k",
    "build_meta_index",
    "build_transition_counts",
    "build_transition_graph",
    "cold_start_eval",
    "compute_geo_stats",
    "dimension_keywords",
    "evaluate",
    "filter_activity",
    "generate_walks",
    "geo_kernel",
    "gradient_check",
    "init_parameters",
    "init_user_embeddings",
    "instance_gradients",
    "instance_loss",
    "interval_matrix",
    "load_checkins",
    "mean_average_precision",
    "predict_distribution",
    "recommend_topk",
    "sgd_step",
    "split_chronological",
    "train",
    "train_skipgram",
    "walk_transition_distribution",
    "word_contribution",
]
