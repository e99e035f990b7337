"""Visual token sequence compression over dumped VLM token embeddings.

Strategies: saliency-based selection, cluster-based retention/aggregation,
and importance-agnostic sampling, plus a transformer prefill cost model and
saliency-analysis tooling. See the ``vtc`` CLI for the file-level interface.
"""

from ._version import VERSION as __version__
from .clustering import (
    ClusterModel,
    cluster_aggregate,
    cluster_bundle,
    cluster_saliency,
    kmeans_pp,
    variant1_static,
    variant2_dynamic,
    variant3_coarse,
)
from .cost_model import (
    CostQuery,
    CostReport,
    HardwareConfig,
    ModelConfig,
    estimate,
    sweep,
)
from .pipeline import (
    IncomparableStrategiesError,
    SpecError,
    StrategySpec,
    adjusted_rand_index,
    execute_strategy,
    jaccard_index,
    run_compare,
    run_compress,
    run_layer_scan,
)
from .saliency import (
    SaliencyMap,
    basic_saliency_select,
    compute_saliency,
    export_heatmap,
    rank_correlation,
)
from .sampling import random_sample, spatial_sample
from .sequence import Aggregated, CompressedSequence, Retained, load_compressed, save_compressed
from .token_store import (
    BundleError,
    BundleFormatError,
    BundleIOError,
    LayerWeights,
    TokenBundle,
    load_bundle,
    save_bundle,
)

__all__ = [
    "__version__",
    "TokenBundle",
    "LayerWeights",
    "load_bundle",
    "save_bundle",
    "BundleError",
    "BundleFormatError",
    "BundleIOError",
    "SaliencyMap",
    "compute_saliency",
    "basic_saliency_select",
    "rank_correlation",
    "export_heatmap",
    "ClusterModel",
    "kmeans_pp",
    "cluster_bundle",
    "cluster_saliency",
    "variant1_static",
    "variant2_dynamic",
    "variant3_coarse",
    "cluster_aggregate",
    "CompressedSequence",
    "Retained",
    "Aggregated",
    "save_compressed",
    "load_compressed",
    "random_sample",
    "spatial_sample",
    "ModelConfig",
    "HardwareConfig",
    "CostQuery",
    "CostReport",
    "estimate",
    "sweep",
    "StrategySpec",
    "SpecError",
    "IncomparableStrategiesError",
    "execute_strategy",
    "run_compress",
    "run_compare",
    "run_layer_scan",
    "jaccard_index",
    "adjusted_rand_index",
]
