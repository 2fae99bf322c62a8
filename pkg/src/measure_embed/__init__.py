"""Quantization and Hilbert-space embedding of families of discrete measures.

The package approximates N probability measures by K-point discrete measures
(per-measure or mean-measure quantization), embeds them through linearized
optimal transport or kernel mean embeddings, and exposes the downstream
statistics (Gram matrices, PCA, LDA, dispersion, clustering scores, and
free-support barycenters).
"""

from .core import (
    Dataset,
    DiscreteMeasure,
    RngStream,
    ValidationError,
    load_dataset,
    load_matrix,
    save_dataset,
    save_matrix,
    subsample_measure,
)
from .ot import (
    NestedCoupling,
    TransportPlan,
    barycentric_projection,
    nested_w2sq,
    solve_ot,
    squared_distances,
    w2,
    w2sq,
    w2sq_shared_support,
)
from .quantize import (
    Centers,
    QuantizedFamily,
    VoronoiPartition,
    augment_centers,
    kmeanspp_init,
    lloyd,
    mean_measure,
    quantization_error,
    quantize_each,
    quantize_mean,
    random_subset_quantize,
    voronoi_assign,
)
from .embed_lot import (
    LotEmbedding,
    ReferenceMeasure,
    embed_family,
    lot_distance,
    lot_embed,
    lot_gram,
    lot_inner,
    make_reference,
)
from .embed_kme import (
    Kernel,
    NystromKme,
    RffMap,
    kme_gram,
    kme_inner,
    median_heuristic,
    mmd,
    nystrom_fit,
    nystrom_gram,
    nystrom_inner,
    nystrom_residual,
    rff_embed,
    rff_map,
)
from .stats import (
    LdaModel,
    PcaResult,
    bcss,
    dispersion,
    dispersion_bound_check,
    free_support_barycenter,
    gram_pca,
    lda_fit,
    lda_predict,
    pca_excess_risk,
    train_test_split,
    wcss,
)
from .synth import (
    ShiftScalingParams,
    default_params,
    gen_dataset,
    sample_base,
    save_synth,
    true_kme_gram,
    true_lot_gram,
)

__version__ = "0.1.0"
