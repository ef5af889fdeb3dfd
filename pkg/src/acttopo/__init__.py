"""Persistent homology of input-induced neural-network activation graphs.

The pipeline: a forward pass records activations (`nn`), which induce a
weighted multipartite graph (`graphs`); its descending-weight filtration
yields 0-dimensional persistence pairs with full generator subgraphs
(`persistence`); diagrams are compared with Wasserstein/bottleneck distances
(`diagrams`); generator structure is vectorized and compared with the
lifetime-weighted distance and kernel (`vectors`); kernel SVM / kNN
classifiers (`learn`) and PGD adversaries with matched random controls
(`attacks`) support the end-to-end experiments (`experiments`, `cli`).
"""

from .attacks import ATTACK_PRESETS, AdversarialRecord, matched_random_perturbation, pgd_attack
from .data import (
    LabeledDataset,
    load_idx,
    save_idx,
    split,
    subset_per_class,
    synthetic_blobs,
    synthetic_digits,
)
from .diagrams import bottleneck, wasserstein
from .errors import (
    ActtopoError,
    ConfigurationError,
    ConsistencyError,
    FormatError,
    NumericError,
    UsageError,
    ValidationError,
)
from .graphs import (
    InducedEdge,
    InducedGraph,
    NodeId,
    build_induced_graph,
    verify_forward_equivalence,
)
from .learn import (
    BinarySvmModel,
    CvReport,
    OvoModel,
    cross_validate,
    knn_predict,
    load_ovo,
    ovo_predict,
    ovo_train,
    save_ovo,
    svm_train_binary,
)
from .nn import (
    ActivationRecord,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    NetworkSpec,
    NetworkWeights,
    accuracy,
    forward,
    init_weights,
    load_bundle,
    loss_and_gradients,
    preset,
    save_bundle,
    sgd_train,
)
from .persistence import (
    Filtration,
    GeneratorSubgraph,
    PersistencePair,
    PersistenceResult,
    betti0_at,
    build_filtration,
    compute_persistence,
    persistence_of_graph,
)
from .vectors import (
    EdgeItems,
    EdgeUniverse,
    LifetimeVector,
    auto_gamma,
    build_edge_universe,
    edge_items,
    items_distance,
    kernel_matrix,
    lifetime_weighted_distance,
    load_vector_store,
    pairwise_distance,
    save_vector_store,
    vector_from_items,
    vectorize,
)

__version__ = "0.1.0"
