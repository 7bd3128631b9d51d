"""Block-structured random-walk transition matrices on point clouds.

Builds a binary partition tree over the data, ties together transition
probabilities between groups of points into shared per-block values
optimized under a variational lower bound, learns the Gaussian kernel
bandwidth, multiplies the implied row-stochastic matrix with vectors in
time linear in the number of blocks, refines blocks greedily where the
bound gains most, and runs label propagation for semi-supervised
classification. Exact dense and k-nearest-neighbor transition matrices
are included as baselines and test oracles.
"""

from .dataset import (Dataset, LabelSplit, load_dataset, save_dataset,
                      load_labels, save_labels, make_split, split_indices,
                      sample_labeled, make_synthetic)
from .tree import (PartitionTree, build_tree, block_distance,
                   block_distances, log_block_weight)
from .blocks import (BlockModel, coarsest_partition, fully_refined_partition,
                     optimize_q, lower_bound, objective_decomposition,
                     row_sums, validate_model, sigma_init, sigma_update, fit)
from .refinement import RefinementQueue, gain_horizontal, split_local, refine
from .inference import (LabelMatrix, matvec, dense_expand, initial_labels,
                        label_propagate, predict_labels, predict_and_ccr)
from .baselines import (DenseTransition, SparseKnnTransition,
                        exact_transition, knn_build, knn_matvec, knn_refine)
from .model_io import save_model, load_model, read_matrix_csv, write_matrix_csv
from .estimators import BlockTransition, TransitionLabelPropagation

__version__ = "0.1.0"

__all__ = [
    "Dataset", "LabelSplit", "load_dataset", "save_dataset", "load_labels",
    "save_labels", "make_split", "split_indices", "sample_labeled",
    "make_synthetic",
    "PartitionTree", "build_tree", "block_distance", "block_distances",
    "log_block_weight",
    "BlockModel", "coarsest_partition", "fully_refined_partition",
    "optimize_q", "lower_bound", "objective_decomposition", "row_sums",
    "validate_model", "sigma_init", "sigma_update", "fit",
    "RefinementQueue", "gain_horizontal", "split_local", "refine",
    "LabelMatrix", "matvec", "dense_expand", "initial_labels",
    "label_propagate", "predict_labels", "predict_and_ccr",
    "DenseTransition", "SparseKnnTransition", "exact_transition",
    "knn_build", "knn_matvec", "knn_refine",
    "save_model", "load_model", "read_matrix_csv", "write_matrix_csv",
    "BlockTransition", "TransitionLabelPropagation",
    "__version__",
]
