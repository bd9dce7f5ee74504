"""Early-exit inference driven by per-layer class means."""

from .class_means import ClassMeansModel, class_probabilities, fit_class_means
from .data import Dataset, generate_clusters, load_dataset, save_dataset, split
from .exits import (ClassMeansPolicy, CombinedPolicy, DecisionTable, InternalPolicy, evaluate,
                    infer_class_means, infer_combined, infer_internal)
from .internal import DecisionRule, build_bundle, place_ics, train_ics
from .nn import Network, TrainConfig, init_mlp, sgd_train
from .search import evaluate_candidates, sample_threshold_vectors, time_sharing_accuracy, upper_frontier

__version__ = "0.1.0"
