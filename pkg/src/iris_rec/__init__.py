"""Interest-related item similarity recommenders over multimodal item features."""

from .dataset import (
    InteractionDataset,
    SplitBundle,
    build_eval_candidates,
    leave_one_out_split,
    load_interactions,
    sample_train_negatives,
    sample_train_triples,
    user_history,
)
from .evaluation import EvalReport, evaluate, hr_at_n, ndcg_at_n, rank_candidates
from .features import FeatureStore, feature_network_forward, load_feature_store, zero_fill_modality
from .gradients import backward, finite_difference_check, regularization_term
from .model import (
    Hyperparams,
    ModelParams,
    Variant,
    attention_logits,
    baseline_itemsim_predict,
    fism_predict,
    interest_relevance,
    iris_predict,
    smoothed_softmax,
)
from .training import initialize, train

__version__ = "0.1.0"
