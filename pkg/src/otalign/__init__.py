"""Unsupervised alignment of monolingual word-embedding spaces.

Learns bidirectional linear maps between two embedding spaces with no
cross-lingual supervision by minimizing differentiable entropic-transport
distances plus a round-trip consistency loss, optionally warm-started by
adversarial (gradient-penalty critic) training, and evaluates the learned
maps on lexicon induction and cross-lingual word-similarity prediction.
"""

from .embeddings import (
    EmbeddingSet,
    Lexicon,
    ParseError,
    SimDataset,
    l2_normalize,
    load_embeddings,
    load_lexicon,
    load_sim_dataset,
    sample_batch,
    save_embeddings,
    zipf_weights,
)
from .evaluate import (
    BliResult,
    EvaluationError,
    SimResult,
    SynthBenchmark,
    accuracy_at_k,
    pearson,
    synth_pair,
    topk_by_cosine,
    word_similarity_eval,
)
from .metric import pairwise_distance_backward, pairwise_distance_matrix, sqrt_cos_dist
from .sinkhorn import (
    SinkhornConfig,
    SinkhornError,
    TransportPlan,
    exact_ot_uniform,
    sinkhorn_backward,
    sinkhorn_distance,
    sinkhorn_plan,
)
from .transfer import (
    LinearMap,
    LossParts,
    TrainConfig,
    TrainReport,
    TrainingDiverged,
    apply_map,
    back_translation_loss,
    load_map,
    loss_gradients,
    save_map,
    total_loss,
    train,
)
from .wgan import Critic, WganConfig, critic_score, gradient_penalty, pretrain

__version__ = "0.1.0"
