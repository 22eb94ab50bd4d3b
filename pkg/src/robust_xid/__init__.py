"""Robust cross-modal instance discrimination at desk scale.

A numpy implementation of contrastive cross-modal representation learning
with memory-bank targets, made robust to noisy correspondences two ways:
faulty positives are down-weighted by the cumulative distribution of
cross-modal correspondence scores, and faulty negatives are softened by
mixing estimated instance-similarity distributions into the one-hot
contrastive targets. Ships with a synthetic two-modality data harness and
an experiment CLI that reproduces the method's noise-robustness phenomena
in minutes on a CPU.
"""

from .config import EvalConfig, ExperimentConfig, OutputConfig, load_config
from .encoder import AdamState, MlpEncoder, adam_step, cosine_lr
from .evaluation import (
    EvalReport,
    faulty_detection_auc,
    few_shot_probe,
    retrieval_r_at_k,
    score_histogram,
)
from .losses import (
    ContrastInstance,
    LossGrad,
    robust_batch_loss,
    soft_xid_grad,
    soft_xid_loss,
    xid_grad,
    xid_loss,
    xid_posterior,
)
from .memory_bank import MemoryBank, NegativeSet, ema_update, init_bank, lookup, sample_negatives
from .soft_targets import (
    CandidateSet,
    TargetDistribution,
    bootstrap_scores,
    build_candidate_set,
    ccp_scores,
    mix_targets,
    neighbor_scores,
    oracle_scores,
    swapped_scores,
)
from .synth_data import SynthConfig, SynthDataset, generate, inject_faulty_positives
from .trainer import TrainConfig, TrainState, robust_stage, train, train_step, warmup
from .weighting import (
    WeightParams,
    WeightState,
    compute_weight_state,
    delta_for_noise_fraction,
    oracle_weights,
    sample_weight,
    truncate,
)

__version__ = "0.1.0"
