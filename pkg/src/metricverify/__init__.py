"""Pair verification with an angular-margin backbone and a two-channel verification classifier."""
from .backbone import Backbone, BackboneConfig, extract_dataset, extract_feature, flip_input
from .estimators import AngularMarginEmbedder, CosineVerifier, PairVerifier
from .evaluation import (
    EvalReport,
    classifier_eval,
    cosine_similarity,
    far_frr,
    optimal_threshold,
    relative_error_reduction,
    tenfold_cosine_eval,
)
from .io import load_checkpoint, save_checkpoint
from .losses import (
    ClassHead,
    LossConfig,
    a_softmax_loss,
    angular_phi,
    binary_posteriors,
    focal_loss,
    softmax_cross_entropy,
)
from .sampling import (
    IdentityDataset,
    MiningConfig,
    PairBatch,
    VerificationPair,
    combine_flipped,
    filter_hard,
    pair_distance,
    sample_balanced_batch,
    synth_identities,
)
from .tensor import RngStream, finite_difference_check, softmax_probs
from .training import TrainConfig, run_sweep, train_backbone, train_joint, train_verifier
from .verifier import (
    VerifierConfig,
    VerifierModel,
    build_verifier,
    stack_pair,
    verifier_train_step,
    verify_decision,
    verify_forward,
)

__version__ = "0.1.0"
