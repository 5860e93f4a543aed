"""Feature-space knowledge deletion for small classifiers.

Erasure by pruning principal directions of forget-set features (``esc``), a
learned element-wise refinement of that erasure (``esc_t``), baseline unlearning
methods and the evaluation suite used to compare them.
"""

from .data import LabeledSet, SplitDataset, generate_blobs, load_csv, save_csv, split_by_classes, split_random
from .esc import EscConfig, FeatureTransform, PrunedBasis, compute_k, esc_apply, esc_fit, merge_projectors
from .esc_t import EscTConfig, MaskState, RefinedBasis, esc_t_apply, esc_t_fit, mask_gradient, pce_loss, train_mask
from .linalg import SvdBasis, orthonormal_complete, projector_apply, svd_complete
from .metrics import EvalReport, ProbeConfig, accuracy, evaluate, kr_probe, mean_metrics, mia_score, zrf
from .model import MlpModel, TrainConfig, forward_features, forward_logits, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
