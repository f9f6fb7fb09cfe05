"""Frame-wise temporal action segmentation with domain adaptation.

A self-contained stack: a reverse-mode autodiff core over frame-major
sequence tensors (compiled convolution kernels with a numpy fallback), a
multi-stage dilated TCN backbone, adversarial and self-supervised
adaptation losses, segmentation metrics, dataset formats, a synthetic
cross-domain generator, and a deterministic training harness with a CLI.
"""

from ._kernels import BACKEND as kernel_backend
from .adapt import (LossWeights, PermutationLabel, attention_weights, beta_schedule,
                    datp, decode_permutation, encode_permutation, permutation_count,
                    shuffle_and_label, split_segments)
from .autodiff import Tensor, backward, gradient_reverse, no_grad
from .data import Dataset, SynthConfig, Video, generate_synthetic, load_dataset, save_corpus
from .metrics import (MetricsReport, Segment, aggregate_corpus, edit_score, f1_at_k,
                      frame_accuracy, labels_to_segments, score_video)
from .model import (ModelConfig, SegmentationModel, StageConfig, load_checkpoint,
                    save_checkpoint)
from .harness import TrainConfig, evaluate, train

__version__ = "0.1.0"
