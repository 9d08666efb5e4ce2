"""Self-supervised pixel-level matching for video object segmentation.

Train an embedding + matching network from unlabeled video with a color
reconstruction loss, then propagate a first-frame segmentation mask through
the video by warping per-class indicator maps with the predicted offsets.
"""

__version__ = "0.1.0"

from .tensor import (
    Tensor, backward, zero_grads, gaussian_init, set_finite_checks,
    add, sub, mul, scale, square, tensor_sum, weighted_sum, relu, concat_channels,
)
from .layers import conv2d, conv_transpose2d, batch_norm, RunningStats, downsample_quarter
from .deform import kernel_taps, bilinear_sample, deform_conv2d, warp
from .gradcheck import grad_check
from .errors import PixmatchError, ConfigError, DatasetError, CheckpointError
from .model import (
    ModelConfig, ModelParams, VARIANTS, build_model, frames_to_tensor,
    embed, embed_pair, match_offsets, match_internals, forward_train,
    layer_sampling_locations,
)
from .train import (
    TrainConfig, OptimizerState, TrainResult, sample_pair, reconstruction_loss,
    poly_lr, sgd_step, train,
)
from .infer import (
    split_classes, mask_to_quarter, mask_from_quarter, predict_offsets,
    propagate_mask, run_sequence,
)
from .metrics import (
    jaccard, boundary_f, default_boundary_tol, evaluate_sequence, build_report,
    EvalReport, ObjectScore, rf_cosine_similarity, pca_project,
)
from .synth import SceneSpec, ObjectSpec, VideoSequence, gen_sequence, make_random_scene
from .dataio import (
    Checkpoint, checkpoint_from_params, save_checkpoint, load_checkpoint,
    params_from_checkpoint, read_dataset, read_sequence, write_sequence,
    read_attributes, parse_config_text, read_config,
    save_frame, load_frame, save_mask, load_mask,
)
