"""Desk-scale KAN-enhanced FPN stem for ViT heatmap pose estimation.

A from-scratch numpy autodiff substrate carries seven ablation variants of
the front end between pixels and transformer tokens, a small ViT encoder,
and a deconvolutional heatmap head, all verified by finite-difference
gradient checks and exact reduction identities.
"""

from .errors import (CheckpointMismatch, DegenerateInput, DomainViolation, InvalidGeometry,
                     InvalidSpec, KanfpnError, NoTape, NonFiniteLoss, NotScalar,
                     PlacementFailure, ShapeMismatch, UnknownScope)
from .tensor import (GradientMap, Tape, Tensor, backward, dump_tensor, elementwise,
                     finite_diff_grad, load_tensor, matmul)
from .imageops import conv2d, conv_transpose2d, crop2d, norm2d, pool2d, upsample_nearest2x
from .layers import LayerSpec, Param, Params, init_params, load_checkpoint, save_checkpoint
from .kagn import KagnConvConfig, bottleneck_kagn_conv2d, gram_basis, kagn_conv2d, kagn_param_count
from .cbam import CbamConfig, cbam, channel_attention, spatial_attention
from .stem import BackboneConfig, FeaturePyramid, StemConfig, StemVariant, fpn_fuse, stem_forward
from .pose import (Keypoints, PoseModel, PoseModelConfig, build_pose_model, decode_keypoints,
                   mse_loss, pck, render_targets)
from .data import SceneSpec, Sample, SyntheticDataset, generate, split_indices
from .harness import (REFERENCE_AP, AdamState, TrainConfig, lr_at, make_batch, run_ablation,
                      run_stage, train_step)

__version__ = "0.1.0"
