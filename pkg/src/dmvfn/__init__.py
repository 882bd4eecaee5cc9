"""Dynamic multi-scale voxel flow network for video prediction.

A desk-scale video prediction engine on a from-scratch numpy autodiff
core: iterative voxel-flow refinement blocks, per-input dynamic routing
(straight-through Bernoulli or Gumbel Softmax), Laplacian-pyramid
training loss, MS-SSIM/PSNR evaluation and a FLOPs ledger for the
dynamic-cost accounting.
"""

from .tensor import (
    Tensor, Param, ShapeError, no_grad,
    conv2d, transposed_conv2d, bilinear_resize, sigmoid, prelu,
    concat_channels, global_avg_pool, linear, ste_bernoulli,
)
from .warp import VoxelFlow, backward_warp, apply_voxel_flow, clamp01
from .net import (
    MvfbConfig, MvfbBlock, BlockState, DmvfnConfig, DmvfnModel, ForwardResult,
    SCHEDULES, mvfb_forward, dmvfn_forward, sequential_forward, predict_sequence,
)
from .routing import (
    RoutingMode, RoutingNet, RoutingVector,
    routing_logits, stebs_sample, stebs_probabilities, gumbel_sample, make_routing, tau_schedule,
)
from .loss import LossConfig, laplacian_pyramid, reconstruct_pyramid, lap_l1, total_loss, supervision_weights
from .metrics import ms_ssim, psnr, MetricReport, copy_last_baseline, evaluate_model
from .flops import (
    FlopsLedger, UsageStats, conv2d_flops, transposed_conv2d_flops, linear_flops,
    block_flops, routing_net_flops, model_ledger, usage_rate,
)
from .data import (
    SynthConfig, Shape, ClipRecord, motion_bin_of, render_clip, gen_moving_shapes,
    load_sequence, save_frames, sample_patch, interval_subsample,
    write_manifest, load_manifest, load_dataset, write_synth_dataset,
)
from .optim import adamw_step, cosine_lr
from .train import TrainConfig, TrainResult, train, build_model
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, restore_model, model_from_checkpoint
from .errors import DataError, NumericError

__version__ = "0.1.0"
