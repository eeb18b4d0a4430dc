"""Probabilistic prototype contrastive learning and wavelet structure
preservation for domain-generalised segmentation, in plain numpy."""
from .contrastive import ContrastiveConfig, contrast_loss, mgf_term, pixel_loss_closed, pixel_loss_mc
from .losses import LossReport, ce_loss, dice_loss, total_loss
from .net import SgdConfig, TinyNet, sgd_step
from .pipeline import PipelineConfig, ProbSegmenter, pipeline_step, train
from .stats import (
    ClassStats,
    GaussianPrototypes,
    LocalClassSummary,
    StatsBank,
    bank_batch_oracle,
    bank_update,
    local_summary,
    merge_cov,
    merge_mean,
)
from .style import StyleConfig, style_perturb
from .tensor_io import label_downsample, make_rng, read_image, tensor_read, tensor_write, write_image
from .wavelet import GateParams, WaveletPyramid, dwt2, idwt2, init_gates, wesp_apply, wesp_fuse

__version__ = "0.1.0"
