"""Turn multi-camera frame dumps into clean, posed NeRF datasets."""

from .blur import SharpnessReport, classify_blur, filter_blurred, laplacian_variance, sharpness_fm
from .colmap import SparseModel, parse_colmap_binary, parse_colmap_text, read_model
from .config import ConfigError, PipelineConfig, load_config
from .dedup import BKTree, PerceptualHash, find_duplicates, hamming, phash64, reduce_duplicates
from .export import NerfDataset, emit_llff, emit_transforms_json, validate_dataset
from .fft import fft2d, ifft2d
from .frames import Frame, FrameId, FrameSet, apply_rotation_map, enumerate_sources, rotate_180, subsample
from .metrics import MetricReport, psnr, ssim
from .pipeline import PipelineFailure, PipelineManifest, run_pipeline
from .poses import colmap_to_nerf_convention, compute_bounds, normalize_scene, quat_to_rotmat, w2c_to_c2w

__version__ = "0.1.0"
