"""State-conditioned neural radiance fields for articulated objects.

A shared field is modulated per articulation state by a hypernetwork that turns a
learned state latent into low-rank multipliers on the hidden weights. Interpolating
latents renders states that were never observed.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluate import EvalReport, chamfer, eval_interpolation, extract_points, psnr, ssim
from .field import FieldConfig
from .hyper import HyperConfig, interpolate_latent
from .losses import LossWeights
from .model import ModulatedField
from .synthdata import StateDataset, generate_dataset, read_dataset, write_dataset
from .train import TrainConfig, TrainingAborted, load_model, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "EvalReport",
    "FieldConfig",
    "HyperConfig",
    "LossWeights",
    "ModulatedField",
    "StateDataset",
    "TrainConfig",
    "TrainingAborted",
    "chamfer",
    "eval_interpolation",
    "extract_points",
    "generate_dataset",
    "interpolate_latent",
    "load_checkpoint",
    "load_model",
    "psnr",
    "read_dataset",
    "save_checkpoint",
    "ssim",
    "train",
    "write_dataset",
]
