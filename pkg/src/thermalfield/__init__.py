"""Thermal radiance fields: IR image mapping, volume rendering, joint pose refinement and mesh export."""

from .dataset import DatasetBundle, load_dataset, save_dataset
from .field import EncodingConfig, FieldParams, field_backward, field_forward, init_params
from .geometry import Intrinsics, Pose, SceneBox, se3_exp, se3_log
from .losses import hssim, pixel_loss, psnr, ssim, structural_loss
from .mesh import DensityGrid, TriangleMesh, export_mesh, marching_cubes, watertight_check
from .render import SamplingConfig, composite, render_image
from .thermal_image import RawThermalImage, ThermalImage, decode_pgm, thermal_map
from .train import TrainConfig, TrainState, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle", "load_dataset", "save_dataset",
    "EncodingConfig", "FieldParams", "field_backward", "field_forward", "init_params",
    "Intrinsics", "Pose", "SceneBox", "se3_exp", "se3_log",
    "hssim", "pixel_loss", "psnr", "ssim", "structural_loss",
    "DensityGrid", "TriangleMesh", "export_mesh", "marching_cubes", "watertight_check",
    "SamplingConfig", "composite", "render_image",
    "RawThermalImage", "ThermalImage", "decode_pgm", "thermal_map",
    "TrainConfig", "TrainState", "fit", "train_step",
]
