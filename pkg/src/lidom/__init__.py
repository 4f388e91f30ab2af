"""LiDAR odometry from spherical range images fused with a ground BEV map."""

from lidom.cli import RunConfig, dump_plot_data, run
from lidom.config import PipelineConfig, load_config, parse_config, save_config
from lidom.evaluation import RelErrors, evaluate, format_report, report_lines
from lidom.geometry import Pose, exp_map, rotation_angle, skew
from lidom.model import ModelState, dump_model_xyz, model_size, update_model
from lidom.pipeline import STAGE_NAMES, FrameResult, OdometryPipeline
from lidom.registration import (
    RegistrationConfig,
    RegistrationResult,
    adaptive_weight,
    associate_ground,
    associate_nonground,
    gauss_newton_step,
    predict_initial,
    register,
)

__all__ = [
    "FrameResult",
    "ModelState",
    "OdometryPipeline",
    "PipelineConfig",
    "Pose",
    "RegistrationConfig",
    "RegistrationResult",
    "RelErrors",
    "RunConfig",
    "STAGE_NAMES",
    "adaptive_weight",
    "associate_ground",
    "associate_nonground",
    "dump_model_xyz",
    "dump_plot_data",
    "evaluate",
    "exp_map",
    "format_report",
    "gauss_newton_step",
    "load_config",
    "model_size",
    "parse_config",
    "predict_initial",
    "register",
    "report_lines",
    "rotation_angle",
    "run",
    "save_config",
    "skew",
    "update_model",
]
__version__ = "0.1.0"
