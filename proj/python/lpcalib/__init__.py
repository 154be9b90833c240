"""LiDAR to pose-sensor extrinsic calibration."""

import json
import os

from ._lpcalib import (
    ConfigError,
    DataError,
    Error,
    StageFailure,
    count_occupied,
    default_extrinsic,
    euler_zyx_to_rotation,
    extrinsic_error,
    rotation_to_euler_zyx,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
)
from . import _lpcalib

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "StageFailure",
    "calibrate",
    "count_occupied",
    "default_extrinsic",
    "euler_zyx_to_rotation",
    "evaluate",
    "extrinsic_error",
    "normalized_config",
    "rotation_to_euler_zyx",
    "se3_exp",
    "se3_log",
    "simulate",
    "so3_exp",
    "so3_log",
]


def normalized_config(config=None, base_dir=""):
    """Config dict with every default filled in."""
    return json.loads(_lpcalib.config_json(json.dumps(config or {}), os.fspath(base_dir)))


def simulate(out_dir, simulator=None, threads=1):
    """Writes a synthetic dataset; `simulator` overrides the simulator block."""
    config = {"simulator": simulator} if simulator is not None else {}
    _lpcalib.simulate(json.dumps(config), os.fspath(out_dir), threads)


def calibrate(config_path, stages="", out_dir="", threads=0, resume=False):
    """Runs the pipeline and returns the final result as a dict."""
    return json.loads(
        _lpcalib.calibrate(os.fspath(config_path), stages, os.fspath(out_dir), threads, resume)
    )


def evaluate(results_glob, reference):
    return json.loads(_lpcalib.evaluate(results_glob, os.fspath(reference)))
