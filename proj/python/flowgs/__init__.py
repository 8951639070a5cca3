"""SfM-free Gaussian splatting with flow-guided pose estimation."""

import json

from ._core import (
    FlowgsError,
    evaluate_trajectory,
    psnr,
    render,
    run_cli,
    scene_size,
    ssim,
)
from ._core import default_config as _default_config

__all__ = [
    "FlowgsError",
    "default_config",
    "evaluate_trajectory",
    "psnr",
    "reconstruct",
    "render",
    "run_cli",
    "scene_size",
    "ssim",
    "synth",
]


def default_config():
    return json.loads(_default_config())


def _overrides(settings):
    args = []
    for key, value in (settings or {}).items():
        args += ["--set", f"{key}={json.dumps(value)}"]
    return args


def synth(out_dir, **settings):
    """Writes a synthetic dataset; keyword names are dotted config keys with '.' as '__'."""
    code = run_cli(["synth", str(out_dir)] + _overrides(_dotted(settings)))
    if code != 0:
        raise FlowgsError(f"synth failed with exit code {code}")


def reconstruct(input_dir, out_dir, **settings):
    code = run_cli(["reconstruct", str(input_dir), str(out_dir)] + _overrides(_dotted(settings)))
    if code != 0:
        raise FlowgsError(f"reconstruct failed with exit code {code}")
    with open(f"{out_dir}/metrics.json") as f:
        return json.load(f)


def _dotted(settings):
    return {k.replace("__", "."): v for k, v in settings.items()}
