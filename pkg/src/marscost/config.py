"""Run configuration: one JSON file drives the whole pipeline.

The schema is validated strictly: unknown keys are rejected with their full
path, types are checked, and defaults fill anything omitted. Every command
reads the same file, so a run is reproducible from the config plus the seed.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import BevLayout
from .evaluation import ABLATION_MODES, AblationSpec
from .labeling import LabelingConfig
from .net import NetConfig
from .train import AugmentConfig, TrainConfig


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration files."""


_NUMBER = (int, float)

# schema: key -> (type, default) where default=_REQUIRED means the key must be present
_REQUIRED = object()

_SCHEMA = {
    "seed": (int, 7),
    "workdir": (str, "runs/default"),
    "sim": {
        "terrain": {
            "rows": (int, 96),
            "cols": (int, 96),
            "cell_size": (_NUMBER, 0.2),
            "roughness": (_NUMBER, 0.6),
            "heightmap_path": ((str, type(None)), None),
        },
        "chassis_height": (_NUMBER, 0.35),
        "speed": (_NUMBER, 1.0),
        "dt": (_NUMBER, 0.1),
        "gravity": (_NUMBER, 9.81),
        "imu_noise_scale": (_NUMBER, 3.0),
        "trajectories": (list, _REQUIRED),
        "lidar_rays": (int, 900),
        "lidar_max_range": (_NUMBER, 18.0),
        "camera_h_px": (int, 32),
        "camera_w_px": (int, 48),
        "sensor_stride": (int, 8),
    },
    "labeling": {
        "w1": (_NUMBER, 1.0),
        "w2": (_NUMBER, 1.0),
        "w3": (_NUMBER, 1.0),
        "epsilon": (_NUMBER, 1e-3),
        "kernel_radius": (_NUMBER, 1.0),
        "coarse_res": (_NUMBER, 0.2),
        "fine_res": (_NUMBER, 0.05),
    },
    "model": {
        "channels": (int, 12),
        "stage2_channels": (int, 16),
        "stage3_channels": (int, 24),
        "film_hidden": (int, 16),
        "head_channels": (int, 32),
        "max_points_per_pillar": (int, 32),
        "bev_size": (int, 32),
        "bev_resolution": (_NUMBER, 0.2),
    },
    "train": {
        "lr": (_NUMBER, 1e-4),
        "batch_size": (int, 8),
        "huber_delta": (_NUMBER, 0.1),
        "smooth_lambda": (_NUMBER, 0.1),
        "epochs": (int, 60),
        "seed": (int, 1),
        "holdout_fraction": (_NUMBER, 0.25),
        "film_identity": (bool, False),
        "augment": {
            "rotate": (bool, True),
            "translate": (bool, True),
            "max_shift_cells": (int, 2),
            "noise_sigma": (_NUMBER, 0.0),
        },
    },
    "eval": {
        "modes": (list, list(ABLATION_MODES)),
        "occlusion_fraction": (_NUMBER, 0.3),
        "drop_fraction": (_NUMBER, 0.3),
        "noise_sigma_image": (_NUMBER, 0.02),
        "noise_sigma_points": (_NUMBER, 0.02),
        "seed": (int, 3),
    },
}


def _validate(node, schema, path=""):
    if not isinstance(node, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = {}
    for key in node:
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
    for key, rule in schema.items():
        full = f"{path}{key}"
        if isinstance(rule, dict):
            sub = node.get(key, {})
            out[key] = _validate(sub, rule, full + ".")
            continue
        typ, default = rule
        if key not in node:
            if default is _REQUIRED:
                raise ConfigError(f"missing required config key {full!r}")
            out[key] = default
            continue
        val = node[key]
        if typ is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"config key {full!r} must be an integer")
        elif typ is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"config key {full!r} must be a boolean")
        elif typ is _NUMBER:
            if isinstance(val, bool) or not isinstance(val, _NUMBER):
                raise ConfigError(f"config key {full!r} must be a number")
        elif not isinstance(val, typ):
            raise ConfigError(f"config key {full!r} has the wrong type")
        out[key] = val
    return out


@dataclass
class RunConfig:
    """Validated run configuration with typed section accessors."""

    raw: dict
    source: str = "<dict>"

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def workdir(self) -> Path:
        return Path(self.raw["workdir"])

    @property
    def sim(self) -> dict:
        return self.raw["sim"]

    def trajectories(self):
        wps = self.raw["sim"]["trajectories"]
        if not wps:
            raise ConfigError("sim.trajectories must list at least one waypoint path")
        out = []
        for t_idx, wp in enumerate(wps):
            arr = np.asarray(wp, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
                raise ConfigError(
                    f"sim.trajectories[{t_idx}] must be a list of >= 2 [x, y] waypoints"
                )
            out.append(arr)
        return out

    def labeling_config(self) -> LabelingConfig:
        s = self.raw["labeling"]
        try:
            return LabelingConfig(**s)
        except ValueError as e:
            raise ConfigError(f"labeling section: {e}") from e

    def net_config(self) -> NetConfig:
        s = self.raw["model"]
        try:
            return NetConfig(
                channels=s["channels"],
                stage2_channels=s["stage2_channels"],
                stage3_channels=s["stage3_channels"],
                film_hidden=s["film_hidden"],
                head_channels=s["head_channels"],
                max_points_per_pillar=s["max_points_per_pillar"],
            )
        except ValueError as e:
            raise ConfigError(f"model section: {e}") from e

    def bev_layout(self) -> BevLayout:
        s = self.raw["model"]
        try:
            return BevLayout(s["bev_size"], s["bev_resolution"])
        except ValueError as e:
            raise ConfigError(f"model section: {e}") from e

    def train_config(self) -> TrainConfig:
        s = self.raw["train"]
        try:
            return TrainConfig(
                lr=s["lr"],
                batch_size=s["batch_size"],
                huber_delta=s["huber_delta"],
                smooth_lambda=s["smooth_lambda"],
                epochs=s["epochs"],
                seed=s["seed"],
                augment=AugmentConfig(**s["augment"]),
                film_identity=s["film_identity"],
            )
        except ValueError as e:
            raise ConfigError(f"train section: {e}") from e

    def ablation_specs(self):
        s = self.raw["eval"]
        specs = []
        for mode in s["modes"]:
            try:
                specs.append(
                    AblationSpec(
                        mode,
                        occlusion_fraction=s["occlusion_fraction"],
                        drop_fraction=s["drop_fraction"],
                        noise_sigma_image=s["noise_sigma_image"],
                        noise_sigma_points=s["noise_sigma_points"],
                        seed=s["seed"],
                    )
                )
            except ValueError as e:
                raise ConfigError(f"eval section: {e}") from e
        return specs

    # artifact locations under the workdir
    @property
    def data_dir(self) -> Path:
        return self.workdir / "data"

    @property
    def labels_dir(self) -> Path:
        return self.workdir / "labels"

    @property
    def checkpoint_path(self) -> Path:
        return self.workdir / "model.ckpt"

    @property
    def train_log_path(self) -> Path:
        return self.workdir / "train_log.csv"

    @property
    def report_dir(self) -> Path:
        return self.workdir / "report"


def validate_config(data: dict, source: str = "<dict>") -> RunConfig:
    cfg = RunConfig(_validate(data, _SCHEMA), source)
    for key, value in [
        ("seed", cfg.raw["seed"]),
        ("train.seed", cfg.raw["train"]["seed"]),
        ("eval.seed", cfg.raw["eval"]["seed"]),
    ]:
        if value < 0:
            raise ConfigError(f"config key {key!r} must be nonnegative")
    cfg.trajectories()  # fail fast on malformed waypoint lists
    lab = cfg.labeling_config()
    cfg.net_config()
    layout = cfg.bev_layout()
    cfg.train_config()
    cfg.ablation_specs()
    ratio = layout.resolution / lab.fine_res
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError(
            "model.bev_resolution must be an integer multiple of labeling.fine_res "
            f"(got {layout.resolution} vs {lab.fine_res})"
        )
    return cfg


def load_config(path, seed_override: int = None, workdir_override=None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    if seed_override is not None:
        data["seed"] = seed_override
    if workdir_override is not None:
        data["workdir"] = str(workdir_override)
    return validate_config(data, str(path))
