"""JSON config schemas for the CLI; validation happens before any work."""

from __future__ import annotations

import os

from .tensor import ContractError


def _require(cfg: dict, key: str, types, where: str):
    if key not in cfg:
        raise ContractError(f"{where}: missing required key {key!r}")
    if not isinstance(cfg[key], types):
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ContractError(f"{where}: key {key!r} must be {tn}")
    return cfg[key]


def _reject_unknown(cfg: dict, allowed: set, where: str):
    unknown = set(cfg) - allowed
    if unknown:
        raise ContractError(f"{where}: unknown keys {sorted(unknown)}")


def validate_dataset_config(cfg: dict) -> dict:
    where = "dataset config"
    allowed = {"out_dir", "resolution", "seed", "counts", "video_frames",
               "multiview_views", "multiview_frames", "static3d_views",
               "dyn4d_frames", "focal", "radius", "height"}
    _reject_unknown(cfg, allowed, where)
    if "counts" in cfg:
        _require(cfg, "counts", dict, where)
    if "resolution" in cfg and int(cfg["resolution"]) % 2:
        raise ContractError(f"{where}: resolution must be even")
    return cfg


def validate_train_config(cfg: dict) -> dict:
    where = "train config"
    _require(cfg, "store", str, where)
    from .training import TrainConfig
    TrainConfig.from_dict(cfg)  # raises on unknown keys / bad values
    return cfg


def validate_job_config(cfg: dict) -> dict:
    where = "sampling job"
    allowed = {"frames", "resolution", "steps", "seed", "checkpoint",
               "reference_image", "subject", "cameras", "preset", "window"}
    _reject_unknown(cfg, allowed, where)
    _require(cfg, "frames", int, where)
    _require(cfg, "resolution", int, where)
    _require(cfg, "cameras", (dict, list), where)
    if "subject" not in cfg and "reference_image" not in cfg:
        raise ContractError(f"{where}: needs 'subject' or 'reference_image'")
    if "subject" in cfg:
        sub = _require(cfg, "subject", dict, where)
        if "pose_file" not in sub:
            _require(sub, "pose", dict, f"{where}.subject")
    if "preset" not in cfg and "window" not in cfg:
        raise ContractError(f"{where}: needs 'preset' or explicit 'window' parameters")
    if "window" in cfg:
        w = cfg["window"]
        for k in ("m_t1", "overlap1", "m_t2", "m_v2", "lambda1", "lambda2"):
            _require(w, k, (int, float), f"{where}.window")
    return cfg


def validate_orbit_config(cfg: dict) -> dict:
    where = "render-orbit config"
    allowed = {"frames", "resolution", "radius", "height", "degrees", "focal",
               "pose", "palette_seed", "target"}
    _reject_unknown(cfg, allowed, where)
    _require(cfg, "frames", int, where)
    _require(cfg, "resolution", int, where)
    return cfg


def validate_metrics_config(cfg: dict) -> dict:
    where = "metrics config"
    allowed = {"generated", "output_csv"}
    _reject_unknown(cfg, allowed, where)
    _require(cfg, "generated", str, where)
    if not os.path.isdir(cfg["generated"]):
        raise ContractError(f"{where}: generated dir not found: {cfg['generated']}")
    return cfg
