"""Synthetic multi-modality dataset: generation, store layout, validation.

Store layout (all floats authoritative in JSON, PNGs for pixels):

    store/
      index.json                     modality + directory per sample, seed
      <modality>_<idx>/
        frames/frame_0000.png        RGB renders, white background
        normals/frame_0000.png       camera-decoupled normal maps
        reference.png                canonical reference render
        meta.json                    layout (V, T), per-frame cameras,
                                     pose clip, palette, provenance

Flat frame order is row-major over the (V, T) layout: f = v * T + t.
Modality shape rules: image has one frame; video has one camera repeated;
multiview has one camera per view row; static3d has a frozen pose with
varying cameras; dyn4d varies both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import imageio
from .geometry import (Camera, PoseClip, SkinnedMesh, body_part_of_vertex,
                       capsule_person, lbs_pose, make_pose_clip, orbit_trajectory,
                       quat_from_axis_angle)
from .render import render_frame
from .tensor import ContractError

MODALITIES = ("image", "video", "multiview", "static3d", "dyn4d")

_POSE_KINDS = ("walk", "wave", "turn", "sway")


@dataclass
class DatasetConfig:
    out_dir: str = "dataset"
    resolution: int = 32
    seed: int = 0
    counts: dict = field(default_factory=lambda: {
        "image": 2000, "video": 200, "multiview": 50, "static3d": 50, "dyn4d": 20})
    video_frames: tuple = (16, 32)
    multiview_views: int = 4
    multiview_frames: int = 8
    static3d_views: int = 16
    dyn4d_frames: int = 24
    focal: float = 40.0
    radius: tuple = (2.3, 3.0)
    height: tuple = (0.7, 1.3)

    def to_dict(self) -> dict:
        return {"out_dir": self.out_dir, "resolution": self.resolution,
                "seed": self.seed, "counts": dict(self.counts),
                "video_frames": list(self.video_frames),
                "multiview_views": self.multiview_views,
                "multiview_frames": self.multiview_frames,
                "static3d_views": self.static3d_views,
                "dyn4d_frames": self.dyn4d_frames, "focal": self.focal,
                "radius": list(self.radius), "height": list(self.height)}

    @staticmethod
    def from_dict(d: dict) -> "DatasetConfig":
        cfg = DatasetConfig()
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise ContractError(f"unknown dataset config key {k!r}")
            setattr(cfg, k, tuple(v) if isinstance(getattr(cfg, k), tuple) else v)
        for m in cfg.counts:
            if m not in MODALITIES:
                raise ContractError(f"unknown modality {m!r} in counts")
        return cfg


def random_palette(rng: np.random.Generator, mesh: SkinnedMesh) -> np.ndarray:
    """Per-vertex colors from a random per-bone palette."""
    palette = 0.08 + 0.84 * rng.random((mesh.n_bones, 3))
    return palette[body_part_of_vertex(mesh)], palette


def _yawed(pose: PoseClip, yaw: float) -> PoseClip:
    """Compose a constant root yaw into a pose clip (appearance variety)."""
    q_yaw = quat_from_axis_angle([0.0, 1.0, 0.0], yaw)
    rot = pose.rotations.copy()
    w, x, y, z = q_yaw
    for f in range(pose.n_frames):
        a, b, c, d = rot[f, 0]
        rot[f, 0] = [w * a - x * b - y * c - z * d,
                     w * b + x * a + y * d - z * c,
                     w * c - x * d + y * a + z * b,
                     w * d + x * c - y * b + z * a]
    return PoseClip(rot, pose.root_translation, pose.fps)


def _random_pose(rng: np.random.Generator, mesh: SkinnedMesh, n_frames: int) -> tuple:
    kind = _POSE_KINDS[rng.integers(len(_POSE_KINDS))]
    clip = make_pose_clip(kind, n_frames, mesh, seed=int(rng.integers(2 ** 31)))
    clip = _yawed(clip, float(rng.uniform(0, 2 * np.pi)))
    return clip, kind


def _random_camera(rng, cfg: DatasetConfig, azimuth=None) -> Camera:
    az = float(rng.uniform(0, 2 * np.pi)) if azimuth is None else azimuth
    radius = float(rng.uniform(*cfg.radius))
    height = float(rng.uniform(*cfg.height))
    target = np.array([0.0, 0.95, 0.0])
    pos = target + np.array([radius * np.sin(az), height, radius * np.cos(az)])
    from .geometry import look_at_camera
    return look_at_camera(pos, target, cfg.focal, (cfg.resolution, cfg.resolution))


def _orbit(rng, cfg: DatasetConfig, n: int, degrees: float = 360.0) -> list:
    radius = float(rng.uniform(*cfg.radius))
    height = float(rng.uniform(*cfg.height))
    return orbit_trajectory(n, radius, height, np.array([0.0, 0.95, 0.0]),
                            degrees, cfg.focal, (cfg.resolution, cfg.resolution))


def _sample_plan(modality: str, rng, cfg: DatasetConfig, mesh: SkinnedMesh):
    """Cameras (flat, len V*T), pose clip (T frames), layout (V, T)."""
    if modality == "image":
        pose, kind = _random_pose(rng, mesh, 1)
        return [_random_camera(rng, cfg)], pose, (1, 1), kind
    if modality == "video":
        n = int(rng.integers(cfg.video_frames[0], cfg.video_frames[1] + 1))
        pose, kind = _random_pose(rng, mesh, n)
        cam = _random_camera(rng, cfg)
        return [cam] * n, pose, (1, n), kind
    if modality == "multiview":
        v, t = cfg.multiview_views, cfg.multiview_frames
        ring = _orbit(rng, cfg, v)
        pose, kind = _random_pose(rng, mesh, t)
        return [ring[i] for i in range(v) for _ in range(t)], pose, (v, t), kind
    if modality == "static3d":
        v = cfg.static3d_views
        moving, kind = _random_pose(rng, mesh, 8)
        f = int(rng.integers(moving.n_frames))
        pose = PoseClip(moving.rotations[f:f + 1], moving.root_translation[f:f + 1])
        cams = _orbit(rng, cfg, v)
        return cams, pose, (v, 1), kind
    if modality == "dyn4d":
        n = cfg.dyn4d_frames
        pose, kind = _random_pose(rng, mesh, n)
        return _orbit(rng, cfg, n), pose, (1, n), kind
    raise ContractError(f"unknown modality {modality!r}")


def generate_sample(modality: str, sample_dir: str, rng: np.random.Generator,
                    cfg: DatasetConfig, mesh: SkinnedMesh) -> dict:
    cams, pose, (V, T), kind = _sample_plan(modality, rng, cfg, mesh)
    colors, palette = random_palette(rng, mesh)

    os.makedirs(os.path.join(sample_dir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(sample_dir, "normals"), exist_ok=True)

    posed = [lbs_pose(mesh, *pose.frame(t)) for t in range(pose.n_frames)]
    for v in range(V):
        for t in range(T):
            f = v * T + t
            img, nm = render_frame(posed[t], mesh.triangles, colors, cams[f])
            imageio.save_png(os.path.join(sample_dir, "frames", f"frame_{f:04d}.png"), img)
            imageio.save_normal_png(os.path.join(sample_dir, "normals", f"frame_{f:04d}.png"),
                                    nm.normals)

    # canonical reference: the first flat frame re-used (its provenance recorded)
    ref_src = os.path.join(sample_dir, "frames", "frame_0000.png")
    imageio.save_png(os.path.join(sample_dir, "reference.png"),
                     imageio.load_png(ref_src))

    meta = {"modality": modality, "layout": [V, T],
            "cameras": [c.to_json() for c in cams],
            "pose": pose.to_json(), "pose_kind": kind,
            "palette": palette.tolist(),
            "reference": {"flat_frame": 0}}
    imageio.save_json(os.path.join(sample_dir, "meta.json"), meta)
    return meta


def _generate_one(args) -> dict:
    cfg_dict, mi, modality, i = args
    cfg = DatasetConfig.from_dict(cfg_dict)
    cfg.out_dir = cfg_dict["out_dir"]
    mesh = capsule_person()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, mi, i)))
    name = f"{modality}_{i:05d}"
    generate_sample(modality, os.path.join(cfg.out_dir, name), rng, cfg, mesh)
    return {"dir": name, "modality": modality}


def generate_dataset(cfg: DatasetConfig, progress=None, workers: int = 1) -> str:
    """Build the full store; deterministic for a given config seed.

    Samples are independent (each derives its own seed from the config seed,
    modality, and index), so generation parallelizes over samples; the
    output bytes do not depend on ``workers``.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    jobs = [(cfg.to_dict(), mi, modality, i)
            for mi, modality in enumerate(MODALITIES)
            for i in range(cfg.counts.get(modality, 0))]
    entries = []
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(workers) as pool:
            for n, entry in enumerate(pool.imap(_generate_one, jobs, chunksize=8)):
                entries.append(entry)
                if progress and (n + 1) % 100 == 0:
                    progress(f"{n + 1}/{len(jobs)} samples")
    else:
        mesh = capsule_person()
        for n, (_, mi, modality, i) in enumerate(jobs):
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=(cfg.seed, mi, i)))
            name = f"{modality}_{i:05d}"
            generate_sample(modality, os.path.join(cfg.out_dir, name), rng, cfg, mesh)
            entries.append({"dir": name, "modality": modality})
            if progress and (n + 1) % 100 == 0:
                progress(f"{n + 1}/{len(jobs)} samples")
    cfg_rec = cfg.to_dict()
    cfg_rec.pop("out_dir")  # a store must not bake in its own location
    index = {"resolution": cfg.resolution, "seed": cfg.seed, "samples": entries,
             "config": cfg_rec}
    imageio.save_json(os.path.join(cfg.out_dir, "index.json"), index)
    return os.path.join(cfg.out_dir, "index.json")


# -- loading / validation -----------------------------------------------------

_frame_cache: dict = {}


@dataclass
class Sample:
    modality: str
    layout: tuple              # (V, T)
    frames: np.ndarray         # (V*T, 3, H, W) float in [0, 1]
    normals: np.ndarray        # (V*T, 3, H, W) normal components
    cameras: list              # len V*T
    pose: PoseClip             # T frames
    reference: np.ndarray      # (3, H, W)
    meta: dict


def load_sample(sample_dir: str, cache: bool = True) -> Sample:
    meta = imageio.load_json(os.path.join(sample_dir, "meta.json"))
    V, T = meta["layout"]
    n = V * T
    key = os.path.abspath(sample_dir)
    if cache and key in _frame_cache:
        frames_u8, normals_u8, ref_u8 = _frame_cache[key]
    else:
        frames_u8 = np.stack([
            np.asarray(imageio.load_png(os.path.join(sample_dir, "frames", f"frame_{f:04d}.png"),
                                        chw=True) * 255, dtype=np.uint8)
            for f in range(n)])
        normals_u8 = np.stack([
            np.asarray(imageio.load_png(os.path.join(sample_dir, "normals", f"frame_{f:04d}.png"),
                                        chw=True) * 255, dtype=np.uint8)
            for f in range(n)])
        ref_u8 = np.asarray(imageio.load_png(os.path.join(sample_dir, "reference.png"),
                                             chw=True) * 255, dtype=np.uint8)
        if cache:
            _frame_cache[key] = (frames_u8, normals_u8, ref_u8)

    frames = frames_u8.astype(np.float64) / 255.0
    normals = normals_u8.astype(np.float64) / 255.0 * 2.0 - 1.0
    mag = np.linalg.norm(normals, axis=1)
    normals[np.broadcast_to((mag < 0.5)[:, None], normals.shape)] = 0.0
    sample = Sample(meta["modality"], (V, T), frames, normals,
                    [Camera.from_json(c) for c in meta["cameras"]],
                    PoseClip.from_json(meta["pose"]),
                    ref_u8.astype(np.float64) / 255.0, meta)
    validate_sample(sample)
    return sample


def validate_sample(s: Sample) -> None:
    V, T = s.layout
    if len(s.frames) != V * T or len(s.normals) != V * T or len(s.cameras) != V * T:
        raise ContractError("frame/normal/camera counts disagree with layout")
    if s.pose.n_frames != T:
        raise ContractError(f"pose has {s.pose.n_frames} frames, layout T={T}")
    if s.modality == "image":
        if (V, T) != (1, 1):
            raise ContractError("image samples must have a single frame")
    elif s.modality == "video":
        if V != 1:
            raise ContractError("video samples are single-view")
        base = s.cameras[0]
        for c in s.cameras[1:]:
            if not np.array_equal(c.rotation, base.rotation) or \
               not np.array_equal(c.translation, base.translation):
                raise ContractError("video sample cameras must be constant")
    elif s.modality == "multiview":
        for v in range(V):
            row = s.cameras[v * T:(v + 1) * T]
            for c in row[1:]:
                if not np.array_equal(c.rotation, row[0].rotation):
                    raise ContractError("multiview cameras must be constant per view")
    elif s.modality == "static3d":
        if T != 1:
            raise ContractError("static3d samples have a single (frozen) pose frame")
    elif s.modality == "dyn4d":
        rots = np.array([c.rotation for c in s.cameras])
        if np.allclose(rots, rots[0]):
            raise ContractError("dyn4d cameras must vary")
    else:
        raise ContractError(f"unknown modality {s.modality!r}")


class Store:
    def __init__(self, store_dir: str):
        self.dir = store_dir
        index_path = os.path.join(store_dir, "index.json")
        if not os.path.exists(index_path):
            raise ContractError(f"no dataset index at {index_path}")
        self.index = imageio.load_json(index_path)
        self.by_modality: dict[str, list[str]] = {m: [] for m in MODALITIES}
        for e in self.index["samples"]:
            self.by_modality[e["modality"]].append(os.path.join(store_dir, e["dir"]))

    @property
    def resolution(self) -> int:
        return self.index["resolution"]

    def modalities_present(self) -> list[str]:
        return [m for m in MODALITIES if self.by_modality[m]]

    def pick(self, modality: str, rng: np.random.Generator) -> Sample:
        dirs = self.by_modality[modality]
        if not dirs:
            raise ContractError(f"store has no {modality} samples")
        return load_sample(dirs[int(rng.integers(len(dirs)))])
