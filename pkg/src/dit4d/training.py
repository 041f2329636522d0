"""Modality-gated diffusion training.

Each modality trains a fixed subset of parameter groups; gradients are
computed everywhere but the optimizer only touches the permitted groups,
so excluded parameters stay bit-identical. Phase 1 runs on images only,
phase 2 mixes every modality present in the store.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Sample, Store
from .diffusion import DiffusionSchedule, make_schedule, q_sample
from .model import Denoiser, DenoiserConfig, WindowCond
from .nn import Adam, save_checkpoint
from .tensor import ContractError, Tensor, backward, square, tmean

MODALITY_GROUPS = {
    "image": ("spatial", "conditioning"),
    "video": ("spatial", "temporal", "conditioning"),
    "multiview": ("spatial", "view", "temporal", "conditioning"),
    "static3d": ("spatial", "view", "conditioning"),
    "dyn4d": ("spatial", "view", "temporal", "conditioning"),
}


class TrainingAborted(RuntimeError):
    """Raised when the loss goes non-finite; carries the offending step."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    store: str = "dataset"
    out_dir: str = "run"
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    phase1_steps: int = 400
    phase2_steps: int = 1600
    lr: float = 3e-4
    grad_clip: float = 1.0
    seed: int = 0
    t_train: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    batch_sizes: dict = field(default_factory=lambda: {
        "image": 2, "video": 1, "multiview": 1, "static3d": 1, "dyn4d": 1})
    window_video: int = 8
    window_multiview_t: int = 3
    window_static3d_v: int = 6
    window_dyn4d: tuple = (4, 3)   # (views, times) of the strided grid
    mix: Optional[dict] = None      # modality -> weight; None = uniform
    checkpoint_every: int = 1000
    gating_override: Optional[str] = None  # force one modality's gate set

    def __post_init__(self):
        for name in ("phase1_steps", "phase2_steps", "t_train", "checkpoint_every"):
            if getattr(self, name) < 0 or (name == "t_train" and self.t_train < 1):
                raise ContractError(f"{name} must be positive")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ContractError("lr and grad_clip must be positive")
        if self.mix is not None:
            total = sum(self.mix.values())
            if total <= 0:
                raise ContractError("mix ratios must sum to a positive value")
            self.mix = {k: v / total for k, v in self.mix.items()}
        if self.gating_override is not None and self.gating_override not in MODALITY_GROUPS:
            raise ContractError(f"unknown gating override {self.gating_override!r}")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "model"}
        d["model"] = self.model.to_dict()
        d["window_dyn4d"] = list(self.window_dyn4d)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        model = DenoiserConfig.from_dict(d.pop("model")) if "model" in d else DenoiserConfig()
        if "window_dyn4d" in d:
            d["window_dyn4d"] = tuple(d["window_dyn4d"])
        known = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train config keys: {sorted(unknown)}")
        return TrainConfig(model=model, **d)


@dataclass
class TrainItem:
    frames: np.ndarray        # (V, T, 3, H, W)
    cond: WindowCond


def _grid(sample: Sample, view_rows: list[int], time_cols: list[int],
          frame_of) -> tuple[np.ndarray, np.ndarray, list]:
    """Gather (V, T) frame/normal grids given a flat-frame lookup rule."""
    V, T = len(view_rows), len(time_cols)
    fidx = np.array([[frame_of(v, t) for t in time_cols] for v in view_rows])
    frames = sample.frames[fidx]     # (V, T, 3, H, W)
    normals = sample.normals[fidx]
    cams = [sample.cameras[fidx[j, 0]] for j in range(V)]
    return frames, normals, cams


def build_item(sample: Sample, modality: str, rng: np.random.Generator,
               cfg: TrainConfig) -> TrainItem:
    V, T = sample.layout
    ref_flat = int(rng.integers(V * T))  # reference: random frame of the sample
    reference = sample.frames[ref_flat]

    if modality == "image":
        frames, normals, cams = sample.frames[None], sample.normals[None], [sample.cameras[0]]
        idxs, total = np.array([0]), 1
    elif modality == "video":
        w = min(cfg.window_video, T)
        t0 = int(rng.integers(T - w + 1))
        cols = list(range(t0, t0 + w))
        frames, normals, cams = _grid(sample, [0], cols, lambda v, t: t)
        idxs, total = np.arange(t0, t0 + w), T
    elif modality == "multiview":
        w = min(cfg.window_multiview_t, T)
        t0 = int(rng.integers(T - w + 1))
        cols = list(range(t0, t0 + w))
        frames, normals, cams = _grid(sample, list(range(V)), cols,
                                      lambda v, t: v * T + t)
        idxs, total = np.arange(t0, t0 + w), T
    elif modality == "static3d":
        w = min(cfg.window_static3d_v, V)
        v0 = int(rng.integers(V))
        rows = [(v0 + k) % V for k in range(w)]  # contiguous arc, wraparound
        frames, normals, cams = _grid(sample, rows, [0], lambda v, t: v * T + t)
        idxs, total = np.array([0]), 1
    elif modality == "dyn4d":
        # strided (views x times) grid mirroring the strategy-2 arrangement
        gv, gt = cfg.window_dyn4d
        gv = min(gv, T)
        n_v = T // gv
        gt = min(gt, n_v)
        v0 = int(rng.integers(n_v - gt + 1))
        fidx = np.array([[v0 + i + j * n_v for i in range(gt)] for j in range(gv)])
        frames = sample.frames[fidx]
        normals = sample.normals[fidx]
        cams = [sample.cameras[fidx[j, 0]] for j in range(gv)]
        idxs, total = np.arange(v0, v0 + gt), T
    else:
        raise ContractError(f"unknown modality {modality!r}")

    return TrainItem(frames, WindowCond(cams, idxs, total, normals, reference))


def training_step(model: Denoiser, batch: list[TrainItem], modality: str,
                  sched: DiffusionSchedule, opt: Adam, rng: np.random.Generator,
                  allowed_groups: Optional[tuple] = None) -> float:
    """One gated step: eps-prediction MSE, clipped grads, permitted groups only."""
    if modality not in MODALITY_GROUPS:
        raise ContractError(f"unknown modality {modality!r}")
    losses = []
    h, w = model.latent_hw
    C = model.config.block.d_model
    for item in batch:
        V, T = item.frames.shape[:2]
        t = int(rng.integers(1, sched.n_steps + 1))
        eps = rng.standard_normal((V, T, h, w, C))
        flat = item.frames.reshape(V * T, *item.frames.shape[2:])
        x0 = model.encode_frames(flat).reshape((V, T, h, w, C))
        x_t = q_sample(x0, t, Tensor(eps), sched)
        eps_hat = model.denoise_window(x_t, sched.step_fraction(t), item.cond)
        losses.append(tmean(square(eps_hat - Tensor(eps))))

    loss = losses[0] if len(losses) == 1 else sum(losses[1:], losses[0]) * (1.0 / len(losses))
    model.zero_grad()
    backward(loss)
    opt.step(allowed_groups or MODALITY_GROUPS[modality])
    return loss.item()


def smoothed(values: list[float], window: int = 100) -> float:
    if not values:
        return float("nan")
    return float(np.mean(values[-window:]))


def train(cfg: TrainConfig, progress=None) -> dict:
    """Two-phase training; returns paths and the loss history summary."""
    store = Store(cfg.store)
    if store.resolution != cfg.model.resolution[0]:
        raise ContractError(f"store resolution {store.resolution} != model "
                            f"{cfg.model.resolution}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    model = Denoiser(cfg.model, seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, clip=cfg.grad_clip)
    sched = make_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end)
    rng = np.random.default_rng(cfg.seed)

    present = store.modalities_present()
    mix = cfg.mix or {m: 1.0 / len(present) for m in present}
    mods = sorted(mix)
    probs = np.array([mix[m] for m in mods])
    probs = probs / probs.sum()

    gate = (MODALITY_GROUPS[cfg.gating_override]
            if cfg.gating_override else None)

    rows = []
    losses = []
    total_steps = cfg.phase1_steps + cfg.phase2_steps

    def run_step(step: int, modality: str):
        sample = store.pick(modality, rng)
        batch = [build_item(sample, modality, rng, cfg)
                 for _ in range(cfg.batch_sizes.get(modality, 1))]
        loss = training_step(model, batch, modality, sched, opt, rng,
                             allowed_groups=gate)
        if not np.isfinite(loss):
            raise TrainingAborted(step, loss)
        rows.append((step, modality, loss))
        losses.append(loss)
        if progress and step % 100 == 0:
            progress(f"step {step}/{total_steps} {modality} "
                     f"loss {smoothed(losses):.4f}")
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(cfg.out_dir, f"checkpoint_{step:06d}.ckpt"),
                            model, cfg.model.to_dict())

    step = 0
    for _ in range(cfg.phase1_steps):
        step += 1
        run_step(step, "image")
    phase2_start = len(losses)
    for _ in range(cfg.phase2_steps):
        step += 1
        modality = str(rng.choice(mods, p=probs))
        run_step(step, modality)

    ckpt = os.path.join(cfg.out_dir, "checkpoint.ckpt")
    save_checkpoint(ckpt, model, cfg.model.to_dict())
    log_path = os.path.join(cfg.out_dir, "loss_log.csv")
    tmp = log_path + ".tmp"
    with open(tmp, "w", newline="") as f:
        wcsv = csv.writer(f)
        wcsv.writerow(["step", "modality", "loss"])
        wcsv.writerows(rows)
    os.replace(tmp, log_path)

    start_window = losses[phase2_start:phase2_start + 100]
    summary = {
        "checkpoint": ckpt,
        "loss_log": log_path,
        "phase2_start_smoothed": float(np.mean(start_window)) if start_window else None,
        "phase2_end_smoothed": smoothed(losses) if losses else None,
        "steps": step,
    }
    return summary
