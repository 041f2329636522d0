"""Two-strategy windowed diffusion sampling over long frame sequences.

Each reverse step runs the denoiser once per strategy-1 temporal window
(arranged as V=1) and once per strategy-2 strided group (arranged as
(M_V2, M_T2)), blends the two noise fields with the plan's lambda weights,
and applies the posterior update jointly to all frames. A strategy whose
lambda is zero is skipped entirely, which keeps the degenerate blends
bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffusion import DiffusionSchedule, SlicePlan, ddpm_step
from .geometry import PoseClip, capsule_person
from .render import render_normal_map
from .tensor import ContractError, Tensor, no_grad

# predict(z, step_fraction, frames) -> eps_hat
#   z: (V, Tw, h, w, C) latent grid;  frames: (V, Tw) global frame indices
PredictFn = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


@dataclass
class GenerationSpec:
    """One sampling job: per-frame cameras and poses plus the reference."""
    cameras: list             # len T_L
    pose: PoseClip            # T_L frames
    reference: np.ndarray     # (3, H, W) in [0, 1]
    resolution: tuple         # (H, W)
    steps: int = 25
    seed: int = 0

    def __post_init__(self):
        if len(self.cameras) != self.pose.n_frames:
            raise ContractError(
                f"{len(self.cameras)} cameras but {self.pose.n_frames} pose frames")

    @property
    def n_frames(self) -> int:
        return len(self.cameras)


def st_sample(predict: PredictFn, n_frames: int, latent_shape: tuple, plan: SlicePlan,
              sched: DiffusionSchedule, seed: int,
              trajectory: Optional[list] = None) -> np.ndarray:
    """Run the blended reverse process; returns the final latent frames.

    Deterministic given ``seed``: the initial state and every per-step noise
    field are drawn in a fixed order, independent of the window structure.
    """
    if plan.n_frames != n_frames:
        raise ContractError(f"plan covers {plan.n_frames} frames, job has {n_frames}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_frames, *latent_shape))
    if trajectory is not None:
        trajectory.append(x.copy())

    for k in range(sched.n_steps, 0, -1):
        frac = sched.step_fraction(k)
        eps1 = eps2 = None

        if plan.lambda1 > 0.0:
            eps1 = np.zeros_like(x)
            hits = np.zeros(n_frames)
            for s, e in plan.windows1:
                frames = np.arange(s, e)[None, :]
                out = predict(x[s:e][None], frac, frames)
                eps1[s:e] += out[0]
                hits[s:e] += 1.0
            eps1 /= hits.reshape(-1, *([1] * len(latent_shape)))

        if plan.lambda2 > 0.0:
            eps2 = np.zeros_like(x)
            for g in plan.groups2:
                out = predict(x[g], frac, g)
                eps2[g] = out

        if eps2 is None:
            eps = eps1
        elif eps1 is None:
            eps = eps2
        else:
            eps = plan.lambda1 * eps1 + plan.lambda2 * eps2

        noise = rng.standard_normal(x.shape) if sched.sigma(k) > 0.0 else None
        x = ddpm_step(x, eps, k, sched, noise)
        if trajectory is not None:
            trajectory.append(x.copy())
    return x


def prepare_predictor(model, spec: GenerationSpec, mesh=None):
    """Render per-frame pose maps, precompute frame-invariant conditioning,
    and return (predict_fn, pose_maps). The predictor takes each window
    row's camera from the row's first frame and its time indices from the
    first view row."""
    from .geometry import lbs_pose

    mesh = mesh or capsule_person()
    if spec.resolution != tuple(model.config.resolution):
        raise ContractError(f"job resolution {spec.resolution} != model "
                            f"{model.config.resolution}")
    maps = []
    for i in range(spec.n_frames):
        rot, root = spec.pose.frame(i)
        verts = lbs_pose(mesh, rot, root)
        nm = render_normal_map(verts, mesh.triangles, spec.cameras[i])
        maps.append(np.moveaxis(nm.normals, 2, 0))  # (3, H, W)
    pose_maps = np.stack(maps)

    with no_grad():
        pose_feat = model.encode_pose_maps(pose_maps).data  # (T_L, h, w, C)
        idc = model.encode_identity(spec.reference)

    total = spec.n_frames

    def predict(z: np.ndarray, frac: float, frames: np.ndarray) -> np.ndarray:
        with no_grad():
            cams = [spec.cameras[int(row[0])] for row in frames]
            cam = model.cam_emb(cams)
            tim = model.time_emb(frames[0], total)
            pose = Tensor(pose_feat[frames])
            out = model.denoise(Tensor(z), frac, cam, tim, pose, idc)
        return out.data

    return predict, pose_maps


def generate(model, spec: GenerationSpec, plan: SlicePlan, sched: DiffusionSchedule,
             mesh=None) -> np.ndarray:
    """Full pipeline: condition, sample, decode. Returns (T_L, 3, H, W)."""
    predict, _ = prepare_predictor(model, spec, mesh)
    h, w = model.latent_hw
    c = model.config.block.d_model
    x0 = st_sample(predict, spec.n_frames, (h, w, c), plan, sched, spec.seed)
    return model.decode_latent(x0)


def preset_plan(name: str, n_frames: int) -> SlicePlan:
    """Named sampling presets mapped to slice-plan parameters."""
    from .diffusion import plan_slices

    if name == "monocular":
        m_t1 = min(24, n_frames)
        overlap = 6 if m_t1 < n_frames and m_t1 > 6 else 0
        return plan_slices(n_frames, m_t1, overlap, 1, 1, lambda1=1.0, lambda2=0.0)
    if name in ("multiview", "static3d", "360"):
        if n_frames % 24:
            raise ContractError(f"{name} preset needs frame count divisible by 24, "
                                f"got {n_frames}")
        return plan_slices(n_frames, min(24, n_frames), 0, 6, 4,
                           lambda1=0.5, lambda2=0.5)
    raise ContractError(f"unknown sampling preset {name!r}")
