"""Miniature end-to-end pipeline: dataset -> short training -> sampling.

Everything runs at 16x16 with a small model so the whole script finishes in
about two minutes; quality is intentionally rough. The acceptance test in
tests/test_acceptance.py runs the full desk-scale version of this loop.

Run:  python demos/05_toy_pipeline.py
"""

import os
import tempfile
import time

import numpy as np

from dit4d.data import DatasetConfig, generate_dataset, random_palette
from dit4d.diffusion import make_schedule
from dit4d.geometry import capsule_person, lbs_pose, make_pose_clip, look_at_camera
from dit4d.imageio import save_png
from dit4d.metrics import psnr
from dit4d.model import Block4DConfig, Denoiser, DenoiserConfig
from dit4d.nn import load_checkpoint
from dit4d.render import render_frame
from dit4d.sampler import GenerationSpec, generate, preset_plan
from dit4d.training import TrainConfig, train

t0 = time.time()
work = tempfile.mkdtemp(prefix="dit4d_demo_")
out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

print("1) synthesizing a micro dataset ...")
data_cfg = DatasetConfig(out_dir=os.path.join(work, "store"), resolution=16, seed=0,
                         counts={"image": 60, "video": 10}, video_frames=(6, 8))
generate_dataset(data_cfg)

print("2) short training run (600 steps on a 1-block model) ...")
model_cfg = DenoiserConfig(block=Block4DConfig(d_model=32, heads=4, mlp_ratio=2.0,
                                               n_blocks=1), resolution=(16, 16))
train_cfg = TrainConfig(store=data_cfg.out_dir, out_dir=os.path.join(work, "run"),
                        model=model_cfg, phase1_steps=200, phase2_steps=400,
                        lr=1e-3, seed=0, window_video=6, checkpoint_every=0)
summary = train(train_cfg, progress=lambda m: print("   ", m))
print("    smoothed loss:", round(summary["phase2_end_smoothed"], 3))

print("3) sampling a short clip from the checkpoint ...")
model = Denoiser(model_cfg, seed=0)
load_checkpoint(summary["checkpoint"], model, model_cfg.to_dict())
mesh = capsule_person()
colors, _ = random_palette(np.random.default_rng(5), mesh)
clip = make_pose_clip("sway", 8, mesh, seed=9)
cam = look_at_camera((0.2, 1.5, 2.7), (0, 0.95, 0), 20.0, (16, 16))
ref, _ = render_frame(lbs_pose(mesh, *clip.frame(0)), mesh.triangles, colors, cam)
spec = GenerationSpec([cam] * 8, clip, np.moveaxis(ref, 2, 0), (16, 16),
                      steps=25, seed=1)
frames = generate(model, spec, preset_plan("monocular", 8),
                  make_schedule().subsample(25), mesh)

scores = []
for i, frame in enumerate(frames):
    gt, _ = render_frame(lbs_pose(mesh, *clip.frame(i)), mesh.triangles, colors, cam)
    scores.append(psnr(np.moveaxis(frame, 0, 2), gt))
    save_png(os.path.join(out, f"toy_gen_{i}.png"), frame)
    save_png(os.path.join(out, f"toy_gt_{i}.png"), gt)

print(f"    mean PSNR vs ground truth: {np.mean(scores):.1f} dB "
      f"(tiny model, tiny budget)")
print(f"done in {time.time() - t0:.0f}s; frames in {out}")
