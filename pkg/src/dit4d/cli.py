"""Operator entry point: gen-data, train, sample, verify, metrics, render-orbit.

Progress goes to stderr; machine-readable results go to files. Each
invocation takes an exclusive lock on its output directory and writes
outputs through temp-then-rename.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import configs, imageio
from .tensor import ContractError, ShapeError


def _log(args, msg: str):
    if getattr(args, "verbose", 0):
        print(msg, file=sys.stderr)


class _Lock:
    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, ".dit4d.lock")

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ContractError(
                f"output directory is locked by another invocation: {self.path}")
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.unlink(self.path)
        return False


def _load_config(path: str) -> dict:
    if not path:
        raise ContractError("a --config file is required")
    if not os.path.exists(path):
        raise ContractError(f"config file not found: {path}")
    with open(path) as f:
        return json.load(f)


def _thread_default() -> int:
    return int(os.environ.get("DIT4D_THREADS", "1"))


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .data import DatasetConfig, generate_dataset
    cfg_dict = configs.validate_dataset_config(_load_config(args.config))
    if args.out:
        cfg_dict["out_dir"] = args.out
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = DatasetConfig.from_dict(cfg_dict)
    with _Lock(cfg.out_dir):
        index = generate_dataset(cfg, progress=lambda m: _log(args, m),
                                 workers=max(1, args.threads))
    _log(args, f"dataset index written: {index}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, train
    cfg_dict = configs.validate_train_config(_load_config(args.config))
    if args.out:
        cfg_dict["out_dir"] = args.out
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = TrainConfig.from_dict(cfg_dict)
    with _Lock(cfg.out_dir):
        imageio.save_json(os.path.join(cfg.out_dir, "train_config.json"), cfg.to_dict())
        summary = train(cfg, progress=lambda m: _log(args, m))
        imageio.save_json(os.path.join(cfg.out_dir, "train_summary.json"), summary)
    _log(args, f"checkpoint: {summary['checkpoint']}")
    return 0


def _job_cameras(cfg: dict, n: int, resolution: int):
    from .geometry import Camera, look_at_camera, orbit_trajectory
    spec = cfg["cameras"]
    if isinstance(spec, list):
        if len(spec) != n:
            raise ContractError(f"camera list has {len(spec)} entries for {n} frames")
        return [Camera.from_json(c) for c in spec]
    if "orbit" in spec:
        o = spec["orbit"]
        return orbit_trajectory(n, o.get("radius", 2.6), o.get("height", 1.0),
                                o.get("target", [0.0, 0.95, 0.0]),
                                o.get("degrees", 360.0), o.get("focal", 40.0),
                                (resolution, resolution))
    if "fixed" in spec:
        f = spec["fixed"]
        cam = look_at_camera(f.get("position", [0.0, 1.5, 2.8]),
                             f.get("target", [0.0, 0.95, 0.0]),
                             f.get("focal", 40.0), (resolution, resolution))
        return [cam] * n
    raise ContractError("cameras must be a list, {'orbit': ...}, or {'fixed': ...}")


def _job_subject(cfg: dict, n_frames: int):
    """Procedural subject: mesh, per-vertex colors, pose clip.

    The pose comes either from procedural curves (``subject.pose``) or from
    a pose-clip JSON file (``subject.pose_file``).
    """
    from .data import random_palette
    from .geometry import PoseClip, capsule_person, make_pose_clip
    mesh = capsule_person()
    sub = cfg.get("subject", {})
    rng = np.random.default_rng(sub.get("palette_seed", 0))
    colors, palette = random_palette(rng, mesh)
    if "pose_file" in sub:
        clip = PoseClip.from_json(imageio.load_json(sub["pose_file"]))
        if clip.n_frames != n_frames:
            raise ContractError(f"pose file has {clip.n_frames} frames, "
                                f"job wants {n_frames}")
    else:
        pose_spec = sub.get("pose", {"kind": "walk", "seed": 0})
        clip = make_pose_clip(pose_spec.get("kind", "walk"), n_frames, mesh,
                              seed=pose_spec.get("seed", 0))
    return mesh, colors, palette, clip


def cmd_sample(args) -> int:
    from .diffusion import make_schedule, plan_slices
    from .model import Denoiser, DenoiserConfig
    from .nn import load_checkpoint
    from .render import render_rgb
    from .sampler import GenerationSpec, generate, preset_plan
    from .geometry import lbs_pose

    cfg = configs.validate_job_config(_load_config(args.config))
    ckpt = args.checkpoint or cfg.get("checkpoint")
    if not ckpt:
        raise ContractError("no checkpoint given: pass --checkpoint or set the "
                            "'checkpoint' key in the job config")
    if not os.path.exists(ckpt):
        raise ContractError(f"checkpoint not found: {ckpt}")
    model_cfg_path = ckpt + ".config.json"
    if not os.path.exists(model_cfg_path):
        raise ContractError(f"model config not found next to checkpoint: {model_cfg_path}")
    model_cfg = imageio.load_json(model_cfg_path)
    model = Denoiser(DenoiserConfig.from_dict(model_cfg), seed=0)
    load_checkpoint(ckpt, model, model_cfg)

    n = cfg["frames"]
    res = cfg["resolution"]
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    cams = _job_cameras(cfg, n, res)
    mesh, colors, palette, clip = _job_subject(cfg, n)

    if "reference_image" in cfg:
        reference = imageio.load_png(cfg["reference_image"], chw=True)
    else:
        ref_cam = cams[0]
        reference = np.moveaxis(
            render_rgb(lbs_pose(mesh, *clip.frame(0)), mesh.triangles, colors, ref_cam),
            2, 0)

    if "window" in cfg:
        w = cfg["window"]
        plan = plan_slices(n, int(w["m_t1"]), int(w["overlap1"]), int(w["m_t2"]),
                           int(w["m_v2"]), float(w["lambda1"]), float(w["lambda2"]))
    else:
        plan = preset_plan(cfg["preset"], n)

    spec = GenerationSpec(cams, clip, reference, (res, res),
                          steps=cfg.get("steps", 25), seed=seed)
    sched = make_schedule().subsample(spec.steps)

    out_dir = args.out or "samples"
    with _Lock(out_dir):
        _log(args, f"sampling {n} frames with preset plan "
                   f"(windows={plan.windows1}, groups={len(plan.groups2)})")
        frames = generate(model, spec, plan, sched, mesh)
        for i, frame in enumerate(frames):
            imageio.save_png(os.path.join(out_dir, f"frame_{i:04d}.png"), frame)
        manifest = {
            "frames": [f"frame_{i:04d}.png" for i in range(n)],
            "resolution": res, "seed": seed, "steps": spec.steps,
            "checkpoint": os.path.abspath(ckpt),
            "cameras": [c.to_json() for c in cams],
            "pose": clip.to_json(),
            "palette": palette.tolist(),
            "plan": {"m_t1": plan.m_t1, "overlap1": plan.overlap1,
                     "m_t2": plan.m_t2, "m_v2": plan.m_v2,
                     "lambda1": plan.lambda1, "lambda2": plan.lambda2},
        }
        imageio.save_json(os.path.join(out_dir, "manifest.json"), manifest)
    _log(args, f"wrote {n} frames to {out_dir}")
    return 0


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites
    names = args.suite or list(SUITES)
    results = run_suites(names)
    width = max(len(f"{r.suite}/{r.name}") for r in results)
    failed = 0
    for r in results:
        status = "pass" if r.passed else "FAIL"
        failed += 0 if r.passed else 1
        print(f"{status}  {f'{r.suite}/{r.name}':<{width}}  {r.seconds:7.2f}s  {r.detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_metrics(args) -> int:
    from .geometry import Camera, PoseClip, capsule_person, lbs_pose, body_part_of_vertex
    from .metrics import psnr, ssim
    from .render import render_rgb

    if args.config:
        cfg = configs.validate_metrics_config(_load_config(args.config))
        gen_dir = cfg["generated"]
        out_csv = cfg.get("output_csv", os.path.join(gen_dir, "metrics.csv"))
    else:
        if not args.generated:
            raise ContractError("metrics needs --generated DIR or --config")
        gen_dir = args.generated
        out_csv = args.out or os.path.join(gen_dir, "metrics.csv")

    manifest_path = os.path.join(gen_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ContractError(f"manifest not found: {manifest_path}")
    manifest = imageio.load_json(manifest_path)

    mesh = capsule_person()
    palette = np.array(manifest["palette"])
    colors = palette[body_part_of_vertex(mesh)]
    pose = PoseClip.from_json(manifest["pose"])
    cams = [Camera.from_json(c) for c in manifest["cameras"]]

    rows = [("frame", "psnr_db", "ssim")]
    ps, ss = [], []
    for i, name in enumerate(manifest["frames"]):
        got = imageio.load_png(os.path.join(gen_dir, name))
        verts = lbs_pose(mesh, *pose.frame(i))
        want = render_rgb(verts, mesh.triangles, colors, cams[i])
        p, s = psnr(got, want), ssim(got, want)
        ps.append(p)
        ss.append(s)
        rows.append((name, f"{p:.6f}", f"{s:.6f}"))
    rows.append(("mean", f"{np.mean(ps):.6f}", f"{np.mean(ss):.6f}"))
    tmp = out_csv + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(",".join(map(str, r)) for r in rows) + "\n")
    os.replace(tmp, out_csv)
    _log(args, f"mean psnr {np.mean(ps):.2f} dB, mean ssim {np.mean(ss):.4f}")
    print(out_csv)
    return 0


def cmd_render_orbit(args) -> int:
    from .geometry import capsule_person, lbs_pose, make_pose_clip, orbit_trajectory, rest_pose
    from .data import random_palette
    from .render import render_normal_map, render_rgb

    cfg = configs.validate_orbit_config(_load_config(args.config))
    n = cfg["frames"]
    res = cfg["resolution"]
    seed = args.seed if args.seed is not None else 0
    mesh = capsule_person()
    rng = np.random.default_rng(cfg.get("palette_seed", seed))
    colors, palette = random_palette(rng, mesh)
    pose_spec = cfg.get("pose")
    if pose_spec:
        clip = make_pose_clip(pose_spec.get("kind", "walk"), n, mesh,
                              seed=pose_spec.get("seed", seed))
    else:
        clip = rest_pose(mesh, n)
    cams = orbit_trajectory(n, cfg.get("radius", 2.6), cfg.get("height", 1.0),
                            cfg.get("target", [0.0, 0.95, 0.0]),
                            cfg.get("degrees", 360.0), cfg.get("focal", 40.0),
                            (res, res))
    out_dir = args.out or "orbit"
    with _Lock(out_dir):
        for i in range(n):
            verts = lbs_pose(mesh, *clip.frame(i))
            imageio.save_png(os.path.join(out_dir, f"rgb_{i:04d}.png"),
                             render_rgb(verts, mesh.triangles, colors, cams[i]))
            imageio.save_normal_png(os.path.join(out_dir, f"normal_{i:04d}.png"),
                                    render_normal_map(verts, mesh.triangles, cams[i]).normals)
        imageio.save_json(os.path.join(out_dir, "cameras.json"),
                          {"cameras": [c.to_json() for c in cams],
                           "pose": clip.to_json(), "palette": palette.tolist()})
    _log(args, f"wrote {n} orbit frames to {out_dir}")
    return 0


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dit4d",
        description="Factorized 4D diffusion transformer toolkit: synthetic data, "
                    "training, windowed sampling, verification, metrics.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON config file for this command")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--seed", type=int, help="seed override")
        sp.add_argument("-v", "--verbose", action="count", default=0,
                        help="progress logging to stderr")
        sp.add_argument("--threads", type=int, default=_thread_default(),
                        help="worker threads (default from DIT4D_THREADS)")

    common(sub.add_parser("gen-data", help="synthesize the multi-modality dataset store"))
    common(sub.add_parser("train", help="two-phase modality-gated training"))
    sp = sub.add_parser("sample", help="windowed two-strategy sampling from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="model checkpoint (overrides job config)")
    sp = sub.add_parser("verify", help="run oracle/invariant suites and print a table")
    sp.add_argument("--suite", action="append",
                    help="suite name (repeatable); default: all")
    sp.add_argument("-v", "--verbose", action="count", default=0)
    sp = sub.add_parser("metrics", help="PSNR/SSIM of generated frames vs re-rendered truth")
    sp.add_argument("--config", help="JSON config with 'generated' dir")
    sp.add_argument("--generated", help="directory with frames + manifest.json")
    sp.add_argument("--out", help="output CSV path")
    sp.add_argument("--seed", type=int)
    sp.add_argument("-v", "--verbose", action="count", default=0)
    common(sub.add_parser("render-orbit", help="render ground-truth orbit frames + normals"))
    return p


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "verify": cmd_verify,
    "metrics": cmd_metrics,
    "render-orbit": cmd_render_orbit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits on --help and on bad flags
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ContractError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
