import hashlib
import json
import os

import numpy as np
import pytest

from dit4d.cli import main
from dit4d.data import DatasetConfig, generate_dataset
from dit4d.model import Block4DConfig, Denoiser, DenoiserConfig
from dit4d.nn import save_checkpoint

TINY_MODEL = {"block": {"d_model": 16, "heads": 2, "mlp_ratio": 2.0, "n_blocks": 1,
                        "cross_attention_everywhere": False},
              "resolution": [8, 8], "latent_stride": 2, "pe_bands": 8}


def _write(tmp_path, name, obj):
    p = os.path.join(tmp_path, name)
    with open(p, "w") as f:
        json.dump(obj, f)
    return p


class TestArgumentHandling:
    def test_help_lists_all_subcommands(self, capsys):
        assert main(["--help"]) == 0
        out = capsys.readouterr().out
        for cmd in ("gen-data", "train", "sample", "verify", "metrics", "render-orbit"):
            assert cmd in out

    def test_subcommand_help_lists_flags(self, capsys):
        assert main(["sample", "--help"]) == 0
        out = capsys.readouterr().out
        for flag in ("--config", "--out", "--seed", "--checkpoint", "--verbose"):
            assert flag in out

    def test_unknown_flag_fatal(self, capsys):
        assert main(["verify", "--bogus-flag"]) != 0

    def test_unknown_subcommand_fatal(self):
        assert main(["transmogrify"]) != 0

    def test_missing_config_is_error(self, capsys):
        assert main(["gen-data"]) != 0


class TestGenData:
    def test_deterministic_index_hash(self, tmp_path, capsys):
        cfg = {"resolution": 8, "seed": 5, "counts": {"image": 2}}
        cfg_path = _write(str(tmp_path), "data.json", cfg)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["gen-data", "--config", cfg_path, "--out", a]) == 0
        assert main(["gen-data", "--config", cfg_path, "--out", b]) == 0
        ha = hashlib.sha256(open(os.path.join(a, "index.json"), "rb").read()).hexdigest()
        hb = hashlib.sha256(open(os.path.join(b, "index.json"), "rb").read()).hexdigest()
        assert ha == hb

    def test_schema_violation_before_work(self, tmp_path, capsys):
        cfg_path = _write(str(tmp_path), "bad.json", {"resolution": 8, "bogus": 1})
        out = str(tmp_path / "o")
        assert main(["gen-data", "--config", cfg_path, "--out", out]) == 2
        assert not os.path.exists(os.path.join(out, "index.json"))

    def test_lock_exclusive(self, tmp_path, capsys):
        cfg_path = _write(str(tmp_path), "data.json",
                          {"resolution": 8, "counts": {"image": 1}})
        out = str(tmp_path / "locked")
        os.makedirs(out)
        with open(os.path.join(out, ".dit4d.lock"), "w") as f:
            f.write("123")
        assert main(["gen-data", "--config", cfg_path, "--out", out]) == 2
        err = capsys.readouterr().err
        assert "locked" in err


class TestSample:
    def test_missing_checkpoint_named(self, tmp_path, capsys):
        job = {"frames": 4, "resolution": 8, "steps": 2, "preset": "monocular",
               "cameras": {"fixed": {}}, "subject": {"pose": {"kind": "walk"}}}
        cfg_path = _write(str(tmp_path), "job.json", job)
        assert main(["sample", "--config", cfg_path, "--out", str(tmp_path / "s")]) == 2
        err = capsys.readouterr().err
        assert "checkpoint" in err

    def test_nonexistent_checkpoint_path_named(self, tmp_path, capsys):
        job = {"frames": 4, "resolution": 8, "steps": 2, "preset": "monocular",
               "cameras": {"fixed": {}}, "subject": {"pose": {"kind": "walk"}},
               "checkpoint": str(tmp_path / "missing.ckpt")}
        cfg_path = _write(str(tmp_path), "job.json", job)
        assert main(["sample", "--config", cfg_path, "--out", str(tmp_path / "s")]) == 2
        err = capsys.readouterr().err
        assert "missing.ckpt" in err

    def test_end_to_end_sample_and_metrics(self, tmp_path, capsys):
        model_cfg = dict(TINY_MODEL, resolution=[16, 16])  # >= the 11x11 ssim window
        model = Denoiser(DenoiserConfig.from_dict(model_cfg), seed=0)
        ckpt = str(tmp_path / "m.ckpt")
        save_checkpoint(ckpt, model, model_cfg)
        job = {"frames": 4, "resolution": 16, "steps": 2, "seed": 1,
               "preset": "monocular",
               "cameras": {"orbit": {"radius": 2.6, "degrees": 360, "focal": 20.0}},
               "subject": {"palette_seed": 3, "pose": {"kind": "sway", "seed": 2}},
               "checkpoint": ckpt}
        cfg_path = _write(str(tmp_path), "job.json", job)
        out = str(tmp_path / "gen")
        assert main(["sample", "--config", cfg_path, "--out", out]) == 0
        files = sorted(os.listdir(out))
        assert "manifest.json" in files
        assert sum(f.startswith("frame_") for f in files) == 4
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert len(manifest["cameras"]) == 4
        assert manifest["plan"]["lambda1"] == 1.0

        csv_path = str(tmp_path / "metrics.csv")
        assert main(["metrics", "--generated", out, "--out", csv_path]) == 0
        rows = open(csv_path).read().strip().splitlines()
        assert rows[0] == "frame,psnr_db,ssim"
        assert rows[-1].startswith("mean,")
        assert len(rows) == 6

    def test_seed_override_changes_output(self, tmp_path):
        model = Denoiser(DenoiserConfig.from_dict(TINY_MODEL), seed=0)
        ckpt = str(tmp_path / "m.ckpt")
        save_checkpoint(ckpt, model, TINY_MODEL)
        job = {"frames": 2, "resolution": 8, "steps": 2, "seed": 1,
               "preset": "monocular", "cameras": {"fixed": {"focal": 12.0}},
               "subject": {"pose": {"kind": "walk"}}, "checkpoint": ckpt}
        cfg_path = _write(str(tmp_path), "job.json", job)
        a, b, c = (str(tmp_path / x) for x in "abc")
        assert main(["sample", "--config", cfg_path, "--out", a]) == 0
        assert main(["sample", "--config", cfg_path, "--out", b]) == 0
        assert main(["sample", "--config", cfg_path, "--out", c, "--seed", "9"]) == 0
        fa = open(os.path.join(a, "frame_0000.png"), "rb").read()
        fb = open(os.path.join(b, "frame_0000.png"), "rb").read()
        fc = open(os.path.join(c, "frame_0000.png"), "rb").read()
        assert fa == fb
        assert fa != fc


class TestVerifyCommand:
    def test_single_suite_pass(self, capsys):
        assert main(["verify", "--suite", "ddpm"]) == 0
        out = capsys.readouterr().out
        assert "pass" in out and "FAIL" not in out

    def test_attention_oracle_suite(self, capsys):
        assert main(["verify", "--suite", "attention-oracle"]) == 0
        out = capsys.readouterr().out
        assert out.count("pass") >= 3

    def test_unknown_suite(self, capsys):
        assert main(["verify", "--suite", "wishful"]) != 0


class TestRenderOrbit:
    def test_writes_frames_and_sidecar(self, tmp_path):
        cfg_path = _write(str(tmp_path), "orbit.json",
                          {"frames": 3, "resolution": 16, "degrees": 360,
                           "pose": {"kind": "walk", "seed": 1}, "focal": 20.0})
        out = str(tmp_path / "orb")
        assert main(["render-orbit", "--config", cfg_path, "--out", out]) == 0
        files = set(os.listdir(out))
        assert {"rgb_0000.png", "normal_0000.png", "cameras.json"} <= files
        side = json.load(open(os.path.join(out, "cameras.json")))
        assert len(side["cameras"]) == 3

    def test_metrics_requires_manifest(self, tmp_path, capsys):
        os.makedirs(tmp_path / "empty", exist_ok=True)
        assert main(["metrics", "--generated", str(tmp_path / "empty")]) == 2
        assert "manifest" in capsys.readouterr().err
