import os

import numpy as np
import pytest

from dit4d import nn
from dit4d.model import Block4DConfig, Denoiser, DenoiserConfig
from dit4d.tensor import ContractError, ShapeError, Tensor, backward, square, tsum


class TestParameterTree:
    def test_unique_dotted_names(self):
        model = Denoiser(DenoiserConfig(block=Block4DConfig(64, 4, 2.0, 2),
                                        resolution=(8, 8)), seed=0)
        names = [n for n, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        assert all(p.name for p in model.parameters())
        assert any(n.startswith("blocks0.spatial.attn.qkv.w") for n in names)

    def test_group_required(self):
        with pytest.raises(ContractError):
            nn.Parameter(np.zeros(3), "nonsense")


class TestAdam:
    def test_descends_quadratic(self):
        p = nn.Parameter(np.array([5.0, -3.0]), "spatial")
        opt = nn.Adam([p], lr=0.1, clip=10.0)
        for _ in range(200):
            p.tensor.grad = None
            loss = tsum(square(p.tensor))
            backward(loss)
            opt.step()
        assert np.abs(p.data).max() < 0.1

    def test_gating_skips_groups(self):
        a = nn.Parameter(np.ones(2), "spatial")
        b = nn.Parameter(np.ones(2), "view")
        opt = nn.Adam([a, b], lr=0.1)
        a.tensor.grad = np.ones(2)
        b.tensor.grad = np.ones(2)
        opt.step(allowed_groups=("spatial",))
        assert not np.array_equal(a.data, np.ones(2))
        assert np.array_equal(b.data, np.ones(2))
        assert np.array_equal(opt.m[1], np.zeros(2))  # moments untouched too

    def test_frozen_parameter_never_moves(self):
        p = nn.Parameter(np.ones(2), "conditioning", frozen=True)
        opt = nn.Adam([p], lr=0.5)
        p.tensor.grad = np.ones(2)
        opt.step()
        assert np.array_equal(p.data, np.ones(2))

    def test_elementwise_clip(self):
        p = nn.Parameter(np.zeros(3), "spatial")
        opt = nn.Adam([p], lr=1.0, clip=1.0)
        p.tensor.grad = np.array([100.0, -100.0, 0.5])
        opt.step()
        # with clipping, the first two behave exactly like gradient +-1
        q = nn.Parameter(np.zeros(3), "spatial")
        opt2 = nn.Adam([q], lr=1.0, clip=1.0)
        q.tensor.grad = np.array([1.0, -1.0, 0.5])
        opt2.step()
        assert np.array_equal(p.data, q.data)


class TestCheckpoint:
    def _model(self, seed=0):
        return Denoiser(DenoiserConfig(block=Block4DConfig(64, 4, 2.0, 1),
                                       resolution=(8, 8)), seed=seed, zero_init=False)

    def test_roundtrip(self, tmp_path):
        model = self._model(0)
        cfg = model.config.to_dict()
        path = os.path.join(tmp_path, "m.ckpt")
        nn.save_checkpoint(path, model, cfg)
        assert os.path.exists(path + ".config.json")
        other = self._model(1)
        assert not np.array_equal(other.blocks[0].spatial.attn.qkv.w.data,
                                  model.blocks[0].spatial.attn.qkv.w.data)
        nn.load_checkpoint(path, other, cfg)
        for (na, pa), (nb, pb) in zip(model.named_parameters(), other.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data), na

    def test_config_hash_mismatch(self, tmp_path):
        model = self._model(0)
        path = os.path.join(tmp_path, "m.ckpt")
        nn.save_checkpoint(path, model, model.config.to_dict())
        other_cfg = DenoiserConfig(block=Block4DConfig(64, 4, 2.0, 2),
                                   resolution=(8, 8))
        other = Denoiser(other_cfg, seed=0)
        with pytest.raises(ContractError):
            nn.load_checkpoint(path, other, other_cfg.to_dict())

    def test_shape_validation(self, tmp_path):
        model = self._model(0)
        cfg = model.config.to_dict()
        path = os.path.join(tmp_path, "m.ckpt")
        nn.save_checkpoint(path, model, cfg)
        other = self._model(2)
        other.proj_out.w.assign(np.zeros((64, 64)))
        other.proj_out.w.tensor = Tensor(np.zeros((64, 32)), requires_grad=True)
        with pytest.raises((ShapeError, ContractError)):
            nn.load_checkpoint(path, other, cfg)

    def test_not_a_checkpoint(self, tmp_path):
        p = os.path.join(tmp_path, "junk.ckpt")
        with open(p, "wb") as f:
            f.write(b"garbage")
        with pytest.raises(ContractError):
            nn.load_checkpoint(p, self._model(0), {})


def test_finite_diff_check_catches_wrong_gradient():
    # a deliberately broken op: forward of square, backward of cube
    from dit4d.tensor import _record

    def bad_square(t):
        out = t.data * t.data

        def bw(g):
            return (3.0 * t.data * t.data * g,)

        return _record(out, (t,), bw)

    p = nn.Parameter(np.array([1.3, -0.7]), "spatial")
    err = nn.finite_diff_check(lambda: tsum(bad_square(p.tensor)), [p],
                               entries_per_param=None)
    assert err > 1e-2
