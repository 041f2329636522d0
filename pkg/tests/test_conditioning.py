import numpy as np
import pytest

from dit4d.conditioning import (CameraEmbedder, IdentityEncoder, PoseEncoder,
                                StepEmbedder, TimeEmbedder, positional_encode)
from dit4d.geometry import (Camera, look_at_camera, orbit_trajectory,
                            quat_from_axis_angle, quat_to_matrix)
from dit4d.tensor import ContractError, Tensor


class TestPositionalEncode:
    def test_zero_input(self):
        assert np.allclose(positional_encode([0.0], 4), [0, 1, 0, 1, 0, 1, 0, 1])

    def test_half(self):
        got = positional_encode([0.5], 2)
        assert np.allclose(got, [1, 0, 0, -1], atol=1e-15)  # sin/cos at pi/2, pi

    def test_identity_rotation_pattern(self):
        flat = np.eye(3).reshape(-1)
        got = positional_encode(flat, 4)
        assert got.shape == (72,)
        one = positional_encode([1.0], 4)
        assert np.allclose(one, [0, -1, 0, 1, 0, 1, 0, 1], atol=1e-12)
        for comp in (0, 4, 8):  # the diagonal ones of the flattened identity
            assert np.allclose(got[comp * 8:(comp + 1) * 8], one, atol=1e-12)
        zero = positional_encode([0.0], 4)
        for comp in (1, 2, 3, 5, 6, 7):
            assert np.allclose(got[comp * 8:(comp + 1) * 8], zero)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            x = rng.normal(size=int(rng.integers(1, 12))) * 20
            e = positional_encode(x, int(rng.integers(1, 9)))
            assert np.abs(e).max() <= 1.0 + 1e-12
            assert e.shape == (2 * len(x) * len(e) // (2 * len(x)),)

    def test_bands_contract(self):
        with pytest.raises(ContractError):
            positional_encode([1.0], 0)


class TestCameraEmbedding:
    def _cams(self, n=4):
        return orbit_trajectory(n, 2.5, 1.0, (0, 0.9, 0), 300.0, 40.0, (16, 16))

    def test_single_camera_identity_source(self):
        emb = CameraEmbedder(16, np.random.default_rng(0))
        feats = emb.encode_rotations(self._cams(1))
        want = positional_encode(np.eye(3).reshape(-1), emb.bands)
        assert np.array_equal(feats[0], want)

    def test_equal_cameras_equal_embeddings(self):
        emb = CameraEmbedder(16, np.random.default_rng(0))
        cam = self._cams(1)[0]
        out = emb([cam, cam]).data
        assert np.array_equal(out[0], out[1])

    def test_global_rotation_invariance(self):
        emb = CameraEmbedder(24, np.random.default_rng(1))
        cams = self._cams(5)
        base = emb(cams).data
        rng = np.random.default_rng(2)
        for _ in range(5):
            G = quat_to_matrix(quat_from_axis_angle(rng.normal(size=3),
                                                    float(rng.uniform(0.1, 3.0))))
            moved = [Camera(c.rotation @ G.T, c.translation, c.focal, c.principal,
                            c.resolution) for c in cams]
            got = emb(moved).data
            assert np.abs(got - base).max() < 1e-9

    def test_non_orthonormal_rejected(self):
        emb = CameraEmbedder(16, np.random.default_rng(0))
        cam = self._cams(1)[0]
        bad = Camera.__new__(Camera)
        object.__setattr__(bad, "rotation", cam.rotation * 1.001)
        object.__setattr__(bad, "translation", cam.translation)
        object.__setattr__(bad, "focal", cam.focal)
        object.__setattr__(bad, "principal", cam.principal)
        object.__setattr__(bad, "resolution", cam.resolution)
        with pytest.raises(ContractError):
            emb([bad])

    def test_needs_a_camera(self):
        emb = CameraEmbedder(16, np.random.default_rng(0))
        with pytest.raises(ContractError):
            emb([])


class TestTimeEmbedding:
    def test_frame_zero_pattern(self):
        emb = TimeEmbedder(16, np.random.default_rng(0))
        enc = emb.encode_indices([0], 10)[0]
        assert np.allclose(enc, np.tile([0.0, 1.0], emb.bands))

    def test_duplicate_frames_identical(self):
        emb = TimeEmbedder(16, np.random.default_rng(0))
        out = emb([3, 3], 8).data
        assert np.array_equal(out[0], out[1])

    def test_injectivity_over_64(self):
        emb = TimeEmbedder(16, np.random.default_rng(0))
        enc = emb.encode_indices(np.arange(64), 64)
        diffs = enc[:, None, :] - enc[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        assert dist.min() > 0

    def test_out_of_range(self):
        emb = TimeEmbedder(16, np.random.default_rng(0))
        with pytest.raises(ContractError):
            emb([8], 8)
        with pytest.raises(ContractError):
            emb([-1], 8)


class TestPoseEncoder:
    def test_zero_init_contract(self):
        enc = PoseEncoder(16, np.random.default_rng(0), stride=2)
        out = enc(np.zeros((2, 3, 8, 8))).data
        assert np.array_equal(out, np.zeros_like(out))
        # zero head means zero output regardless of input
        out2 = enc(np.random.default_rng(1).normal(size=(1, 3, 8, 8))).data
        assert np.array_equal(out2, np.zeros_like(out2))

    @pytest.mark.parametrize("stride", [2, 4, 8])
    def test_output_dims(self, stride):
        enc = PoseEncoder(16, np.random.default_rng(0), stride=stride)
        out = enc(np.zeros((1, 3, 16, 16)))
        assert out.shape == (1, 16, 16 // stride, 16 // stride)

    def test_indivisible_resolution(self):
        enc = PoseEncoder(16, np.random.default_rng(0), stride=4)
        with pytest.raises(ContractError):
            enc(np.zeros((1, 3, 10, 10)))

    def test_stride_alignment(self):
        # constructed kernels: center-tap delta chains keep responses aligned,
        # so shifting the input by one stride cell shifts features by one cell
        enc = PoseEncoder(8, np.random.default_rng(0), stride=2, width=4,
                          zero_init=False)
        w0 = np.zeros_like(enc.stem.w.data)
        w0[0, 0, 1, 1] = 1.0  # pass channel 0 through
        enc.stem.w.assign(w0)
        enc.stem.b.assign(np.zeros_like(enc.stem.b.data))
        w1 = np.zeros_like(enc.downs[0].w.data)
        w1[0, 0, 1, 1] = 1.0
        enc.downs[0].w.assign(w1)
        enc.downs[0].b.assign(np.zeros_like(enc.downs[0].b.data))
        w2 = np.zeros_like(enc.head.w.data)
        w2[0, 0, 0, 0] = 1.0
        enc.head.w.assign(w2)
        enc.head.b.assign(np.zeros_like(enc.head.b.data))

        x = np.zeros((1, 3, 12, 12))
        x[0, 0, 4, 6] = 1.0
        y = enc(x).data[0, 0]
        x2 = np.zeros((1, 3, 12, 12))
        x2[0, 0, 4, 8] = 1.0  # one stride cell to the right
        y2 = enc(x2).data[0, 0]
        py, px = np.unravel_index(np.argmax(np.abs(y)), y.shape)
        qy, qx = np.unravel_index(np.argmax(np.abs(y2)), y2.shape)
        assert (qy, qx) == (py, px + 1)


class TestIdentityEncoder:
    def test_deterministic(self):
        enc = IdentityEncoder(16, (16, 16), np.random.default_rng(0))
        img = np.random.default_rng(1).random((3, 16, 16))
        a = enc(img)
        b = enc(img)
        assert np.array_equal(a.pixel.data, b.pixel.data)
        assert np.array_equal(a.embedding.data, b.embedding.data)

    def test_pixel_dims_match_latent(self):
        enc = IdentityEncoder(16, (16, 16), np.random.default_rng(0), stride=2)
        out = enc(np.zeros((3, 16, 16)))
        assert out.pixel.shape == (16, 8, 8)
        assert out.embedding.shape == (16,)
        assert np.isfinite(out.embedding.data).all()

    def test_resolution_mismatch(self):
        enc = IdentityEncoder(16, (16, 16), np.random.default_rng(0))
        with pytest.raises(ContractError):
            enc(np.zeros((3, 8, 8)))

    def test_receptive_field_confinement(self):
        enc = IdentityEncoder(16, (16, 16), np.random.default_rng(3), zero_init=False)
        rng = np.random.default_rng(4)
        img = rng.random((3, 16, 16))
        base = enc(img).pixel.data
        py, px = 9, 6
        img2 = img.copy()
        img2[:, py, px] = 1.0 - img2[:, py, px]
        moved = enc(img2).pixel.data
        diff = np.abs(moved - base).sum(axis=0) > 1e-12
        # pixel branch: stem k3 s1 p1, then k3 s2 p1, then k1. Output cell c
        # reads hidden [2c-1, 2c+1], each hidden reads input +-1, so cell c
        # covers input [2c-2, 2c+2]: the change at p reaches c iff
        # (p-2)/2 <= c <= (p+2)/2, per axis.
        for (cy, cx) in zip(*np.nonzero(diff)):
            assert (py - 2) / 2 <= cy <= (py + 2) / 2
            assert (px - 2) / 2 <= cx <= (px + 2) / 2
        assert diff.any()


def test_step_embedder_shapes():
    emb = StepEmbedder(16, np.random.default_rng(0))
    a = emb(0.5)
    b = emb(0.5)
    assert a.shape == (16,)
    assert np.array_equal(a.data, b.data)
