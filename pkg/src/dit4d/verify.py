"""Oracle and invariant suites behind the ``verify`` subcommand.

Every check recomputes its expected values through an independent path
(nested loops, brute-force masked attention over all tokens, closed-form
algebra, analytic geometry) and compares against the production code.
The acceptance test module runs these same checks at their stated
tolerances.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import nn as _nn
from .conditioning import positional_encode
from .diffusion import make_schedule, plan_slices, q_sample
from .geometry import (capsule_person, lbs_pose, look_at_camera, orbit_trajectory,
                       rest_pose, uv_sphere)
from .model import Block4DConfig, Denoiser, DenoiserConfig, WindowCond
from .render import render_normal_map
from .tensor import (ContractError, Tensor, conv2d, linear, reshape, square,
                     tmean, tsum)


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float


def _run(suite, name, fn) -> CheckResult:
    t0 = time.monotonic()
    try:
        detail = fn()
        ok = True
    except AssertionError as e:
        detail, ok = str(e) or "assertion failed", False
    return CheckResult(suite, name, ok, detail or "", time.monotonic() - t0)


# -- independent numpy reimplementations (the oracles) -------------------------


def np_layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def np_gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def masked_full_attention(x, w_qkv, b_qkv, heads, mask):
    """Brute-force attention over ALL tokens with an allowed-pairs mask.

    x: (N, C); mask: (N, N) bool, True where attention is permitted.
    """
    N, C = x.shape
    d = C // heads
    qkv = x @ w_qkv + b_qkv                       # (N, 3C)
    qkv = qkv.reshape(N, 3, heads, d)
    out = np.zeros((N, C))
    for h in range(heads):
        q, k, v = qkv[:, 0, h], qkv[:, 1, h], qkv[:, 2, h]
        scores = q @ k.T / math.sqrt(d)
        scores = np.where(mask, scores, -np.inf)
        scores = scores - scores.max(-1, keepdims=True)
        p = np.exp(scores)
        p = p / p.sum(-1, keepdims=True)
        out[:, h * d:(h + 1) * d] = p @ v
    return out


def block_oracle(block, kind, z5, cam=None, tim=None, y_e=None, step=None):
    """Recompute one factorized block with full masked attention, in numpy."""
    V, T, H, W, C = z5.shape
    N = V * T * H * W
    ids = np.stack(np.meshgrid(np.arange(V), np.arange(T), np.arange(H),
                               np.arange(W), indexing="ij"), -1).reshape(N, 4)
    if kind == "spatial":
        group = ids[:, 0] * T + ids[:, 1]                       # same (v, t)
    elif kind == "view":
        group = ids[:, 1]                                        # same t
    elif kind == "temporal":
        group = (ids[:, 0] * H + ids[:, 2]) * W + ids[:, 3]      # same (v, h, w)
    else:
        raise ValueError(kind)
    mask = group[:, None] == group[None, :]

    # step-conditioned shift/scale/gate per sub-layer (zeros when no step)
    n_mod = 9 if block.with_cross else 6
    if step is None:
        mods = np.zeros((n_mod, C))
    else:
        mods = (step @ block.mod.w.data + block.mod.b.data).reshape(n_mod, C)
    sh1, sc1, g1, sh2, sc2, g2 = mods[:6]

    x = z5.reshape(N, C)
    ln = block.norm1
    xn = np_layer_norm(x, ln.gamma.data, ln.beta.data, ln.eps) * (sc1 + 1) + sh1
    heads = block.attn.heads
    att = masked_full_attention(xn, block.attn.qkv.w.data, block.attn.qkv.b.data,
                                heads, mask)
    x = x + (att @ block.attn.o.w.data + block.attn.o.b.data) * (g1 + 1)

    if kind == "view":
        x = x + cam[ids[:, 0]]
    if kind == "temporal":
        x = x + tim[ids[:, 1]]

    if block.with_cross and y_e is not None:
        shc, scc, gc = mods[6:]
        lnc = block.norm_cross
        xn = np_layer_norm(x, lnc.gamma.data, lnc.beta.data, lnc.eps) * (scc + 1) + shc
        d = C // heads
        q = (xn @ block.cross.q.w.data + block.cross.q.b.data).reshape(N, heads, d)
        k = (y_e @ block.cross.k.w.data + block.cross.k.b.data).reshape(heads, d)
        v = (y_e @ block.cross.v.w.data + block.cross.v.b.data).reshape(heads, d)
        out = np.zeros((N, C))
        for h in range(heads):
            s = q[:, h] @ k[h] / math.sqrt(d)       # (N,), single key
            p = np.ones_like(s)                      # softmax over one key
            out[:, h * d:(h + 1) * d] = p[:, None] * v[h]
        x = x + (out @ block.cross.o.w.data + block.cross.o.b.data) * (gc + 1)

    ln2 = block.norm2
    xn = np_layer_norm(x, ln2.gamma.data, ln2.beta.data, ln2.eps) * (sc2 + 1) + sh2
    f = block.mlp.net
    hdn = np_gelu(xn @ f.fc1.w.data + f.fc1.b.data)
    x = x + (hdn @ f.fc2.w.data + f.fc2.b.data) * (g2 + 1)
    return x.reshape(V, T, H, W, C)


def conv2d_loop_oracle(x, w, b, stride, padding):
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo))
    for n in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(Cin):
                        for a in range(kh):
                            for z in range(kw):
                                acc += xp[n, c, i * stride + a, j * stride + z] * w[o, c, a, z]
                    out[n, o, i, j] = acc + b[o]
    return out


def linear_loop_oracle(x, w, b):
    x2 = x.reshape(-1, x.shape[-1])
    out = np.zeros((x2.shape[0], w.shape[1]))
    for n in range(x2.shape[0]):
        for o in range(w.shape[1]):
            acc = 0.0
            for i in range(w.shape[0]):
                acc += x2[n, i] * w[i, o]
            out[n, o] = acc + b[o]
    return out.reshape(*x.shape[:-1], w.shape[1])


def rearrange_index_oracle(data, V, T, H, W, C):
    """Element mapping of (v h w) t c by explicit index loops."""
    out = np.zeros((V * H * W, T, C))
    for v in range(V):
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    out[(v * H + h) * W + w, t] = data[v, t, h, w]
    return out


def binary_erode(mask: np.ndarray, iterations: int) -> np.ndarray:
    m = mask.copy()
    for _ in range(iterations):
        p = np.pad(m, 1, constant_values=False)
        m = (p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:])
    return m


# -- suites ---------------------------------------------------------------------


def suite_attention_oracle(tol: float = 1e-10) -> list[CheckResult]:
    from .model import Block4D
    out = []
    rng = np.random.default_rng(7)
    block = Block4D(Block4DConfig(d_model=8, heads=2, mlp_ratio=2.0, n_blocks=1,
                                  cross_attention_everywhere=True),
                    np.random.default_rng(0), zero_init=False)
    V, T, H, W, C = 2, 3, 2, 2, 8
    z5 = rng.normal(size=(V, T, H, W, C))
    y_e = rng.normal(size=C)
    cam = rng.normal(size=(V, C))
    tim = rng.normal(size=(T, C))
    step = rng.normal(size=C)

    def spatial():
        got = block.spatial(Tensor(z5), Tensor(y_e), Tensor(step)).data
        want = block_oracle(block.spatial, "spatial", z5, y_e=y_e, step=step)
        diff = np.abs(got - want).max()
        assert diff < tol, f"spatial diff {diff}"
        return f"max diff {diff:.2e}"

    def view():
        got = block.view(Tensor(z5), Tensor(cam), Tensor(y_e), Tensor(step)).data
        want = block_oracle(block.view, "view", z5, cam=cam, y_e=y_e, step=step)
        diff = np.abs(got - want).max()
        assert diff < tol, f"view diff {diff}"
        return f"max diff {diff:.2e}"

    def temporal():
        got = block.temporal(Tensor(z5), Tensor(tim), Tensor(y_e), Tensor(step)).data
        want = block_oracle(block.temporal, "temporal", z5, tim=tim, y_e=y_e, step=step)
        diff = np.abs(got - want).max()
        assert diff < tol, f"temporal diff {diff}"
        return f"max diff {diff:.2e}"

    out.append(_run("attention-oracle", "spatial-vs-masked-full", spatial))
    out.append(_run("attention-oracle", "view-vs-masked-full", view))
    out.append(_run("attention-oracle", "temporal-vs-masked-full", temporal))
    return out


def full_model_gradcheck(entries_per_param: int = 2, h: float = 1e-5,
                         seed: int = 0) -> float:
    """Central-difference check across every parameter of a 2-block desk model.

    The loss routes through the latent encoder, the forward-noising mix, the
    full denoiser, and the unpatchify decoder so every parameter is reachable.
    """
    model = Denoiser(DenoiserConfig(block=Block4DConfig(64, 4, 2.0, 2),
                                    resolution=(4, 4)), seed=seed, zero_init=False)
    rng = np.random.default_rng(seed + 1)
    V, T = 2, 2
    cams = orbit_trajectory(V, 2.5, 1.0, (0, 0.9, 0), 180.0, 40.0, (4, 4))
    frames = rng.random((V * T, 3, 4, 4))
    maps = rng.normal(size=(V, T, 3, 4, 4))
    ref = rng.random((3, 4, 4))
    eps = rng.standard_normal((V, T, 2, 2, 64))
    sched = make_schedule(10)
    cond = WindowCond(cams, np.arange(T), T, maps, ref)

    def loss_fn():
        x0 = model.encode_frames(frames).reshape((V, T, 2, 2, 64))
        x_t = q_sample(x0, 7, Tensor(eps), sched)
        eps_hat = model.denoise_window(x_t, sched.step_fraction(7), cond)
        dec = linear(reshape(x0, (-1, 64)), model.codec_dec.w.tensor,
                     model.codec_dec.b.tensor)
        return tmean(square(eps_hat)) + tmean(square(dec))

    return _nn.finite_diff_check(loss_fn, model.parameters(), h=h,
                                 entries_per_param=entries_per_param,
                                 rng=np.random.default_rng(seed + 2))


def suite_gradients(entries_per_param: int = 2) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(11)

    def primitives():
        worst = 0.0
        x = _nn.Parameter(rng.normal(size=(3, 5)), "spatial")
        w = _nn.Parameter(rng.normal(size=(5, 4)), "spatial")
        b = _nn.Parameter(rng.normal(size=4), "spatial")
        worst = max(worst, _nn.finite_diff_check(
            lambda: tsum(square(linear(x.tensor, w.tensor, b.tensor))),
            [x, w, b], entries_per_param=None))
        from .tensor import gelu, layer_norm, softmax_lastaxis
        g = _nn.Parameter(np.ones(5), "spatial")
        be = _nn.Parameter(np.zeros(5), "spatial")
        worst = max(worst, _nn.finite_diff_check(
            lambda: tsum(square(softmax_lastaxis(gelu(layer_norm(
                x.tensor, g.tensor, be.tensor))))),
            [x, g, be], entries_per_param=None))
        xc = _nn.Parameter(rng.normal(size=(2, 3, 6, 6)), "conditioning")
        wc = _nn.Parameter(rng.normal(size=(4, 3, 3, 3)), "conditioning")
        bc = _nn.Parameter(rng.normal(size=4), "conditioning")
        worst = max(worst, _nn.finite_diff_check(
            lambda: tmean(square(conv2d(xc.tensor, wc.tensor, bc.tensor,
                                        stride=2, padding=1))),
            [xc, wc, bc], entries_per_param=None))
        assert worst < 1e-4, f"primitive gradcheck rel err {worst}"
        return f"max rel err {worst:.2e}"

    def full_model():
        worst = full_model_gradcheck(entries_per_param=entries_per_param)
        assert worst < 1e-4, f"full-model gradcheck rel err {worst}"
        return f"max rel err {worst:.2e}"

    out.append(_run("gradients", "primitive-central-differences", primitives))
    out.append(_run("gradients", "full-model-central-differences", full_model))
    return out


def suite_slice_plan(n_cases: int = 200, seed: int = 5) -> list[CheckResult]:
    def scan():
        rng = np.random.default_rng(seed)
        checked = 0
        while checked < n_cases:
            T_L = int(rng.integers(4, 61))
            divs = [d for d in range(1, T_L + 1) if T_L % d == 0]
            M_V2 = int(rng.choice(divs))
            n_v = T_L // M_V2
            divs2 = [d for d in range(1, n_v + 1) if n_v % d == 0]
            M_T2 = int(rng.choice(divs2))
            M_T1 = int(rng.integers(1, T_L + 1))
            overlap = int(rng.integers(0, M_T1))
            plan = plan_slices(T_L, M_T1, overlap, M_T2, M_V2)

            cover2 = np.zeros(T_L, dtype=int)
            for g in plan.groups2:
                assert g.shape == (M_V2, M_T2), f"group shape {g.shape}"
                for idx in g.reshape(-1):
                    cover2[idx] += 1
            assert (cover2 == 1).all(), f"strategy-2 not a partition: {cover2}"

            cover1 = np.zeros(T_L, dtype=int)
            for s, e in plan.windows1:
                cover1[s:e] += 1
            assert (cover1 >= 1).all(), "strategy-1 left frames uncovered"
            if overlap == 0:
                assert (cover1 == 1).all(), "overlap-0 windows must partition"
            checked += 1
        return f"{checked} random tuples verified"

    return [_run("slice-plan", "partition-and-coverage", scan)]


def suite_sampler() -> list[CheckResult]:
    from .diffusion import ddpm_step
    from .sampler import st_sample
    out = []
    sched = make_schedule(40).subsample(8)
    shape = (3, 3, 4)

    def constant_stub():
        c = 0.37

        def stub(z, frac, frames):
            return np.full_like(z, c)

        plan_b = plan_slices(24, 24, 0, 6, 4, 0.5, 0.5)
        plan_1 = plan_slices(24, 24, 0, 6, 4, 1.0, 0.0)
        xa = st_sample(stub, 24, shape, plan_b, sched, seed=3)
        xb = st_sample(stub, 24, shape, plan_1, sched, seed=3)
        assert np.array_equal(xa, xb), "constant stub trajectories differ"
        return "blended == single-strategy, bit-identical"

    def lambda_degenerate():
        rngm = np.random.default_rng(8)
        w = rngm.normal(size=(4, 4))

        def stub(z, frac, frames):
            return z @ w * 0.05

        plan = plan_slices(24, 8, 0, 6, 4, 1.0, 0.0)
        got = st_sample(stub, 24, shape, plan, sched, seed=9)

        # independent plain windowed temporal sampling
        rng = np.random.default_rng(9)
        x = rng.standard_normal((24, *shape))
        for k in range(sched.n_steps, 0, -1):
            eps = np.zeros_like(x)
            for s in range(0, 24, 8):
                eps[s:s + 8] = stub(x[s:s + 8][None], 0.0, None)[0]
            noise = rng.standard_normal(x.shape) if sched.sigma(k) > 0 else None
            x = ddpm_step(x, eps, k, sched, noise)
        assert np.array_equal(got, x), "lambda=(1,0) differs from plain windowing"
        return "temporal-only equivalence, bit-identical"

    def affine_full_window():
        rngm = np.random.default_rng(10)
        a = rngm.normal(size=4) * 0.1
        b = rngm.normal(size=4) * 0.1

        def stub(z, frac, frames):
            return z * a + b  # elementwise affine, arrangement-independent

        plan = plan_slices(24, 24, 0, 6, 4, 0.5, 0.5)
        got = st_sample(stub, 24, shape, plan, sched, seed=4)

        rng = np.random.default_rng(4)
        x = rng.standard_normal((24, *shape))
        for k in range(sched.n_steps, 0, -1):
            eps = x * a + b
            noise = rng.standard_normal(x.shape) if sched.sigma(k) > 0 else None
            x = ddpm_step(x, eps, k, sched, noise)
        diff = np.abs(got - x).max()
        assert diff < 1e-9, f"affine stub diff {diff}"
        return f"blended == full-sequence, max diff {diff:.2e}"

    out.append(_run("sampler", "constant-stub-bit-identical", constant_stub))
    out.append(_run("sampler", "lambda-degeneracy", lambda_degenerate))
    out.append(_run("sampler", "affine-full-window-equivalence", affine_full_window))
    return out


def _tiny_train_fixture(seed=0):
    """In-memory store-free batch builders for gating checks."""
    from .data import Sample
    from .geometry import PoseClip
    rng = np.random.default_rng(seed)
    res = 8

    def cams(n, degrees=360.0):
        return orbit_trajectory(n, 2.5, 1.0, (0, 0.9, 0), degrees, 12.0, (res, res))

    def clip(n):
        q = np.tile([1.0, 0, 0, 0], (n, 11, 1))
        return PoseClip(q, np.zeros((n, 3)))

    def sample(modality):
        if modality == "image":
            V, T = 1, 1
            cam = cams(1)
        elif modality == "video":
            V, T = 1, 6
            cam = cams(1) * 6
        elif modality == "multiview":
            V, T = 4, 2
            ring = cams(4)
            cam = [ring[v] for v in range(4) for _ in range(T)]
        elif modality == "static3d":
            V, T = 6, 1
            cam = cams(6)
        else:  # dyn4d
            V, T = 1, 8
            cam = cams(8)
        frames = rng.random((V * T, 3, res, res))
        normals = rng.normal(size=(V * T, 3, res, res)) * 0.5
        return Sample(modality, (V, T), frames, normals, cam, clip(T),
                      rng.random((3, res, res)), {})

    return sample


def suite_gating() -> list[CheckResult]:
    from .training import MODALITY_GROUPS, TrainConfig, build_item, training_step

    def gating():
        sched = make_schedule(50)
        fixture = _tiny_train_fixture()
        cfg = TrainConfig(model=DenoiserConfig(block=Block4DConfig(16, 2, 2.0, 1),
                                               resolution=(8, 8)),
                          window_video=4, window_multiview_t=2,
                          window_static3d_v=4, window_dyn4d=(2, 2))
        details = []
        for modality, allowed in MODALITY_GROUPS.items():
            model = Denoiser(cfg.model, seed=3, zero_init=False)
            opt = _nn.Adam(model.parameters(), lr=1e-3)
            before = {name: p.data.copy() for name, p in model.named_parameters()}
            rng = np.random.default_rng(1)
            item = build_item(fixture(modality), modality, rng, cfg)
            training_step(model, [item], modality, sched, opt, rng)
            changed_groups = set()
            for name, p in model.named_parameters():
                if not np.array_equal(before[name], p.data):
                    changed_groups.add(p.group)
                    assert p.group in allowed, \
                        f"{modality}: {name} ({p.group}) changed but is gated out"
            details.append(f"{modality}:{sorted(changed_groups)}")
        return "; ".join(details)

    return [_run("gating", "per-modality-parameter-freeze", gating)]


def suite_conditioning() -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(13)

    def world_rotation_invariance():
        from .conditioning import CameraEmbedder
        emb = CameraEmbedder(16, np.random.default_rng(0))
        cams = orbit_trajectory(5, 2.5, 0.8, (0, 0.9, 0), 270.0, 30.0, (16, 16))
        base = emb(cams).data
        # random world rotation: R_i -> R_i G^T keeps every R_i R_1^-1 fixed
        from .geometry import quat_from_axis_angle, quat_to_matrix, Camera
        axis = rng.normal(size=3)
        G = quat_to_matrix(quat_from_axis_angle(axis, float(rng.uniform(0.1, 3.0))))
        moved = [Camera(c.rotation @ G.T, c.translation, c.focal, c.principal,
                        c.resolution) for c in cams]
        rotated = emb(moved).data
        diff = np.abs(base - rotated).max()
        assert diff < 1e-9, f"embedding moved by {diff}"
        return f"max diff {diff:.2e}"

    def time_injectivity():
        from .conditioning import TimeEmbedder
        emb = TimeEmbedder(16, np.random.default_rng(0))
        enc = emb.encode_indices(np.arange(64), 64)
        d = enc[:, None, :] - enc[None, :, :]
        dist = np.sqrt((d ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        gap = dist.min()
        assert gap > 0, "pre-MLP time encodings collide"
        return f"min pairwise L2 gap {gap:.3e}"

    def pe_bounds():
        for _ in range(50):
            x = rng.normal(size=rng.integers(1, 10)) * 10
            e = positional_encode(x, int(rng.integers(1, 10)))
            assert np.abs(e).max() <= 1.0 + 1e-12, "encoding left [-1, 1]"
        e = positional_encode([0.0], 4)
        assert np.allclose(e, [0, 1, 0, 1, 0, 1, 0, 1]), f"PE(0) wrong: {e}"
        return "bounded in [-1, 1]; PE(0) pattern exact"

    out.append(_run("conditioning", "camera-world-rotation-invariance",
                    world_rotation_invariance))
    out.append(_run("conditioning", "time-embedding-injectivity", time_injectivity))
    out.append(_run("conditioning", "frequency-encoding-bounds", pe_bounds))
    return out


def suite_renderer() -> list[CheckResult]:
    out = []

    def sphere_normals():
        verts, tris = uv_sphere((0.0, 0.0, 0.0), 1.0, stacks=96, slices=192)
        cam = look_at_camera((0, 0, 4.0), (0, 0, 0), 200.0, (128, 128))
        nm = render_normal_map(verts, tris, cam)
        H, W = 128, 128
        ys, xs = np.mgrid[0:H, 0:W]
        cx, cy = cam.principal
        d = np.stack([(xs + 0.5 - cx) / cam.focal, (ys + 0.5 - cy) / cam.focal,
                      np.ones((H, W))], -1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = cam.position()
        dw = d @ cam.rotation
        b = 2 * dw @ o
        disc = b * b - 4 * (o @ o - 1.0)
        hit = disc > 0
        s = (-b - np.sqrt(np.maximum(disc, 0))) / 2
        pts = o + s[..., None] * dw
        analytic = pts / np.maximum(np.linalg.norm(pts, axis=-1, keepdims=True), 1e-12)
        interior = binary_erode(nm.valid, 2) & hit
        dots = np.clip(np.einsum("hwc,hwc->hw", nm.normals, analytic), -1, 1)
        ang = np.degrees(np.arccos(dots))
        worst = ang[interior].max()
        assert worst < 2.0, f"max angular error {worst} deg"
        lens = np.linalg.norm(nm.normals[nm.valid], axis=-1)
        assert np.abs(lens - 1.0).max() < 1e-6, "stored normals not unit"
        center = nm.normals[H // 2, W // 2]
        to_cam = o / np.linalg.norm(o)
        cang = math.degrees(math.acos(np.clip(center @ to_cam, -1, 1)))
        assert cang < 2.0, f"principal-point normal off by {cang} deg"
        return f"max interior err {worst:.2f} deg; center err {cang:.2f} deg"

    def lbs_identity():
        mesh = capsule_person()
        pose = rest_pose(mesh)
        posed = lbs_pose(mesh, *pose.frame(0))
        diff = np.abs(posed - mesh.vertices).max()
        assert diff < 1e-12, f"identity pose moved vertices by {diff}"
        return f"max drift {diff:.1e}"

    out.append(_run("renderer", "sphere-analytic-normals", sphere_normals))
    out.append(_run("renderer", "lbs-identity-pose", lbs_identity))
    return out


def suite_ddpm() -> list[CheckResult]:
    out = []

    def schedule_monotone():
        sched = make_schedule(1000, 1e-4, 0.02)
        assert (np.diff(sched.alpha_bars) < 0).all(), "alpha_bar not decreasing"
        assert (sched.alpha_bars > 0).all(), "alpha_bar not positive"
        assert sched.sigmas[0] == 0.0, "sigma at final reverse step nonzero"
        assert abs(sched.alpha_bars[0] - 0.9999) < 1e-12, "alpha_bar_1 != 1 - 1e-4"
        return "1000-step scan clean"

    def roundtrip():
        sched = make_schedule(100)
        rng = np.random.default_rng(2)
        x0 = rng.normal(size=(2, 3, 4))
        eps = rng.normal(size=(2, 3, 4))
        worst = 0.0
        for t in (1, 17, 55, 100):
            xt = q_sample(x0, t, eps, sched)
            ab = sched.alpha_bar(t)
            rec = (xt - math.sqrt(1 - ab) * eps) / math.sqrt(ab)
            worst = max(worst, np.abs(rec - x0).max())
        assert worst < 1e-9, f"roundtrip err {worst}"
        return f"max inversion err {worst:.1e}"

    def scalar_oracle():
        from .diffusion import DiffusionSchedule, ddpm_step
        sched = DiffusionSchedule(betas=np.array([0.01]), alphas=np.array([0.99]),
                                  alpha_bars=np.array([0.9]), sigmas=np.array([0.0]),
                                  t_source=np.array([1]), t_source_total=1)
        got = ddpm_step(np.array([1.0]), np.array([0.5]), 1, sched, None)[0]
        want = (1.0 / math.sqrt(0.99)) * (1.0 - (0.01 / math.sqrt(1.0 - 0.9)) * 0.5)
        assert abs(got - want) < 1e-9, f"{got} vs {want}"
        assert round(want, 5) == 0.98915
        return f"mu = {got:.6f}"

    out.append(_run("ddpm", "schedule-monotonicity", schedule_monotone))
    out.append(_run("ddpm", "q-sample-roundtrip", roundtrip))
    out.append(_run("ddpm", "posterior-scalar-oracle", scalar_oracle))
    return out


def suite_tensor() -> list[CheckResult]:
    from .tensor import rearrange
    out = []
    rng = np.random.default_rng(3)

    def roundtrip():
        for _ in range(40):
            nd = int(rng.integers(2, 7))
            shape = tuple(int(rng.integers(1, 5)) for _ in range(nd))
            names = [f"a{i}" for i in range(nd)]
            t = Tensor(rng.normal(size=shape))
            perm = list(rng.permutation(nd))
            cut = int(rng.integers(1, nd + 1))
            groups = [[names[p] for p in perm[:cut]], [names[p] for p in perm[cut:]]]
            rhs = " ".join("(" + " ".join(g) + ")" for g in groups if g)
            pattern = f"{' '.join(names)} -> {rhs}"
            sizes = {names[i]: shape[i] for i in range(nd)}
            y = rearrange(t, pattern)
            back = rearrange(y, f"{rhs} -> {' '.join(names)}", **sizes)
            assert np.array_equal(back.data, t.data), f"roundtrip failed for {pattern}"
        return "40 random patterns bit-exact"

    def loop_oracles():
        x = rng.normal(size=(2, 3, 4, 4, 8))
        got = rearrange(Tensor(x), "v t h w c -> (v h w) t c").data
        want = rearrange_index_oracle(x, 2, 3, 4, 4, 8)
        assert np.array_equal(got, want), "rearrange disagrees with index loops"
        xl = rng.normal(size=(2, 5, 6))
        wl = rng.normal(size=(6, 3))
        bl = rng.normal(size=3)
        dl = np.abs(linear(Tensor(xl), Tensor(wl), Tensor(bl)).data
                    - linear_loop_oracle(xl, wl, bl)).max()
        assert dl < 1e-12, f"linear oracle diff {dl}"
        xc = rng.normal(size=(2, 3, 7, 6))
        wc = rng.normal(size=(4, 3, 3, 3))
        bc = rng.normal(size=4)
        dc = np.abs(conv2d(Tensor(xc), Tensor(wc), Tensor(bc), stride=2, padding=1).data
                    - conv2d_loop_oracle(xc, wc, bc, 2, 1)).max()
        assert dc < 1e-12, f"conv2d oracle diff {dc}"
        return f"linear {dl:.1e}, conv {dc:.1e}"

    out.append(_run("tensor", "rearrange-roundtrip", roundtrip))
    out.append(_run("tensor", "loop-oracles", loop_oracles))
    return out


SUITES = {
    "tensor": suite_tensor,
    "attention-oracle": suite_attention_oracle,
    "gradients": suite_gradients,
    "slice-plan": suite_slice_plan,
    "sampler": suite_sampler,
    "gating": suite_gating,
    "conditioning": suite_conditioning,
    "renderer": suite_renderer,
    "ddpm": suite_ddpm,
}


def run_suites(names=None) -> list[CheckResult]:
    names = list(names) if names else list(SUITES)
    results = []
    for n in names:
        if n not in SUITES:
            raise ContractError(f"unknown suite {n!r}; choose from {sorted(SUITES)}")
        results.extend(SUITES[n]())
    return results
