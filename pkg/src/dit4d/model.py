"""The cascaded 4D denoiser: spatial, view, and temporal attention blocks.

The token grid has axes (view V, time T, height H, width W, channel C).
Each 4D block runs three pre-norm residual sub-blocks that only differ in
how the grid is flattened for attention:

  spatial   (V*T) batch rows, attention over H*W tokens
  view      T batch rows, attention jointly over V*H*W tokens
  temporal  (V*H*W) batch rows, attention over T tokens

Camera embeddings are added to each view's tokens after the view block's
self-attention; time embeddings likewise in the temporal block. A global
identity embedding enters through cross-attention after self-attention
(spatial block by default, all three when configured). Pose features,
identity pixel features, and the diffusion-step embedding are added to the
grid once, at input assembly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .conditioning import (CameraEmbedder, IdentityCondition, IdentityEncoder,
                           PoseEncoder, StepEmbedder, TimeEmbedder)
from .geometry import Camera
from .nn import Conv2d, Linear, Module
from .tensor import (ContractError, ShapeError, Tensor, matmul, packed_attention,
                     rearrange, reshape, softmax_lastaxis, take_row, transpose)
from . import nn as _nn


@dataclass(frozen=True)
class Block4DConfig:
    d_model: int = 64
    heads: int = 4
    mlp_ratio: float = 2.0
    n_blocks: int = 2
    cross_attention_everywhere: bool = False

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ContractError("d_model must be divisible by heads")
        if self.n_blocks < 1:
            raise ContractError("n_blocks must be >= 1")


# near-identity init for residual-branch output layers: small enough that an
# untrained block is, in effect, a pass-through, but with live gradients
RESIDUAL_INIT_STD = 0.02

# paper-scale preset recorded for reference; tests never instantiate it
PAPER_SCALE = Block4DConfig(d_model=1280, heads=16, mlp_ratio=4.0, n_blocks=10)
DESK_SCALE = Block4DConfig()


@dataclass(frozen=True)
class DenoiserConfig:
    block: Block4DConfig = field(default_factory=Block4DConfig)
    resolution: tuple = (32, 32)
    latent_stride: int = 2
    pe_bands: int = 8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        return DenoiserConfig(block=Block4DConfig(**d["block"]),
                              resolution=tuple(d["resolution"]),
                              latent_stride=d.get("latent_stride", 2),
                              pe_bands=d.get("pe_bands", 8))


class SelfAttention(Module):
    """Multi-head self-attention; q/k/v computed by one fused projection."""

    def __init__(self, dim: int, heads: int, group: str, rng, zero_init: bool):
        self.heads = heads
        self.dk = dim // heads
        self.qkv = Linear(dim, 3 * dim, group, rng)
        self.o = Linear(dim, dim, group, rng,
                        init_scale=RESIDUAL_INIT_STD if zero_init else None)

    def __call__(self, x: Tensor) -> Tensor:
        B, N, C = x.shape
        h, d = self.heads, self.dk
        qkv = transpose(reshape(self.qkv(x), (B, N, 3, h, d)), (2, 0, 3, 1, 4))
        out = transpose(packed_attention(qkv), (0, 2, 1, 3))
        return self.o(reshape(out, (B, N, C)))


class CrossAttention(Module):
    """Queries from tokens, keys/values from a global embedding vector."""

    def __init__(self, dim: int, heads: int, group: str, rng, zero_init: bool):
        self.heads = heads
        self.dk = dim // heads
        self.q = Linear(dim, dim, group, rng)
        self.k = Linear(dim, dim, group, rng)
        self.v = Linear(dim, dim, group, rng)
        self.o = Linear(dim, dim, group, rng,
                        init_scale=RESIDUAL_INIT_STD if zero_init else None)

    def __call__(self, x: Tensor, context: Tensor) -> Tensor:
        B, N, C = x.shape
        h, d = self.heads, self.dk
        ctx = reshape(context, (-1, C))  # (M, C); M = 1 for a single embedding
        M = ctx.shape[0]
        q = transpose(reshape(self.q(x), (B, N, h, d)), (0, 2, 1, 3))
        k = transpose(reshape(self.k(ctx), (M, h, d)), (1, 0, 2))  # (h, M, d)
        v = transpose(reshape(self.v(ctx), (M, h, d)), (1, 0, 2))
        scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d))
        attn = softmax_lastaxis(scores)          # (B, h, N, M)
        out = transpose(matmul(attn, v), (0, 2, 1, 3))
        return self.o(reshape(out, (B, N, C)))


class FeedForward(Module):
    def __init__(self, dim: int, ratio: float, group: str, rng, zero_init: bool):
        hidden = int(round(dim * ratio))
        self.net = _nn.MLP(dim, hidden, group, rng,
                           out_init_scale=RESIDUAL_INIT_STD if zero_init else None)

    def __call__(self, x: Tensor) -> Tensor:
        return self.net(x)


class _SubBlock(Module):
    """Pre-norm self-attention + optional cross-attention + MLP.

    Each sub-layer is modulated by the diffusion-step embedding in the
    standard DiT fashion: the normalized input gets a step-conditioned
    shift and scale, and the branch output is multiplied by a
    step-conditioned gate before the residual add. The modulation head is
    zero-initialized, so an untrained block is the identity map; it exists
    because the noise target's statistics change drastically over the
    diffusion trajectory and a purely additive step signal cannot steer the
    blocks across that range at desk scale.
    """

    def __init__(self, cfg: Block4DConfig, group: str, rng, zero_init: bool,
                 with_cross: bool):
        C = cfg.d_model
        self.norm1 = _nn.LayerNorm(C, group)
        self.attn = SelfAttention(C, cfg.heads, group, rng, zero_init)
        self.with_cross = with_cross
        n_mod = 9 if with_cross else 6
        if with_cross:
            self.norm_cross = _nn.LayerNorm(C, group)
            self.cross = CrossAttention(C, cfg.heads, group, rng, zero_init)
        self.norm2 = _nn.LayerNorm(C, group)
        self.mlp = FeedForward(C, cfg.mlp_ratio, group, rng, zero_init)
        # zero-init during training so untrained blocks are identity maps;
        # random in test/gradcheck builds so the modulation path is exercised
        self.mod = Linear(C, n_mod * C, group, rng, zero_init=zero_init,
                          init_scale=None if zero_init else 0.2)

    def _modulation(self, step_emb: Optional[Tensor], C: int):
        if step_emb is None:
            zero = Tensor(np.zeros(C))
            return [zero] * (9 if self.with_cross else 6)
        n = 9 if self.with_cross else 6
        rows = reshape(self.mod(reshape(step_emb, (1, C))), (n, C))
        return [take_row(rows, i) for i in range(n)]


class SpatialBlock(_SubBlock):
    def __init__(self, cfg: Block4DConfig, rng, zero_init: bool):
        super().__init__(cfg, "spatial", rng, zero_init, with_cross=True)

    def __call__(self, z: Tensor, y_e: Optional[Tensor],
                 step_emb: Optional[Tensor] = None) -> Tensor:
        V, T, H, W, C = z.shape
        mods = self._modulation(step_emb, C)
        sh1, sc1, g1, sh2, sc2, g2 = mods[:6]
        x = rearrange(z, "v t h w c -> (v t) (h w) c")
        x = x + (self.attn(self.norm1(x) * (sc1 + 1.0) + sh1) * (g1 + 1.0))
        if self.with_cross and y_e is not None:
            shc, scc, gc = mods[6:]
            x = x + (self.cross(self.norm_cross(x) * (scc + 1.0) + shc, y_e)
                     * (gc + 1.0))
        x = x + (self.mlp(self.norm2(x) * (sc2 + 1.0) + sh2) * (g2 + 1.0))
        return rearrange(x, "(v t) (h w) c -> v t h w c", v=V, h=H)


class ViewBlock(_SubBlock):
    def __init__(self, cfg: Block4DConfig, rng, zero_init: bool):
        super().__init__(cfg, "view", rng, zero_init,
                         with_cross=cfg.cross_attention_everywhere)

    def __call__(self, z: Tensor, cam_emb: Tensor, y_e: Optional[Tensor] = None,
                 step_emb: Optional[Tensor] = None) -> Tensor:
        V, T, H, W, C = z.shape
        if cam_emb.shape != (V, C):
            raise ContractError(f"camera embedding shape {cam_emb.shape} != ({V}, {C})")
        mods = self._modulation(step_emb, C)
        sh1, sc1, g1, sh2, sc2, g2 = mods[:6]
        x = rearrange(z, "v t h w c -> t (v h w) c")
        x = x + (self.attn(self.norm1(x) * (sc1 + 1.0) + sh1) * (g1 + 1.0))
        # per-view additive camera injection, after self-attention
        x = reshape(reshape(x, (T, V, H * W, C)) + reshape(cam_emb, (1, V, 1, C)),
                    (T, V * H * W, C))
        if self.with_cross and y_e is not None:
            shc, scc, gc = mods[6:]
            x = x + (self.cross(self.norm_cross(x) * (scc + 1.0) + shc, y_e)
                     * (gc + 1.0))
        x = x + (self.mlp(self.norm2(x) * (sc2 + 1.0) + sh2) * (g2 + 1.0))
        return rearrange(x, "t (v h w) c -> v t h w c", v=V, h=H)


class TemporalBlock(_SubBlock):
    def __init__(self, cfg: Block4DConfig, rng, zero_init: bool):
        super().__init__(cfg, "temporal", rng, zero_init,
                         with_cross=cfg.cross_attention_everywhere)

    def __call__(self, z: Tensor, time_emb: Tensor, y_e: Optional[Tensor] = None,
                 step_emb: Optional[Tensor] = None) -> Tensor:
        V, T, H, W, C = z.shape
        if time_emb.shape != (T, C):
            raise ContractError(f"time embedding shape {time_emb.shape} != ({T}, {C})")
        mods = self._modulation(step_emb, C)
        sh1, sc1, g1, sh2, sc2, g2 = mods[:6]
        x = rearrange(z, "v t h w c -> (v h w) t c")
        x = x + (self.attn(self.norm1(x) * (sc1 + 1.0) + sh1) * (g1 + 1.0))
        x = x + reshape(time_emb, (1, T, C))  # per-frame additive time injection
        if self.with_cross and y_e is not None:
            shc, scc, gc = mods[6:]
            x = x + (self.cross(self.norm_cross(x) * (scc + 1.0) + shc, y_e)
                     * (gc + 1.0))
        x = x + (self.mlp(self.norm2(x) * (sc2 + 1.0) + sh2) * (g2 + 1.0))
        return rearrange(x, "(v h w) t c -> v t h w c", v=V, h=H)


class Block4D(Module):
    def __init__(self, cfg: Block4DConfig, rng, zero_init: bool):
        self.spatial = SpatialBlock(cfg, rng, zero_init)
        self.view = ViewBlock(cfg, rng, zero_init)
        self.temporal = TemporalBlock(cfg, rng, zero_init)

    def __call__(self, z: Tensor, cam_emb: Tensor, time_emb: Tensor,
                 y_e: Optional[Tensor], step_emb: Optional[Tensor] = None) -> Tensor:
        z = self.spatial(z, y_e, step_emb)
        z = self.view(z, cam_emb, y_e, step_emb)
        z = self.temporal(z, time_emb, y_e, step_emb)
        return z


@dataclass
class WindowCond:
    """Raw conditioning for one (V, T) arrangement of frames."""
    cameras: list                 # V cameras (first one is the window's frame)
    frame_indices: np.ndarray     # (T,) global frame indices
    total_frames: int
    pose_maps: np.ndarray         # (V, T, 3, H, W) rendered normal components
    reference: np.ndarray         # (3, H, W) reference image in [0, 1]


class Denoiser(Module):
    """Noise predictor over latent token grids (V, T, h, w, C).

    The latent codec (patchify conv + linear unpatchify) is initialized as
    an exact inverse pair, scaled for roughly unit-RMS latents, and kept
    frozen: the diffusion loss gives the decoder no gradient, so a drifting
    encoder would only destabilize the x0 statistics.
    """

    def __init__(self, config: DenoiserConfig, seed: int = 0, zero_init: bool = True):
        self.config = config
        cfg = config.block
        rng = np.random.default_rng(seed)
        C = cfg.d_model
        s = config.latent_stride
        H, W = config.resolution
        if H % s or W % s:
            raise ContractError(f"resolution {H}x{W} not divisible by latent stride {s}")
        self.latent_hw = (H // s, W // s)

        patch_dim = 3 * s * s
        if C < patch_dim:
            raise ContractError("d_model must be >= 3 * stride^2 for the latent codec")
        q, _ = np.linalg.qr(rng.normal(size=(C, patch_dim)))
        scale = math.sqrt(C / patch_dim)
        self.codec_enc = Conv2d(3, C, s, "conditioning", rng, stride=s)
        self.codec_enc.w.frozen = True
        self.codec_enc.b.frozen = True
        self.codec_enc.w.assign((scale * q).reshape(C, 3, s, s))
        self.codec_dec = Linear(C, patch_dim, "conditioning", rng)
        self.codec_dec.w.frozen = True
        self.codec_dec.b.frozen = True
        self.codec_dec.w.assign(q / scale)

        self.pose_enc = PoseEncoder(C, rng, stride=s, zero_init=zero_init)
        self.id_enc = IdentityEncoder(C, config.resolution, rng, stride=s,
                                      zero_init=zero_init)
        self.cam_emb = CameraEmbedder(C, rng, bands=config.pe_bands)
        self.time_emb = TimeEmbedder(C, rng, bands=config.pe_bands)
        self.step_emb = StepEmbedder(C, rng, bands=config.pe_bands)
        self.blocks = [Block4D(cfg, rng, zero_init) for _ in range(cfg.n_blocks)]
        # No norm before the output head: the residual stream carries z_t, so a
        # plain linear head can read the noise magnitude directly. The head is
        # preceded by a step-conditioned per-channel gain (zero-init: identity
        # at start) because the noise target's scale varies by over an order of
        # magnitude across diffusion steps, which an additive step embedding
        # alone cannot drive at this model size.
        self.step_gain = Linear(C, C, "conditioning", rng, zero_init=True)
        self.proj_out = Linear(C, C, "conditioning", rng, zero_init=zero_init)
        self.finalize_names()

    # -- latent codec ------------------------------------------------------

    def encode_frames(self, frames: np.ndarray) -> Tensor:
        """(F, 3, H, W) pixels in [0,1] -> (F, h, w, C) latent tokens."""
        if frames.shape[1:] != (3, *self.config.resolution):
            raise ShapeError(f"frames shape {frames.shape} != (F, 3, {self.config.resolution})")
        x = Tensor(2.0 * frames - 1.0)
        lat = self.codec_enc(x)  # (F, C, h, w)
        return rearrange(lat, "f c h w -> f h w c")

    def decode_latent(self, z) -> np.ndarray:
        """(..., h, w, C) latent tokens -> (..., 3, H, W) pixels in [0, 1]."""
        data = z.data if isinstance(z, Tensor) else np.asarray(z)
        h, w = self.latent_hw
        s = self.config.latent_stride
        lead = data.shape[:-3]
        flat = data.reshape(-1, data.shape[-1])
        patches = flat @ self.codec_dec.w.data + self.codec_dec.b.data
        patches = patches.reshape(*lead, h, w, 3, s, s)
        img = np.moveaxis(patches, (-3, -2, -1), (-5, -3, -1))  # (..., 3, h, s, w, s)
        img = img.reshape(*lead, 3, h * s, w * s)
        return np.clip((img + 1.0) / 2.0, 0.0, 1.0)

    # -- conditioning ------------------------------------------------------

    def encode_pose_maps(self, maps: np.ndarray) -> Tensor:
        """(F, 3, H, W) normal maps -> (F, h, w, C) pixel-aligned features."""
        return rearrange(self.pose_enc(maps), "f c h w -> f h w c")

    def encode_identity(self, reference: np.ndarray) -> IdentityCondition:
        return self.id_enc(reference)

    # -- denoising ---------------------------------------------------------

    def denoise(self, z, step_fraction: float, cam_emb: Tensor, time_emb: Tensor,
                pose_feat: Tensor, idc: IdentityCondition) -> Tensor:
        """Predict noise for a latent grid z (V, T, h, w, C)."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.ndim != 5:
            raise ShapeError(f"latent grid must be 5-axis, got {z.shape}")
        V, T, h, w, C = z.shape
        if (h, w) != self.latent_hw or C != self.config.block.d_model:
            raise ShapeError(f"latent grid {z.shape} incompatible with model "
                             f"{self.latent_hw} x {self.config.block.d_model}")
        if pose_feat.shape != z.shape:
            raise ContractError(f"pose features {pose_feat.shape} != grid {z.shape}")

        id_grid = reshape(transpose(idc.pixel, (1, 2, 0)), (1, 1, h, w, C))
        step = self.step_emb(step_fraction)
        cond = pose_feat + id_grid + step  # pixel-aligned conditioning, all tokens
        x = z + cond
        y_e = idc.embedding
        for block in self.blocks:
            x = block(x, cam_emb, time_emb, y_e, step)
        # the head taps the grid plus what the blocks contributed; the injected
        # conditioning is subtracted back out so it steers the blocks without
        # polluting the noise estimate (at high noise the target is plain z_t)
        x = x - cond
        gain = reshape(self.step_gain(reshape(step, (1, C))), (C,)) + 1.0
        return self.proj_out(x * gain)

    def denoise_window(self, z, step_fraction: float, cond: WindowCond) -> Tensor:
        """Embed raw window conditioning, then denoise. Differentiable."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        V, T = z.shape[0], z.shape[1]
        if len(cond.cameras) != V:
            raise ContractError(f"{len(cond.cameras)} cameras for V={V}")
        if len(cond.frame_indices) != T:
            raise ContractError(f"{len(cond.frame_indices)} frame indices for T={T}")
        if cond.pose_maps.shape[:2] != (V, T):
            raise ContractError(f"pose maps {cond.pose_maps.shape[:2]} != ({V}, {T})")
        cam = self.cam_emb(cond.cameras)
        tim = self.time_emb(cond.frame_indices, cond.total_frames)
        maps = cond.pose_maps.reshape(V * T, *cond.pose_maps.shape[2:])
        pose = rearrange(self.encode_pose_maps(maps), "(v t) h w c -> v t h w c", v=V)
        idc = self.encode_identity(cond.reference)
        return self.denoise(z, step_fraction, cam, tim, pose, idc)
