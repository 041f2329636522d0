"""Control-signal pathways: camera, time, pose normal maps, identity.

All encoders are pure functions of their inputs given fixed parameters.
Camera rotations are encoded relative to the first camera of the rig
(world frame by convention), so a common world rotation applied to every
camera leaves all embeddings unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Camera, check_rotation
from .nn import Conv2d, Linear, Module
from .tensor import ContractError, Tensor, gelu, tmean

PE_BANDS_DEFAULT = 8


def positional_encode(x, bands: int) -> np.ndarray:
    """Frequency features per component: [sin(2^k pi x), cos(2^k pi x)]_{k<bands}.

    Component-major layout; output length 2 * bands * len(x), all in [-1, 1].
    """
    if bands < 1:
        raise ContractError("positional_encode needs bands >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    freqs = (2.0 ** np.arange(bands)) * math.pi
    ang = x[:, None] * freqs[None, :]
    out = np.stack([np.sin(ang), np.cos(ang)], axis=2)  # (n, bands, 2)
    return out.reshape(-1)


@dataclass
class IdentityCondition:
    """Reference-image features: a pixel-aligned grid plus one global vector."""
    pixel: Tensor      # (C, h, w) latent-resolution features
    embedding: Tensor  # (C,) global vector consumed by cross-attention


class CameraEmbedder(Module):
    """Relative-rotation frequency features -> two-layer MLP -> model width."""

    def __init__(self, d_model: int, rng: np.random.Generator, bands: int = PE_BANDS_DEFAULT):
        self.bands = bands
        d_in = 2 * bands * 9
        self.fc1 = Linear(d_in, d_model, "view", rng)
        self.fc2 = Linear(d_model, d_model, "view", rng)

    def encode_rotations(self, cams: list[Camera]) -> np.ndarray:
        if len(cams) < 1:
            raise ContractError("camera embedding needs at least one camera")
        for cam in cams:
            check_rotation(cam.rotation)
        base = cams[0].rotation
        feats = []
        for cam in cams:
            if np.array_equal(cam.rotation, base):
                rel = np.eye(3)  # exact for the first view and any duplicate of it
            else:
                rel = cam.rotation @ base.T
            feats.append(positional_encode(rel.reshape(-1), self.bands))
        return np.stack(feats)  # (V, 2*bands*9)

    def __call__(self, cams: list[Camera]) -> Tensor:
        return self.fc2(gelu(self.fc1(Tensor(self.encode_rotations(cams)))))


class TimeEmbedder(Module):
    """Normalized frame index -> frequency features -> MLP -> model width."""

    def __init__(self, d_model: int, rng: np.random.Generator, bands: int = PE_BANDS_DEFAULT):
        self.bands = bands
        self.fc1 = Linear(2 * bands, d_model, "temporal", rng)
        self.fc2 = Linear(d_model, d_model, "temporal", rng)

    def encode_indices(self, frame_indices, total_frames: int) -> np.ndarray:
        idx = np.asarray(frame_indices, dtype=np.int64)
        if total_frames < 1:
            raise ContractError("total_frames must be >= 1")
        if ((idx < 0) | (idx >= total_frames)).any():
            raise ContractError(f"frame index out of range [0, {total_frames})")
        return np.stack([positional_encode([i / total_frames], self.bands) for i in idx])

    def __call__(self, frame_indices, total_frames: int) -> Tensor:
        return self.fc2(gelu(self.fc1(Tensor(self.encode_indices(frame_indices, total_frames)))))


class StepEmbedder(Module):
    """Diffusion-step fraction t/T -> frequency features -> MLP -> model width."""

    def __init__(self, d_model: int, rng: np.random.Generator, bands: int = PE_BANDS_DEFAULT):
        self.bands = bands
        self.fc1 = Linear(2 * bands, d_model, "conditioning", rng)
        self.fc2 = Linear(d_model, d_model, "conditioning", rng)

    def __call__(self, step_fraction: float) -> Tensor:
        feats = positional_encode([step_fraction], self.bands)
        return self.fc2(gelu(self.fc1(Tensor(feats[None, :])))).reshape((-1,))


class PoseEncoder(Module):
    """Strided conv stack turning rendered normal maps into latent-grid features.

    Total stride must be a power of two in {2, 4, 8}; the final 1x1 layer is
    zero-initialized so pose conditioning starts as a no-op and ramps in
    with training.
    """

    def __init__(self, d_model: int, rng: np.random.Generator, stride: int = 2,
                 width: int = 32, zero_init: bool = True):
        if stride not in (2, 4, 8):
            raise ContractError("pose encoder stride must be one of 2, 4, 8")
        self.stride = stride
        self.stem = Conv2d(3, width, 3, "conditioning", rng, stride=1, padding=1)
        downs = []
        c = width
        for _ in range(int(math.log2(stride))):
            downs.append(Conv2d(c, min(2 * c, d_model), 3, "conditioning", rng,
                                stride=2, padding=1))
            c = min(2 * c, d_model)
        self.downs = downs
        self.head = Conv2d(c, d_model, 1, "conditioning", rng, zero_init=zero_init)

    def __call__(self, maps) -> Tensor:
        """maps: (B, 3, H, W) normal components -> (B, d_model, H/s, W/s)."""
        x = maps if isinstance(maps, Tensor) else Tensor(maps)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"pose encoder expects (B, 3, H, W), got {x.shape}")
        if x.shape[2] % self.stride or x.shape[3] % self.stride:
            raise ContractError(
                f"resolution {x.shape[2]}x{x.shape[3]} not divisible by stride {self.stride}")
        x = gelu(self.stem(x))
        for conv in self.downs:
            x = gelu(conv(x))
        return self.head(x)


class IdentityEncoder(Module):
    """Reference image -> pixel-aligned features + one global embedding.

    The pixel branch mirrors the pose encoder (zero-init head). The global
    branch pools a deeper stack and projects to model width; it feeds
    cross-attention, whose output projection is itself zero-initialized, so
    it needs no zero head of its own.
    """

    def __init__(self, d_model: int, resolution: tuple, rng: np.random.Generator,
                 stride: int = 2, width: int = 32, zero_init: bool = True):
        self.resolution = tuple(resolution)
        self.stem = Conv2d(3, width, 3, "conditioning", rng, stride=1, padding=1)
        downs = []
        c = width
        for _ in range(int(math.log2(stride))):
            downs.append(Conv2d(c, min(2 * c, d_model), 3, "conditioning", rng,
                                stride=2, padding=1))
            c = min(2 * c, d_model)
        self.downs = downs
        self.stride = stride
        self.head = Conv2d(c, d_model, 1, "conditioning", rng, zero_init=zero_init)
        self.glob1 = Conv2d(c, d_model, 3, "conditioning", rng, stride=2, padding=1)
        self.glob2 = Conv2d(d_model, d_model, 3, "conditioning", rng, stride=2, padding=1)
        self.proj = Linear(d_model, d_model, "conditioning", rng)

    def __call__(self, image) -> IdentityCondition:
        """image: (3, H, W) in [0, 1] at the generation resolution."""
        img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
        if img.shape != (3, *self.resolution):
            raise ContractError(
                f"reference image shape {img.shape} != (3, {self.resolution[0]}, {self.resolution[1]})")
        x = Tensor(2.0 * img[None] - 1.0)
        x = gelu(self.stem(x))
        for conv in self.downs:
            x = gelu(conv(x))
        pixel = self.head(x).reshape((-1, x.shape[2], x.shape[3]))
        g = gelu(self.glob1(x))
        g = gelu(self.glob2(g))
        pooled = tmean(g, axis=(2, 3))          # (1, C)
        embedding = self.proj(pooled).reshape((-1,))
        return IdentityCondition(pixel=pixel, embedding=embedding)
