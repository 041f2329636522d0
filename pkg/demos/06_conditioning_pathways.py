"""The four control pathways and their invariances.

Run:  python demos/06_conditioning_pathways.py
"""

import numpy as np

from dit4d.conditioning import (CameraEmbedder, IdentityEncoder, PoseEncoder,
                                TimeEmbedder, positional_encode)
from dit4d.geometry import (Camera, orbit_trajectory, quat_from_axis_angle,
                            quat_to_matrix)

rng = np.random.default_rng(0)

# --- frequency encoding --------------------------------------------------------
print("PE(0, 4 bands)   =", positional_encode([0.0], 4))
print("PE(0.5, 2 bands) =", positional_encode([0.5], 2).round(12))

# --- camera embedding: relative rotations kill the global frame -----------------
emb = CameraEmbedder(32, np.random.default_rng(1))
cams = orbit_trajectory(4, 2.6, 1.0, (0, 0.95, 0), 360.0, 40.0, (32, 32))
base = emb(cams).data

G = quat_to_matrix(quat_from_axis_angle([0.3, 1.0, -0.2], 1.1))
moved = [Camera(c.rotation @ G.T, c.translation, c.focal, c.principal, c.resolution)
         for c in cams]
drift = np.abs(emb(moved).data - base).max()
print(f"\nrotating the whole world moves the camera embeddings by {drift:.1e}")
print("(only rotations relative to the first camera are ever encoded)")

# --- time embedding: normalized frame index, all 64 frames distinct -------------
temb = TimeEmbedder(32, np.random.default_rng(2))
enc = temb.encode_indices(np.arange(64), 64)
d = enc[:, None] - enc[None, :]
gap = np.sqrt((d ** 2).sum(-1))
np.fill_diagonal(gap, np.inf)
print(f"\n64 frame encodings, min pairwise distance: {gap.min():.3f}")

# --- pose and identity encoders start as a no-op ---------------------------------
penc = PoseEncoder(32, np.random.default_rng(3), stride=2)
feat = penc(rng.normal(size=(1, 3, 32, 32)))
print(f"\npose features: {feat.shape}, zero-init head -> max |f| = "
      f"{np.abs(feat.data).max()} (conditioning ramps in with training)")

ienc = IdentityEncoder(32, (32, 32), np.random.default_rng(4))
idc = ienc(rng.random((3, 32, 32)))
print(f"identity condition: pixel grid {idc.pixel.shape}, "
      f"global embedding {idc.embedding.shape}")
