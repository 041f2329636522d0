"""Z-buffered triangle rasterization: normal maps and flat-shaded RGB.

Per-pixel attributes come from the front-most triangle (flat shading,
face normals). Back-facing and degenerate triangles are skipped. Normal
maps store camera-decoupled normals: the camera-space face normal
multiplied back by the inverse camera rotation, i.e. a world-frame
normal field with (0,0,0) as the background sentinel plus an explicit
validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera
from .tensor import ContractError

_NEAR = 1e-4
_CHUNK_CELLS = 4_000_000  # max triangle-chunk x pixel cells held at once


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3) float, unit where valid, zeros elsewhere
    valid: np.ndarray    # (H, W) bool


def _face_buffers(vertices: np.ndarray, triangles: np.ndarray, cam: Camera):
    """Rasterize once: per-pixel front-most face index (-1 = none) and depth."""
    H, W = cam.resolution
    face_idx = np.full((H, W), -1, dtype=np.int64)
    depth = np.full((H, W), np.inf)

    if len(triangles) == 0:
        raise ContractError("rasterization needs at least one triangle")
    pts_cam = cam.world_to_cam(vertices)
    uv, z = cam.project(pts_cam)

    tri = np.asarray(triangles, dtype=np.int64)
    v0c, v1c, v2c = pts_cam[tri[:, 0]], pts_cam[tri[:, 1]], pts_cam[tri[:, 2]]

    # face normals in camera space from winding; cull back faces and
    # triangles touching the near plane
    n_cam = np.cross(v1c - v0c, v2c - v0c)
    centroid = (v0c + v1c + v2c) / 3.0
    facing = np.einsum("ij,ij->i", n_cam, centroid) < 0.0
    in_front = (v0c[:, 2] > _NEAR) & (v1c[:, 2] > _NEAR) & (v2c[:, 2] > _NEAR)
    keep = np.nonzero(facing & in_front)[0]
    if keep.size == 0:
        return face_idx, depth

    p0, p1, p2 = uv[tri[keep, 0]], uv[tri[keep, 1]], uv[tri[keep, 2]]
    iz0, iz1, iz2 = 1.0 / z[tri[keep, 0]], 1.0 / z[tri[keep, 1]], 1.0 / z[tri[keep, 2]]

    # screen-space double areas; skip degenerate (zero-area) triangles
    area = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
    ok = np.abs(area) > 1e-12
    keep, p0, p1, p2 = keep[ok], p0[ok], p1[ok], p2[ok]
    iz0, iz1, iz2, area = iz0[ok], iz1[ok], iz2[ok], area[ok]
    if keep.size == 0:
        return face_idx, depth

    xmin = np.clip(np.floor(np.minimum.reduce([p0[:, 0], p1[:, 0], p2[:, 0]]) - 0.5), 0, W - 1).astype(int)
    xmax = np.clip(np.ceil(np.maximum.reduce([p0[:, 0], p1[:, 0], p2[:, 0]]) + 0.5), 0, W - 1).astype(int)
    ymin = np.clip(np.floor(np.minimum.reduce([p0[:, 1], p1[:, 1], p2[:, 1]]) - 0.5), 0, H - 1).astype(int)
    ymax = np.clip(np.ceil(np.maximum.reduce([p0[:, 1], p1[:, 1], p2[:, 1]]) + 0.5), 0, H - 1).astype(int)

    n_tris = keep.size
    chunk = max(1, int(_CHUNK_CELLS // max(H * W, 1)))
    px = np.arange(W) + 0.5
    py = np.arange(H) + 0.5

    for s in range(0, n_tris, chunk):
        e = min(s + chunk, n_tris)
        sl = slice(s, e)
        x0 = xmin[sl].min(); x1 = xmax[sl].max() + 1
        y0 = ymin[sl].min(); y1 = ymax[sl].max() + 1
        gx = px[x0:x1][None, None, :]   # (1,1,w)
        gy = py[y0:y1][None, :, None]   # (1,h,1)

        a0 = p0[sl, 0][:, None, None]; b0 = p0[sl, 1][:, None, None]
        a1 = p1[sl, 0][:, None, None]; b1 = p1[sl, 1][:, None, None]
        a2 = p2[sl, 0][:, None, None]; b2 = p2[sl, 1][:, None, None]
        inv_area = (1.0 / area[sl])[:, None, None]

        w0 = ((a1 - gx) * (b2 - gy) - (b1 - gy) * (a2 - gx)) * inv_area
        w1 = ((a2 - gx) * (b0 - gy) - (b2 - gy) * (a0 - gx)) * inv_area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        invz = (w0 * iz0[sl][:, None, None] + w1 * iz1[sl][:, None, None]
                + w2 * iz2[sl][:, None, None])
        d = np.where(inside & (invz > 0), 1.0 / np.maximum(invz, 1e-12), np.inf)

        local_best = d.argmin(axis=0)          # (h,w) triangle within chunk
        hh, ww = d.shape[1], d.shape[2]
        flat = local_best.ravel()
        dmin = d.reshape(d.shape[0], -1)[flat, np.arange(hh * ww)].reshape(hh, ww)
        closer = dmin < depth[y0:y1, x0:x1]
        if not closer.any():
            continue
        sub_idx = keep[sl][local_best]
        region_f = face_idx[y0:y1, x0:x1]
        region_d = depth[y0:y1, x0:x1]
        region_f[closer] = sub_idx[closer]
        region_d[closer] = dmin[closer]
    return face_idx, depth


def render_normal_map(vertices: np.ndarray, triangles: np.ndarray, cam: Camera) -> NormalMap:
    """Camera-decoupled per-pixel normals of the front-most faces."""
    face_idx, _ = _face_buffers(vertices, triangles, cam)
    tri = np.asarray(triangles, dtype=np.int64)
    v0, v1, v2 = vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]]
    n_world = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n_world, axis=1, keepdims=True)
    n_world = n_world / np.maximum(norm, 1e-30)

    # decouple from the viewpoint: rotate into camera space, then back out
    n_cam = n_world @ cam.rotation.T
    n_stored = n_cam @ cam.rotation  # R^-1 = R^T, applied as row vectors

    H, W = cam.resolution
    valid = face_idx >= 0
    out = np.zeros((H, W, 3))
    out[valid] = n_stored[face_idx[valid]]
    return NormalMap(out, valid)


def render_rgb(vertices: np.ndarray, triangles: np.ndarray, vertex_colors: np.ndarray,
               cam: Camera, light_dir=(0.4, -0.8, 0.45), background=1.0,
               ambient: float = 0.45) -> np.ndarray:
    """Flat-shaded render with one fixed directional light; (H, W, 3) in [0,1]."""
    if len(np.asarray(triangles)) == 0:
        H, W = cam.resolution
        return np.full((H, W, 3), float(background))
    face_idx, _ = _face_buffers(vertices, triangles, cam)
    tri = np.asarray(triangles, dtype=np.int64)
    v0, v1, v2 = vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = ambient + (1.0 - ambient) * np.maximum(0.0, -(n @ light))
    base = (vertex_colors[tri[:, 0]] + vertex_colors[tri[:, 1]] + vertex_colors[tri[:, 2]]) / 3.0
    face_rgb = np.clip(base * shade[:, None], 0.0, 1.0)

    H, W = cam.resolution
    img = np.full((H, W, 3), float(background))
    valid = face_idx >= 0
    img[valid] = face_rgb[face_idx[valid]]
    return img


def render_empty(cam: Camera, background=1.0) -> np.ndarray:
    H, W = cam.resolution
    return np.full((H, W, 3), float(background))


def render_frame(vertices: np.ndarray, triangles: np.ndarray, vertex_colors: np.ndarray,
                 cam: Camera, light_dir=(0.4, -0.8, 0.45), background=1.0,
                 ambient: float = 0.45):
    """One rasterization pass shared by the RGB image and the normal map."""
    face_idx, _ = _face_buffers(vertices, triangles, cam)
    tri = np.asarray(triangles, dtype=np.int64)
    v0, v1, v2 = vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)

    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = ambient + (1.0 - ambient) * np.maximum(0.0, -(n @ light))
    base = (vertex_colors[tri[:, 0]] + vertex_colors[tri[:, 1]] + vertex_colors[tri[:, 2]]) / 3.0
    face_rgb = np.clip(base * shade[:, None], 0.0, 1.0)

    n_stored = (n @ cam.rotation.T) @ cam.rotation
    H, W = cam.resolution
    valid = face_idx >= 0
    img = np.full((H, W, 3), float(background))
    img[valid] = face_rgb[face_idx[valid]]
    normals = np.zeros((H, W, 3))
    normals[valid] = n_stored[face_idx[valid]]
    return img, NormalMap(normals, valid)
