"""Cameras, orbit trajectories, skinned meshes, and linear blend skinning.

Conventions (held fixed throughout the package):
  * world axes: y up; lengths in meters
  * Camera.rotation is world-to-camera, rows = (right, down, forward),
    orthonormal with det +1; points with positive camera-z are in front
  * pixel (u, v) = (fx * x/z + cx, fy * y/z + cy), sampled at pixel centers
  * bone pose rotations are unit quaternions (w, x, y, z) applied in the
    bone's local frame; root additionally receives a translation
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError


# -- rotations ------------------------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ContractError("zero quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        return quat_normalize([0.25 * s,
                               (R[2, 1] - R[1, 2]) / s,
                               (R[0, 2] - R[2, 0]) / s,
                               (R[1, 0] - R[0, 1]) / s])
    i = int(np.argmax(np.diag(R)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
    q = np.zeros(4)
    q[0] = (R[k, j] - R[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (R[j, i] + R[i, j]) / s
    q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_normalize(q)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def check_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ContractError(f"rotation must be 3x3, got {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() >= tol or abs(np.linalg.det(R) - 1.0) >= tol:
        raise ContractError("rotation matrix is not orthonormal with det +1")


# -- cameras --------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    rotation: np.ndarray       # (3,3) world-to-camera
    translation: np.ndarray    # (3,)
    focal: float               # pixels
    principal: tuple           # (cx, cy) pixels
    resolution: tuple          # (H_px, W_px)

    def __post_init__(self):
        check_rotation(self.rotation)
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project(self, points_cam: np.ndarray):
        z = points_cam[:, 2]
        u = self.focal * points_cam[:, 0] / z + self.principal[0]
        v = self.focal * points_cam[:, 1] / z + self.principal[1]
        return np.stack([u, v], axis=1), z

    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_json(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(),
                "focal": self.focal,
                "principal": list(self.principal),
                "resolution": list(self.resolution)}

    @staticmethod
    def from_json(d: dict) -> "Camera":
        return Camera(np.array(d["rotation"]), np.array(d["translation"]),
                      float(d["focal"]), tuple(d["principal"]), tuple(d["resolution"]))


def look_at_camera(position, target, focal: float, resolution: tuple,
                   up=(0.0, 1.0, 0.0)) -> Camera:
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    f = target - position
    fn = np.linalg.norm(f)
    if fn < 1e-12:
        raise ContractError("camera position coincides with target")
    f = f / fn
    up = np.asarray(up, dtype=np.float64)
    r = np.cross(f, up)
    if np.linalg.norm(r) < 1e-9:  # looking along up: fall back to x
        r = np.cross(f, np.array([1.0, 0.0, 0.0]))
    r = r / np.linalg.norm(r)
    d = np.cross(f, r)
    R = np.stack([r, d, f], axis=0)
    t = -R @ position
    h, w = resolution
    return Camera(R, t, focal, (w / 2.0, h / 2.0), resolution)


def orbit_trajectory(n_frames: int, radius: float, height: float, target,
                     degrees: float, focal: float, resolution: tuple) -> list[Camera]:
    """Cameras on a circle around ``target``, all looking at it.

    Frame 0 sits at azimuth 0 (offset +z from the target); azimuth advances
    by ``degrees / n_frames`` per frame.
    """
    if n_frames < 1:
        raise ContractError("orbit_trajectory needs n_frames >= 1")
    if radius <= 0:
        raise ContractError("orbit_trajectory needs radius > 0")
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for k in range(n_frames):
        az = np.deg2rad(degrees) * k / n_frames
        pos = target + np.array([radius * np.sin(az), height, radius * np.cos(az)])
        cams.append(look_at_camera(pos, target, focal, resolution))
    return cams


# -- skinned meshes ---------------------------------------------------------------


@dataclass(frozen=True)
class Bone:
    name: str
    parent: int                 # -1 for the root
    rest_offset: np.ndarray     # translation from parent joint, rest pose


@dataclass
class SkinnedMesh:
    vertices: np.ndarray        # (N,3) rest positions
    triangles: np.ndarray       # (M,3) int indices
    skin_weights: np.ndarray    # (N,B) nonnegative, rows sum to 1
    skeleton: list              # list[Bone], parents precede children

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        n, b = self.skin_weights.shape
        if n != len(self.vertices) or b != len(self.skeleton):
            raise ContractError("skin weight table shape does not match mesh/skeleton")
        if (self.skin_weights < 0).any():
            raise ContractError("skin weights must be nonnegative")
        if np.abs(self.skin_weights.sum(axis=1) - 1.0).max() > 1e-9:
            raise ContractError("per-vertex skin weights must sum to 1")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ContractError("triangle index out of range")
        roots = [i for i, bone in enumerate(self.skeleton) if bone.parent < 0]
        if len(roots) != 1:
            raise ContractError("skeleton must have exactly one root")
        for i, bone in enumerate(self.skeleton):
            if bone.parent >= i:
                raise ContractError("skeleton parents must precede children (tree order)")

    @property
    def n_bones(self) -> int:
        return len(self.skeleton)


@dataclass
class PoseClip:
    rotations: np.ndarray        # (F, B, 4) unit quaternions (w,x,y,z)
    root_translation: np.ndarray  # (F, 3)
    fps: float = 12.0

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[2] != 4:
            raise ContractError("pose rotations must have shape (F, B, 4)")
        if len(self.rotations) < 1:
            raise ContractError("pose clip needs at least one frame")
        norms = np.linalg.norm(self.rotations, axis=2)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ContractError("pose quaternions must be unit norm")

    @property
    def n_frames(self) -> int:
        return len(self.rotations)

    def frame(self, i: int):
        return self.rotations[i], self.root_translation[i]

    def to_json(self) -> dict:
        return {"rotations": self.rotations.tolist(),
                "root_translation": self.root_translation.tolist(),
                "fps": self.fps}

    @staticmethod
    def from_json(d: dict) -> "PoseClip":
        return PoseClip(np.array(d["rotations"]), np.array(d["root_translation"]),
                        float(d.get("fps", 12.0)))


def _bone_globals(skeleton, rotations=None, root_translation=None):
    """4x4 joint-to-world transforms; ``rotations=None`` means rest pose."""
    n = len(skeleton)
    out = np.zeros((n, 4, 4))
    for i, bone in enumerate(skeleton):
        local = np.eye(4)
        if rotations is not None:
            local[:3, :3] = quat_to_matrix(rotations[i])
        local[:3, 3] = bone.rest_offset
        if bone.parent < 0 and root_translation is not None:
            local[:3, 3] = local[:3, 3] + root_translation
        if bone.parent < 0:
            out[i] = local
        else:
            out[i] = out[bone.parent] @ local
    return out


def lbs_pose(mesh: SkinnedMesh, rotations: np.ndarray,
             root_translation=None) -> np.ndarray:
    """Posed vertices: per-vertex convex blend of bone transforms.

    The identity pose (all unit quaternions, zero root translation) returns
    the rest vertices up to floating-point roundoff.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.shape != (mesh.n_bones, 4):
        raise ContractError(
            f"pose has {rotations.shape[0] if rotations.ndim else 0} bones, "
            f"skeleton has {mesh.n_bones}")
    if root_translation is None:
        root_translation = np.zeros(3)
    rest = _bone_globals(mesh.skeleton)
    posed = _bone_globals(mesh.skeleton, rotations, np.asarray(root_translation, dtype=np.float64))

    # inverse of [R|t] is [R^T | -R^T t]
    inv_rest = np.zeros_like(rest)
    inv_rest[:, :3, :3] = rest[:, :3, :3].transpose(0, 2, 1)
    inv_rest[:, :3, 3] = -np.einsum("bij,bj->bi", inv_rest[:, :3, :3], rest[:, :3, 3])
    inv_rest[:, 3, 3] = 1.0
    skin = posed @ inv_rest  # (B,4,4)

    v = mesh.vertices
    per_bone = np.einsum("bij,nj->bni", skin[:, :3, :3], v) + skin[:, None, :3, 3]
    return np.einsum("nb,bni->ni", mesh.skin_weights, per_bone)


# -- procedural biped ---------------------------------------------------------------


def _capsule(p0: np.ndarray, p1: np.ndarray, radius: float, segments: int = 8,
             cap_rings: int = 2):
    """Capsule from p0 to p1: ring vertices + triangles, outward winding."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)

    rows = []
    rows.append((p0 - axis * radius, 0.0))  # bottom pole handled as tiny ring
    for k in range(1, cap_rings + 1):
        a = 0.5 * np.pi * k / (cap_rings + 1)
        rows.append((p0 - axis * radius * np.cos(a), radius * np.sin(a)))
    rows.append((p0, radius))
    rows.append((p1, radius))
    for k in range(cap_rings, 0, -1):
        a = 0.5 * np.pi * k / (cap_rings + 1)
        rows.append((p1 + axis * radius * np.cos(a), radius * np.sin(a)))
    rows.append((p1 + axis * radius, 0.0))

    verts = []
    for center, r in rows:
        if r == 0.0:
            verts.append(center[None, :])
        else:
            ang = 2 * np.pi * np.arange(segments) / segments
            ring = center[None, :] + r * (np.cos(ang)[:, None] * u[None, :]
                                          + np.sin(ang)[:, None] * w[None, :])
            verts.append(ring)
    counts = [len(v) for v in verts]
    starts = np.cumsum([0] + counts[:-1])
    verts = np.concatenate(verts, axis=0)

    tris = []
    for r in range(len(rows) - 1):
        a0, a1 = starts[r], starts[r + 1]
        na, nb = counts[r], counts[r + 1]
        if na == 1:  # bottom pole fan
            for s in range(nb):
                tris.append([a0, a1 + (s + 1) % nb, a1 + s])
        elif nb == 1:  # top pole fan
            for s in range(na):
                tris.append([a1, a0 + s, a0 + (s + 1) % na])
        else:
            for s in range(na):
                s2 = (s + 1) % na
                tris.append([a0 + s, a1 + s2, a1 + s])
                tris.append([a0 + s, a0 + s2, a1 + s2])
    return verts, np.array(tris, dtype=np.int64)


def uv_sphere(center, radius: float, stacks: int = 64, slices: int = 128):
    """Triangulated sphere with outward winding; (vertices, triangles)."""
    center = np.asarray(center, dtype=np.float64)
    verts = [center + np.array([0.0, radius, 0.0])]
    for i in range(1, stacks):
        phi = np.pi * i / stacks
        for j in range(slices):
            th = 2 * np.pi * j / slices
            verts.append(center + radius * np.array([
                np.sin(phi) * np.cos(th), np.cos(phi), np.sin(phi) * np.sin(th)]))
    verts.append(center + np.array([0.0, -radius, 0.0]))
    verts = np.array(verts)
    last = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * slices + (j % slices)

    tris = []
    for j in range(slices):
        tris.append([0, ring(1, j + 1), ring(1, j)])
        tris.append([last, ring(stacks - 1, j), ring(stacks - 1, j + 1)])
    for i in range(1, stacks - 1):
        for j in range(slices):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, b, d])
            tris.append([a, d, c])
    return verts, np.array(tris, dtype=np.int64)


# joint layout: name -> (parent, rest offset from parent joint, capsule end offset, radius)
_BIPED = [
    ("pelvis",    -1, (0.0, 0.95, 0.0),   (0.0, 0.12, 0.0),   0.13),
    ("spine",      0, (0.0, 0.12, 0.0),   (0.0, 0.38, 0.0),   0.15),
    ("head",       1, (0.0, 0.38, 0.0),   (0.0, 0.22, 0.0),   0.11),
    ("l_arm_u",    1, (-0.21, 0.33, 0.0), (-0.24, -0.05, 0.0), 0.055),
    ("l_arm_l",    3, (-0.24, -0.05, 0.0), (-0.22, -0.06, 0.0), 0.045),
    ("r_arm_u",    1, (0.21, 0.33, 0.0),  (0.24, -0.05, 0.0),  0.055),
    ("r_arm_l",    5, (0.24, -0.05, 0.0), (0.22, -0.06, 0.0),  0.045),
    ("l_leg_u",    0, (-0.10, 0.0, 0.0),  (0.0, -0.42, 0.0),  0.075),
    ("l_leg_l",    7, (0.0, -0.42, 0.0),  (0.0, -0.42, 0.0),  0.06),
    ("r_leg_u",    0, (0.10, 0.0, 0.0),   (0.0, -0.42, 0.0),  0.075),
    ("r_leg_l",    9, (0.0, -0.42, 0.0),  (0.0, -0.42, 0.0),  0.06),
]


def capsule_person() -> SkinnedMesh:
    """Low-poly skinned biped: one capsule per bone, rigid skinning."""
    skeleton = [Bone(name, parent, np.array(offset, dtype=np.float64))
                for name, parent, offset, _, _ in _BIPED]
    joints = _bone_globals(skeleton)[:, :3, 3]

    verts, tris, weights = [], [], []
    for b, (name, parent, _, end, radius) in enumerate(_BIPED):
        p0 = joints[b]
        p1 = p0 + np.array(end, dtype=np.float64)
        v, t = _capsule(p0, p1, radius)
        tris.append(t + sum(len(x) for x in verts))
        verts.append(v)
        wrow = np.zeros((len(v), len(_BIPED)))
        wrow[:, b] = 1.0
        weights.append(wrow)
    return SkinnedMesh(np.concatenate(verts), np.concatenate(tris),
                       np.concatenate(weights), skeleton)


def body_part_of_vertex(mesh: SkinnedMesh) -> np.ndarray:
    """Dominant bone index per vertex (for palette coloring)."""
    return mesh.skin_weights.argmax(axis=1)


_IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def rest_pose(mesh: SkinnedMesh, n_frames: int = 1, fps: float = 12.0) -> PoseClip:
    rot = np.tile(_IDENTITY_Q, (n_frames, mesh.n_bones, 1))
    return PoseClip(rot, np.zeros((n_frames, 3)), fps)


def make_pose_clip(kind: str, n_frames: int, mesh: SkinnedMesh,
                   seed: int = 0, fps: float = 12.0) -> PoseClip:
    """Procedural motion curves driving the biped.

    kinds: walk (legs/arms counter-swing), wave (one forearm oscillates),
    turn (root yaw sweep), sway (small whole-body oscillation).
    """
    if kind not in ("walk", "wave", "turn", "sway"):
        raise ContractError(f"unknown pose kind {kind!r}")
    rng = np.random.default_rng(seed)
    names = [b.name for b in mesh.skeleton]
    idx = {n: i for i, n in enumerate(names)}
    amp = 0.5 + 0.4 * rng.random()
    phase = rng.random() * 2 * np.pi
    freq = 1.0 + 0.5 * rng.random()

    rot = np.tile(_IDENTITY_Q, (n_frames, mesh.n_bones, 1))
    root_t = np.zeros((n_frames, 3))
    x_axis = np.array([1.0, 0.0, 0.0])
    y_axis = np.array([0.0, 1.0, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])

    for f in range(n_frames):
        s = np.sin(2 * np.pi * freq * f / max(n_frames, 2) + phase)
        c = np.cos(2 * np.pi * freq * f / max(n_frames, 2) + phase)
        if kind == "walk":
            rot[f, idx["l_leg_u"]] = quat_from_axis_angle(x_axis, amp * 0.6 * s)
            rot[f, idx["r_leg_u"]] = quat_from_axis_angle(x_axis, -amp * 0.6 * s)
            rot[f, idx["l_leg_l"]] = quat_from_axis_angle(x_axis, amp * 0.3 * max(s, 0))
            rot[f, idx["r_leg_l"]] = quat_from_axis_angle(x_axis, amp * 0.3 * max(-s, 0))
            rot[f, idx["l_arm_u"]] = quat_from_axis_angle(x_axis, -amp * 0.4 * s)
            rot[f, idx["r_arm_u"]] = quat_from_axis_angle(x_axis, amp * 0.4 * s)
        elif kind == "wave":
            rot[f, idx["r_arm_u"]] = quat_from_axis_angle(z_axis, -1.9)
            rot[f, idx["r_arm_l"]] = quat_from_axis_angle(z_axis, -0.5 - amp * 0.5 * s)
            rot[f, idx["head"]] = quat_from_axis_angle(z_axis, 0.1 * s)
        elif kind == "turn":
            ang = amp * 2.0 * np.pi * f / max(n_frames - 1, 1) * 0.25
            rot[f, idx["pelvis"]] = quat_from_axis_angle(y_axis, ang)
            rot[f, idx["head"]] = quat_from_axis_angle(y_axis, 0.3 * s)
        elif kind == "sway":
            rot[f, idx["spine"]] = quat_from_axis_angle(z_axis, amp * 0.15 * s)
            rot[f, idx["l_arm_u"]] = quat_from_axis_angle(z_axis, amp * 0.2 * s)
            rot[f, idx["r_arm_u"]] = quat_from_axis_angle(z_axis, amp * 0.2 * s)
            root_t[f, 1] = 0.02 * c
    return PoseClip(rot, root_t, fps)
