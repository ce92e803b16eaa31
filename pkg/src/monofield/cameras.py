"""Pinhole cameras, look-at poses, ray generation, and the camera file.

Convention throughout: camera x points right, y points down, z points
forward along the view direction; rotation/translation are camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONVENTION_TAG = "xright-ydown-zforward"

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray      # [3, 3] camera-to-world
    translation: np.ndarray   # [3] camera center in world

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose must be a 3x3 rotation and 3-vector")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


def intrinsics_for_fov(width: int, height: int, vertical_fov_deg: float) -> CameraIntrinsics:
    """Square-pixel intrinsics with the principal point at the center."""
    fy = 0.5 * height / np.tan(np.radians(vertical_fov_deg) / 2.0)
    return CameraIntrinsics(fx=fy, fy=fy, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """Pose at ``position`` with the optical axis through ``target``.

    With y pointing down in camera space, the camera-up direction is -y;
    the world ``up`` fixes the roll.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("camera position coincides with target")
    z = fwd / n
    down = -up + np.dot(up, z) * z     # -up projected off the optical axis
    dn = np.linalg.norm(down)
    if dn < 1e-12:
        raise ValueError("up vector is parallel to the view direction")
    y = down / dn
    x = np.cross(y, z)
    r = np.stack([x, y, z], axis=1)
    return CameraPose(rotation=r, translation=position)


def pixel_directions(intr: CameraIntrinsics, pose: CameraPose, px: np.ndarray) -> np.ndarray:
    """Unit world-space directions through continuous pixel coords [N, 2]."""
    px = np.asarray(px, dtype=np.float64)
    d_cam = np.stack(
        [
            (px[:, 0] - intr.cx) / intr.fx,
            (px[:, 1] - intr.cy) / intr.fy,
            np.ones(px.shape[0]),
        ],
        axis=1,
    )
    d_world = d_cam @ pose.rotation.T
    return d_world / np.linalg.norm(d_world, axis=1, keepdims=True)


def ray_box_spans(origins: np.ndarray, dirs: np.ndarray, box_min: float,
                  box_max: float, t_min: float = 1e-4):
    """Slab intersection of rays with the scene cube.

    Returns (t_near [N], t_far [N], hit [N]); misses keep placeholder
    spans (0, 1) and hit=False.  Entry distances clamp to ``t_min`` so a
    camera inside the box still integrates forward only.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    t_lo = np.full((n, 3), -np.inf)
    t_hi = np.full((n, 3), np.inf)
    for ax in range(3):
        d = dirs[:, ax]
        o = origins[:, ax] if origins.shape[0] == n else np.full(n, origins[0, ax])
        parallel = np.abs(d) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (box_min - o) / d
            b = (box_max - o) / d
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        inside = (o >= box_min) & (o <= box_max)
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        t_lo[:, ax] = lo
        t_hi[:, ax] = hi
    near = t_lo.max(axis=1)
    far = t_hi.min(axis=1)
    near = np.maximum(near, t_min)
    hit = near < far
    t_near = np.where(hit, near, 0.0)
    t_far = np.where(hit, far, 1.0)
    return t_near, t_far, hit


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    hit: bool = True

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("require 0 <= t_near < t_far")


def pixel_to_ray(intr: CameraIntrinsics, pose: CameraPose, px, box_min: float,
                 box_max: float) -> Ray:
    """Ray through continuous pixel coords, spanned against the scene box.

    A ray that misses the box comes back with hit=False and a placeholder
    span; it renders as pure background.
    """
    px = np.asarray(px, dtype=np.float64)
    if not (0 <= px[0] <= intr.width and 0 <= px[1] <= intr.height):
        raise ValueError(f"pixel {px} outside {intr.width}x{intr.height} image")
    d = pixel_directions(intr, pose, px[None, :])[0]
    tn, tf, hit = ray_box_spans(pose.translation[None, :], d[None, :],
                                box_min, box_max)
    return Ray(origin=pose.translation, direction=d,
               t_near=float(tn[0]), t_far=float(tf[0]), hit=bool(hit[0]))


def camera_rays(intr: CameraIntrinsics, pose: CameraPose, box_min: float,
                box_max: float):
    """Rays through every pixel center, row-major.

    Returns (origins [N,3], dirs [N,3], t_near [N], t_far [N], hit [N])
    with N = width*height.
    """
    xs, ys = np.meshgrid(
        np.arange(intr.width) + 0.5, np.arange(intr.height) + 0.5
    )
    px = np.stack([xs.ravel(), ys.ravel()], axis=1)
    dirs = pixel_directions(intr, pose, px)
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    tn, tf, hit = ray_box_spans(origins, dirs, box_min, box_max)
    return origins, dirs, tn, tf, hit


# ---------------------------------------------------------------------------
# Camera file: one whitespace-separated record per line:
# fx fy cx cy width height r00 r01 r02 r10 ... r22 tx ty tz convention-tag


def format_camera(intr: CameraIntrinsics, pose: CameraPose) -> str:
    nums = [intr.fx, intr.fy, intr.cx, intr.cy]
    fields = [f"{v:.17g}" for v in nums]
    fields += [str(intr.width), str(intr.height)]
    fields += [f"{v:.17g}" for v in pose.rotation.ravel()]
    fields += [f"{v:.17g}" for v in pose.translation]
    fields.append(CONVENTION_TAG)
    return " ".join(fields)


def parse_camera(line: str):
    parts = line.split()
    if len(parts) != 19:
        raise ValueError(f"camera record has {len(parts)} fields, expected 19")
    if parts[18] != CONVENTION_TAG:
        raise ValueError(f"unknown camera convention {parts[18]!r}")
    intr = CameraIntrinsics(
        fx=float(parts[0]), fy=float(parts[1]),
        cx=float(parts[2]), cy=float(parts[3]),
        width=int(parts[4]), height=int(parts[5]),
    )
    r = np.array([float(v) for v in parts[6:15]]).reshape(3, 3)
    t = np.array([float(v) for v in parts[15:18]])
    return intr, CameraPose(rotation=r, translation=t)


def save_cameras(path, cameras) -> None:
    with open(path, "w") as fh:
        for intr, pose in cameras:
            fh.write(format_camera(intr, pose) + "\n")


def load_cameras(path):
    cameras = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                cameras.append(parse_camera(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno + 1}: {exc}") from exc
    return cameras
