"""Procedural oracle scenes with analytically known geometry and depth.

A scene is a union of sphere/box primitives with constant or striped
colors.  Density and color are direct functions of position, so scenes
render through the same volume renderer as learned fields while their
true surface depth comes from closed-form ray intersections.  That makes
them the ground-truth bed for every geometric claim in the test suite.

Dataset directory layout:

    cameras.txt    one camera record per line (input view first)
    rgb/0000.png   8-bit renders, one per camera
    depth/0000.pfm analytic surface depth (0 marks background)
    meta.txt       key=value lines: class label, spec hash, view count
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cameras import (
    CameraIntrinsics,
    CameraPose,
    camera_rays,
    intrinsics_for_fov,
    load_cameras,
    look_at,
    save_cameras,
)
from .images import load_image, load_pfm, save_image, save_pfm
from .render import RenderConfig, render_image


@dataclass(frozen=True)
class Primitive:
    kind: str                      # "sphere" | "box"
    center: tuple
    size: float | tuple            # sphere radius or box half-extents
    color: tuple = (1.0, 1.0, 1.0)
    texture: str = "constant"      # "constant" | "stripes"
    density: float = 600.0
    edge: float = 0.0              # 0 = hard surface, >0 = smooth shell width

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.texture not in ("constant", "stripes"):
            raise ValueError(f"unknown texture {self.texture!r}")
        if self.density < 0:
            raise ValueError("density must be non-negative")
        c = np.asarray(self.center, dtype=np.float64)
        h = self._half_extents()
        if ((np.abs(c) + h) > 1.0).any():
            raise ValueError("primitive extends outside the [-1,1]^3 box")

    def _half_extents(self) -> np.ndarray:
        if self.kind == "sphere":
            return np.full(3, float(self.size))
        return np.asarray(self.size, dtype=np.float64)

    def signed_distance(self, positions: np.ndarray) -> np.ndarray:
        """Negative inside, positive outside (box uses the Chebyshev gauge)."""
        rel = positions - np.asarray(self.center)
        if self.kind == "sphere":
            return np.linalg.norm(rel, axis=-1) - float(self.size)
        return (np.abs(rel) - self._half_extents()).max(axis=-1)

    def density_at(self, positions: np.ndarray) -> np.ndarray:
        sd = self.signed_distance(positions)
        if self.edge <= 0:
            return np.where(sd < 0, self.density, 0.0)
        s = np.clip(0.5 - sd / self.edge, 0.0, 1.0)
        return self.density * s * s * (3.0 - 2.0 * s)   # smoothstep shell

    def color_at(self, positions: np.ndarray) -> np.ndarray:
        base = np.asarray(self.color, dtype=np.float64)
        if self.texture == "constant":
            return np.broadcast_to(base, positions.shape).copy()
        phase = 8.0 * np.pi * positions[:, 0] + 4.0 * np.pi * positions[:, 1]
        factor = 0.6 + 0.4 * (0.5 + 0.5 * np.sin(phase))
        return base[None, :] * factor[:, None]

    def ray_hit(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First positive intersection distance with the nominal surface.

        Returns +inf where the ray misses.  Rays starting inside report
        the exit distance, which is still the first surface crossing.
        """
        rel = origins - np.asarray(self.center)
        if self.kind == "sphere":
            r = float(self.size)
            b = np.sum(rel * dirs, axis=-1)
            c = np.sum(rel * rel, axis=-1) - r * r
            disc = b * b - c
            hit = disc >= 0
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t0 = -b - sq
            t1 = -b + sq
            t = np.where(t0 > 1e-9, t0, t1)
            return np.where(hit & (t > 1e-9), t, np.inf)
        h = self._half_extents()
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (-h - rel) / dirs
            b2 = (h - rel) / dirs
        lo = np.where(np.abs(dirs) < 1e-15,
                      np.where(np.abs(rel) <= h, -np.inf, np.inf),
                      np.minimum(a, b2))
        hi = np.where(np.abs(dirs) < 1e-15,
                      np.where(np.abs(rel) <= h, np.inf, -np.inf),
                      np.maximum(a, b2))
        near = lo.max(axis=-1)
        far = hi.min(axis=-1)
        t = np.where(near > 1e-9, near, far)
        return np.where((near <= far) & (t > 1e-9), t, np.inf)


@dataclass(frozen=True)
class OracleSceneSpec:
    primitives: tuple
    background: str = "white"
    label: str = "scene"
    seed: int = 0

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")

    def spec_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def scene_field(spec: OracleSceneSpec):
    """The scene as a positions -> (sigma, rgb) callable.

    Overlapping primitives sum densities and blend colors by density
    weight, keeping the field well-defined everywhere.
    """

    def fn(positions):
        positions = np.asarray(positions, dtype=np.float64)
        total = np.zeros(positions.shape[0])
        weighted = np.zeros_like(positions)
        for prim in spec.primitives:
            d = prim.density_at(positions)
            total += d
            weighted += d[:, None] * prim.color_at(positions)
        rgb = weighted / np.maximum(total, 1e-12)[:, None]
        rgb[total <= 0] = 1.0
        return total, rgb

    return fn


def analytic_depth(spec: OracleSceneSpec, origins, dirs) -> np.ndarray:
    """Nearest surface-hit distance per ray; 0 where every primitive misses."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    best = np.full(dirs.shape[0], np.inf)
    for prim in spec.primitives:
        best = np.minimum(best, prim.ray_hit(origins, dirs))
    return np.where(np.isfinite(best), best, 0.0)


def ring_cameras(n_views: int, intr: CameraIntrinsics, radius: float = 2.2,
                 elevation_deg: float = 20.0, start_azimuth_deg: float = 0.0):
    """Evenly spaced look-at cameras on a constant-elevation ring."""
    cams = []
    el = np.radians(elevation_deg)
    for k in range(n_views):
        az = np.radians(start_azimuth_deg) + 2.0 * np.pi * k / n_views
        pos = radius * np.array(
            [np.cos(el) * np.sin(az), -np.sin(el), -np.cos(el) * np.cos(az)]
        )
        cams.append((intr, look_at(pos, np.zeros(3))))
    return cams


def make_oracle_scene(spec: OracleSceneSpec, cameras, rcfg: RenderConfig,
                      out_dir) -> dict:
    """Render the analytic scene from the given cameras into a dataset dir.

    Returns the in-memory dataset (images [V,H,W,3], depths [V,H,W],
    cameras, label).  Deterministic for a fixed (spec, cameras, rcfg).
    """
    os.makedirs(os.path.join(out_dir, "rgb"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)
    fn = scene_field(spec)
    images, depths = [], []
    for i, (intr, pose) in enumerate(cameras):
        img, _, _ = render_image(fn, intr, pose, -1.0, 1.0, rcfg)
        origins, dirs, _, _, _ = camera_rays(intr, pose, -1.0, 1.0)
        d = analytic_depth(spec, origins, dirs).reshape(intr.height, intr.width)
        save_image(os.path.join(out_dir, "rgb", f"{i:04d}.png"), img)
        save_pfm(os.path.join(out_dir, "depth", f"{i:04d}.pfm"), d)
        images.append(img)
        depths.append(d)
    save_cameras(os.path.join(out_dir, "cameras.txt"), cameras)
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        fh.write(f"label={spec.label}\n")
        fh.write(f"spec_hash={spec.spec_hash()}\n")
        fh.write(f"views={len(cameras)}\n")
    return {
        "images": np.stack(images),
        "depths": np.stack(depths),
        "cameras": cameras,
        "label": spec.label,
    }


def load_dataset(path) -> dict:
    """Read a dataset directory written by :func:`make_oracle_scene`."""
    cameras = load_cameras(os.path.join(path, "cameras.txt"))
    meta = {}
    with open(os.path.join(path, "meta.txt")) as fh:
        for line in fh:
            if "=" in line:
                key, val = line.strip().split("=", 1)
                meta[key] = val
    images, depths = [], []
    for i in range(len(cameras)):
        images.append(load_image(os.path.join(path, "rgb", f"{i:04d}.png")))
        depths.append(
            load_pfm(os.path.join(path, "depth", f"{i:04d}.pfm")).astype(np.float64)
        )
    return {
        "images": np.stack(images),
        "depths": np.stack(depths),
        "cameras": cameras,
        "label": meta.get("label", ""),
        "meta": meta,
    }


def distort_depth(depth: np.ndarray, rng: np.random.Generator,
                  scale_range=(0.7, 1.4), shift_range=(-0.3, 0.3),
                  noise_std: float = 0.01) -> np.ndarray:
    """Affine-distorted noisy depth, standing in for a monocular estimate.

    Scale/shift ambiguity is exactly what a correlation-based depth loss
    must tolerate; background (0) pixels stay at 0.
    """
    scale = rng.uniform(*scale_range)
    shift = rng.uniform(*shift_range)
    noisy = scale * depth + shift + rng.normal(0.0, noise_std, depth.shape)
    return np.where(depth > 0, noisy, 0.0)


# Stock scenes used across the test-suite and the demos.

def sphere_scene(color=(0.85, 0.2, 0.15), radius: float = 0.45,
                 label: str = "red-sphere", texture: str = "stripes") -> OracleSceneSpec:
    """Hard opaque textured sphere; the workhorse end-to-end subject."""
    return OracleSceneSpec(
        primitives=(
            Primitive(kind="sphere", center=(0.0, 0.0, 0.0), size=radius,
                      color=color, texture=texture, density=600.0),
        ),
        label=label,
    )


def box_scene(color=(0.2, 0.45, 0.85), label: str = "blue-box") -> OracleSceneSpec:
    return OracleSceneSpec(
        primitives=(
            Primitive(kind="box", center=(0.0, 0.0, 0.0),
                      size=(0.35, 0.35, 0.35), color=color, density=600.0),
        ),
        label=label,
    )


SPRITE_COLORS = {
    "red": (0.85, 0.2, 0.15),
    "green": (0.2, 0.75, 0.25),
    "blue": (0.2, 0.45, 0.85),
}


def sprite_classes() -> tuple:
    """Six shape-color classes used to train and probe the toy prior."""
    specs = []
    for shape in ("sphere", "box"):
        for cname, color in SPRITE_COLORS.items():
            # Striped world-space texture: bands curve over the sphere but
            # run straight across box faces, so the interior pattern (not
            # just the silhouette) separates the two shapes.
            if shape == "sphere":
                prim = Primitive(kind="sphere", center=(0.0, 0.0, 0.0),
                                 size=0.45, color=color, texture="stripes",
                                 density=600.0)
            else:
                prim = Primitive(kind="box", center=(0.0, 0.0, 0.0),
                                 size=(0.45, 0.45, 0.45), color=color,
                                 texture="stripes", density=600.0)
            specs.append(OracleSceneSpec(primitives=(prim,),
                                         label=f"{cname}-{shape}"))
    return tuple(specs)


def sprite_dataset(n_per_class: int = 24, size: int = 32, seed: int = 0,
                   samples_per_ray: int = 64) -> dict:
    """Labeled renders of the sprite classes from randomized viewpoints."""
    rng = np.random.default_rng(seed)
    intr = intrinsics_for_fov(size, size, 45.0)
    rcfg = RenderConfig(samples_per_ray=samples_per_ray)
    specs = sprite_classes()
    images, labels = [], []
    for ci, spec in enumerate(specs):
        fn = scene_field(spec)
        for _ in range(n_per_class):
            az = rng.uniform(0.0, 2.0 * np.pi)
            el = np.radians(rng.uniform(10.0, 35.0))
            radius = rng.uniform(2.0, 2.6)
            pos = radius * np.array(
                [np.cos(el) * np.sin(az), -np.sin(el), -np.cos(el) * np.cos(az)]
            )
            pose = look_at(pos, np.zeros(3))
            img, _, _ = render_image(fn, intr, pose, -1.0, 1.0, rcfg)
            images.append(img)
            labels.append(ci)
    return {
        "images": np.stack(images),
        "labels": np.array(labels, dtype=np.int64),
        "class_names": tuple(s.label for s in specs),
    }


def soft_blob_scene(label: str = "soft-blob") -> OracleSceneSpec:
    """Smooth-density variant for quadrature-convergence measurements."""
    return OracleSceneSpec(
        primitives=(
            Primitive(kind="sphere", center=(0.1, -0.05, 0.0), size=0.4,
                      color=(0.9, 0.6, 0.2), density=6.0, edge=0.5),
        ),
        label=label,
    )
