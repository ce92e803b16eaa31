"""Image and depth-map I/O plus integer-ratio resizing.

Color images travel as float arrays in [0, 1], HxWx3, and serialize to
8-bit PNG; depth maps serialize as grayscale portable float maps (PFM),
which round-trip bit-exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage

from .autodiff import Tensor


def save_image(path, img: np.ndarray) -> None:
    """Write an [H, W, 3] float image in [0, 1] as 8-bit PNG."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3] image, got {img.shape}")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG as [H, W, 3] float64 in [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode == "RGBA":
            im = im.convert("RGB")
        if im.mode != "RGB":
            raise ValueError(
                f"{path}: expected a 3-channel RGB image, got mode {im.mode!r}"
            )
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0


def load_depth_png16(path) -> np.ndarray:
    """Read a 16-bit grayscale PNG depth image, mapped [0, 65535] -> [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode != "I;16" and im.mode != "I":
            raise ValueError(
                f"{path}: expected a 16-bit grayscale image, got mode {im.mode!r}"
            )
        arr = np.asarray(im, dtype=np.float64)
    return arr / 65535.0


def save_pfm(path, depth: np.ndarray) -> None:
    """Write an [H, W] float map as a little-endian grayscale PFM."""
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError(f"expected [H, W] depth map, got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(np.ascontiguousarray(depth[::-1]).tobytes())  # bottom-up rows


def load_pfm(path) -> np.ndarray:
    """Read a grayscale PFM back as [H, W] float32, bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        nl1 = blob.index(b"\n")
        nl2 = blob.index(b"\n", nl1 + 1)
        nl3 = blob.index(b"\n", nl2 + 1)
        kind = blob[:nl1].strip()
        dims = blob[nl1 + 1:nl2].split()
        scale = float(blob[nl2 + 1:nl3])
        w, h = int(dims[0]), int(dims[1])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed PFM header") from exc
    if kind != b"Pf":
        raise ValueError(
            f"{path}: expected grayscale PFM magic 'Pf', got {kind!r}"
        )
    want = 4 * w * h
    body = blob[nl3 + 1: nl3 + 1 + want]
    if len(body) != want:
        raise ValueError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w)
    return arr[::-1].astype(np.float32)  # undo bottom-up row order


def resize_area(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Integer-ratio resize: box average down, pixel replication up."""
    h, w = img.shape[:2]
    if (height, width) == (h, w):
        return img
    if h % height == 0 and w % width == 0:
        fh, fw = h // height, w // width
        shaped = img.reshape(height, fh, width, fw, *img.shape[2:])
        return shaped.mean(axis=(1, 3))
    if height % h == 0 and width % w == 0:
        fh, fw = height // h, width // w
        return np.repeat(np.repeat(img, fh, axis=0), fw, axis=1)
    raise ValueError(
        f"resize {h}x{w} -> {height}x{width} is not an integer ratio"
    )


def resize_area_graph(img: Tensor, height: int, width: int) -> Tensor:
    """Differentiable version of :func:`resize_area` for [H, W, C] Tensors."""
    h, w, c = img.shape
    if (height, width) == (h, w):
        return img
    if h % height == 0 and w % width == 0:
        fh, fw = h // height, w // width
        shaped = img.reshape(height, fh, width, fw, c)
        return shaped.mean(axis=1).mean(axis=2)
    if height % h == 0 and width % w == 0:
        fh, fw = height // h, width // w
        from .autodiff import apply

        up = img.reshape(h, 1, w, 1, c)
        up = apply("broadcast", up, shape=(h, fh, w, fw, c))
        return up.reshape(height, width, c)
    raise ValueError(
        f"resize {h}x{w} -> {height}x{width} is not an integer ratio"
    )
