"""Self-contained stand-ins for the models a production bridge fronts.

A full-scale deployment would load a pretrained latent-diffusion
denoiser, text encoder, image autoencoder, monocular depth network, and
captioner behind the same endpoints.  Those weights cannot ship inside
this repository, so each endpoint is backed here by the strongest
model that needs no checkpoint: exact closed-form or classical
constructions.  All of them are deterministic functions of their
inputs, which makes the protocol's statelessness directly testable.
"""

from __future__ import annotations

import zlib

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class GaussianDenoiser:
    """Exact noise predictor for a Gaussian image prior N(mu, sigma0^2 I).

    Under the standard forward process z_t = sqrt(ab_t) x + sqrt(1-ab_t) e
    with a linear beta schedule, the minimum-MSE noise estimate for a
    Gaussian data law is linear in z_t:

        eps_hat = sqrt(1-ab_t) (z_t - sqrt(ab_t) mu) / (ab_t sigma0^2 + 1-ab_t)

    With no mean image configured the prior centers on mid-gray, which
    keeps the endpoint usable for protocol work at any latent size.
    Conditioning payloads are schema-checked by the server but do not
    alter the law; a served production model would consume them.
    """

    def __init__(self, mu=None, sigma0: float = 0.25, timesteps: int = 1000):
        if timesteps < 1:
            raise ValueError("timesteps must be positive")
        betas = np.linspace(1e-4, 0.02, timesteps)
        self.alpha_bar = np.cumprod(1.0 - betas)
        self.timesteps = int(timesteps)
        self.mu = None if mu is None else np.asarray(mu, np.float64).ravel()
        self.sigma0 = float(sigma0)

    def predict(self, z_t, t: int) -> np.ndarray:
        z = np.asarray(z_t, dtype=np.float64)
        if not 0 <= t < self.timesteps:
            raise ValueError(
                f"timestep {t} outside schedule [0, {self.timesteps})"
            )
        if self.mu is None:
            mu = np.full_like(z, 0.5)
        elif self.mu.size == z.size:
            mu = self.mu.reshape(z.shape)
        else:
            raise ValueError(
                f"latent size {z.size} != served mean size {self.mu.size}"
            )
        ab = self.alpha_bar[t]
        denom = ab * self.sigma0 ** 2 + 1.0 - ab
        return np.sqrt(1.0 - ab) * (z - np.sqrt(ab) * mu) / denom


class HashTextEmbedder:
    """Feature-hashing bag-of-words embedder (the classic hashing trick).

    Each token hashes to one bucket and a sign, so strings sharing words
    land near each other in cosine similarity without any vocabulary
    file, and the embedding is identical across processes.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = int(dim)

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in text.lower().split():
            h = zlib.crc32(token.encode("utf-8"))
            sign = 1.0 if (h >> 16) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec[None, :]


class PoolCodec:
    """Box-pool autoencoder: encode averages f x f blocks, decode replicates.

    Reconstruction is exact on images constant within each block; on
    general content the loss is the within-block variance, measured and
    documented rather than promised.  Factor 1 degenerates to the
    identity codec.
    """

    def __init__(self, factor: int = 2):
        if factor < 1:
            raise ValueError("pool factor must be >= 1")
        self.factor = int(factor)

    def encode(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3:
            raise ValueError(f"image must be [H, W, C], got shape {img.shape}")
        h, w, c = img.shape
        f = self.factor
        if h % f or w % f:
            raise ValueError(f"image size {h}x{w} not divisible by {f}")
        return img.reshape(h // f, f, w // f, f, c).mean(axis=(1, 3))

    def decode(self, latent, shape=None) -> np.ndarray:
        lat = np.asarray(latent, dtype=np.float64)
        f = self.factor
        if shape is not None:
            th, tw, tc = (int(s) for s in shape)
            if th % f or tw % f:
                raise ValueError(f"target size {th}x{tw} not divisible by {f}")
            if lat.size != (th // f) * (tw // f) * tc:
                raise ValueError(
                    f"latent size {lat.size} does not fit target {shape}"
                )
            lat = lat.reshape(th // f, tw // f, tc)
        elif lat.ndim != 3:
            raise ValueError("flat latent needs an explicit target shape")
        return np.repeat(np.repeat(lat, f, axis=0), f, axis=1)


class LumaDepth:
    """Monocular depth stand-in: brightness reads as proximity.

    depth = near + span * (1 - luma), then ``blur`` passes of a 3x3 box
    filter for the smoothness a learned estimator would show.  Output is
    [H, W] in scene units; only relative structure is meaningful, which
    is exactly the ambiguity scale/shift-invariant consumers expect.
    """

    def __init__(self, near: float = 1.0, span: float = 2.0, blur: int = 1):
        if span <= 0.0:
            raise ValueError("span must be positive")
        if blur < 0:
            raise ValueError("blur passes must be >= 0")
        self.near = float(near)
        self.span = float(span)
        self.blur = int(blur)

    def estimate(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValueError(f"image must be [H, W, 3], got shape {img.shape}")
        luma = img @ np.asarray(LUMA_WEIGHTS)
        depth = self.near + self.span * (1.0 - np.clip(luma, 0.0, 1.0))
        for _ in range(self.blur):
            padded = np.pad(depth, 1, mode="edge")
            acc = np.zeros_like(depth)
            for dy in (0, 1, 2):
                for dx in (0, 1, 2):
                    acc += padded[dy:dy + depth.shape[0],
                                  dx:dx + depth.shape[1]]
            depth = acc / 9.0
        return depth


class DominantColorCaptioner:
    """Describes an image by its dominant anchor color, template-filled."""

    ANCHORS = (
        ("red", (0.8, 0.15, 0.15)),
        ("green", (0.15, 0.7, 0.2)),
        ("blue", (0.15, 0.3, 0.8)),
        ("yellow", (0.85, 0.8, 0.15)),
        ("magenta", (0.8, 0.2, 0.8)),
        ("cyan", (0.2, 0.8, 0.8)),
        ("white", (0.95, 0.95, 0.95)),
        ("gray", (0.5, 0.5, 0.5)),
        ("black", (0.05, 0.05, 0.05)),
    )

    def __init__(self, template: str = "a {color} scene"):
        self.template = str(template)

    def caption(self, image) -> str:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValueError(f"image must be [H, W, 3], got shape {img.shape}")
        mean = img.reshape(-1, 3).mean(axis=0)
        names = [name for name, _ in self.ANCHORS]
        dists = [np.linalg.norm(mean - np.asarray(rgb))
                 for _, rgb in self.ANCHORS]
        return self.template.format(color=names[int(np.argmin(dists))])
