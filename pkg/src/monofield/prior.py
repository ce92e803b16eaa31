"""Denoising-diffusion image prior: schedules, denoiser backends, guidance.

The forward process mixes a latent z0 with Gaussian noise through a
cumulative schedule; a denoiser predicts the injected noise from the
mixture.  Three interchangeable backends implement the same ``predict``
contract: a closed-form Gaussian oracle, a small trained network over the
procedural sprite set, and an HTTP client (see ``remote``).  Conditioning
is a two-section embedding: a fixed caption section and a learnable
inversion section recovered from images by gradient descent.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, apply, backward
from .containers import load_container, save_container
from .optim import AdamState, adam_step

EMBEDDINGS_MAGIC = b"NRDE"
DENOISER_MAGIC = b"NRDT"

# Fraction of the schedule excluded at both ends when sampling training
# timesteps: extremes carry almost no signal (t~0) or almost no data (t~T).
T_RANGE_FRACTION = (0.02, 0.98)


class PriorBackendError(RuntimeError):
    """A denoiser backend failed; message carries the backend detail."""


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# Schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep mixing coefficients of the forward noising process."""

    betas: np.ndarray       # [T], each in (0, 1)
    alpha_bars: np.ndarray  # [T], cumulative product of (1 - beta)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        bars = np.asarray(self.alpha_bars, dtype=np.float64)
        if betas.ndim != 1 or betas.shape != bars.shape or betas.size < 1:
            raise ValueError("schedule arrays must be equal-length 1-d")
        if (betas <= 0).any() or (betas >= 1).any():
            raise ValueError("beta values must lie in (0, 1)")
        if (bars <= 0).any() or (bars >= 1).any():
            raise ValueError("alpha_bar values must lie in (0, 1)")
        if (np.diff(bars) >= 0).any():
            raise ValueError("alpha_bar must be strictly decreasing")
        if abs(bars[0] - (1.0 - betas[0])) > 1e-12:
            raise ValueError("alpha_bar[0] must equal 1 - beta[0]")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", bars)

    @property
    def T(self) -> int:
        return self.betas.size


def build_schedule(T: int, beta_start: float = 1e-4,
                   beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with cumulative alpha products."""
    if T < 1:
        raise ValueError("schedule needs at least one timestep")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule(betas=betas, alpha_bars=np.cumprod(1.0 - betas))


def alpha_bar(sched: NoiseSchedule, t):
    """alpha_bar at integer timestep(s); t = -1 is the identity limit 1.0."""
    t_arr = np.asarray(t)
    if not np.issubdtype(t_arr.dtype, np.integer):
        raise TypeError("timestep must be an integer")
    if (t_arr < -1).any() or (t_arr >= sched.T).any():
        raise ValueError(f"timestep out of range [-1, {sched.T - 1}]")
    ab = np.where(t_arr < 0, 1.0, sched.alpha_bars[np.maximum(t_arr, 0)])
    return float(ab) if t_arr.ndim == 0 else ab


def timestep_bounds(sched: NoiseSchedule) -> tuple:
    """Inclusive [lo, hi] used when sampling training timesteps."""
    lo = int(round(T_RANGE_FRACTION[0] * sched.T))
    hi = int(round(T_RANGE_FRACTION[1] * sched.T)) - 1
    return max(lo, 0), min(max(hi, lo), sched.T - 1)


def sample_timesteps(rng: np.random.Generator, sched: NoiseSchedule,
                     size=None):
    lo, hi = timestep_bounds(sched)
    return rng.integers(lo, hi + 1, size=size)


def q_sample(z0, t, eps, sched: NoiseSchedule):
    """Noised latent z_t = sqrt(ab)*z0 + sqrt(1-ab)*eps.

    ``z0`` may be a graph Tensor (the result stays differentiable w.r.t.
    it) or a plain array; ``t`` may be per-row when z0 is a 2-d batch.
    """
    eps = np.asarray(eps)
    if eps.shape != _raw(z0).shape:
        raise ValueError(
            f"eps shape {eps.shape} must match z0 shape {_raw(z0).shape}"
        )
    ab = alpha_bar(sched, t)
    if isinstance(ab, np.ndarray):
        if _raw(z0).ndim != 2 or ab.shape != (_raw(z0).shape[0],):
            raise ValueError("per-row timesteps require a [batch, n] z0")
        ab = ab[:, None]
    root_ab = np.sqrt(ab)
    root_rest = np.sqrt(1.0 - ab)
    if isinstance(z0, Tensor):
        return z0 * root_ab + eps * root_rest
    return root_ab * z0 + root_rest * eps


# ---------------------------------------------------------------------------
# Guidance embeddings


@dataclass(frozen=True)
class GuidanceEmbedding:
    """Two-section conditioning: fixed caption rows, learnable inversion rows."""

    section_caption: np.ndarray   # [K0, D]
    section_inversion: object     # [K*, D] array, or Tensor during inversion

    def __post_init__(self):
        s0 = np.asarray(self.section_caption, dtype=np.float64)
        s1 = self.section_inversion
        s1_shape = s1.shape if isinstance(s1, Tensor) else np.asarray(s1).shape
        if s0.ndim != 2 or len(s1_shape) != 2:
            raise ValueError("embedding sections must be 2-d [rows, dim]")
        if s0.shape[1] != s1_shape[1]:
            raise ValueError(
                f"embedding dimension mismatch: {s0.shape[1]} vs {s1_shape[1]}"
            )
        object.__setattr__(self, "section_caption", s0)
        if not isinstance(s1, Tensor):
            object.__setattr__(
                self, "section_inversion", np.asarray(s1, dtype=np.float64)
            )

    @property
    def dim(self) -> int:
        return self.section_caption.shape[1]

    def joint(self) -> np.ndarray:
        """Concatenated [K0 + K*, D] rows, caption section first."""
        return np.concatenate(
            [self.section_caption, _raw(self.section_inversion)], axis=0
        )


def concat_guidance(s0, s_star) -> GuidanceEmbedding:
    """Assemble the joint conditioning; order [caption, inversion]."""
    return GuidanceEmbedding(section_caption=s0, section_inversion=s_star)


# ---------------------------------------------------------------------------
# Codec


@dataclass(frozen=True)
class IdentityCodec:
    """Pixel-space stand-in for a learned autoencoder: flatten/unflatten."""

    image_shape: tuple  # (H, W, 3)

    @property
    def latent_size(self) -> int:
        return int(np.prod(self.image_shape))

    def encode(self, image):
        if isinstance(image, Tensor):
            return image.reshape(self.latent_size)
        arr = np.asarray(image, dtype=np.float64)
        if arr.shape != tuple(self.image_shape):
            raise ValueError(
                f"image shape {arr.shape} != codec shape {self.image_shape}"
            )
        return arr.reshape(self.latent_size)

    def decode(self, z):
        if isinstance(z, Tensor):
            return z.reshape(*self.image_shape)
        return np.asarray(z).reshape(self.image_shape)


# ---------------------------------------------------------------------------
# Analytic Gaussian backend


def analytic_gaussian_eps(z_t, t: int, mu: np.ndarray, sigma0: float,
                          sched: NoiseSchedule):
    """Posterior-mean noise estimate for data distributed N(mu, sigma0^2 I).

    eps_hat = sqrt(1-ab) * (z_t - sqrt(ab)*mu) / (ab*sigma0^2 + 1 - ab);
    for sigma0 = 0 this inverts q_sample exactly.
    """
    ab = alpha_bar(sched, t)
    denom = ab * float(sigma0) ** 2 + 1.0 - ab
    if denom == 0.0:
        raise ValueError("denoiser undefined at alpha_bar = 1 with sigma0 = 0")
    scale = np.sqrt(1.0 - ab) / denom
    mu = np.asarray(mu)
    if isinstance(z_t, Tensor):
        return (z_t - mu * np.sqrt(ab)) * scale
    return scale * (np.asarray(z_t) - np.sqrt(ab) * mu)


@dataclass(frozen=True)
class AnalyticGaussianPrior:
    """Exact denoiser for a Gaussian image law; the test oracle backend."""

    mu: np.ndarray
    sigma0: float
    sched: NoiseSchedule

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        if not np.isfinite(mu).all() or self.sigma0 < 0:
            raise ValueError("mean must be finite and sigma0 non-negative")
        object.__setattr__(self, "mu", mu)

    def predict(self, z_t, t: int, cond=None):
        return analytic_gaussian_eps(z_t, t, self.mu, self.sigma0, self.sched)


# ---------------------------------------------------------------------------
# Residual


def diffusion_residual(denoiser, codec, x, cond, t: int, eps, sched):
    """Squared norm of (eps - predict(q_sample(encode(x)), t, cond)).

    Differentiable w.r.t. ``x`` and the inversion section of ``cond`` when
    they are graph Tensors; returns a plain float otherwise.
    """
    z0 = codec.encode(x)
    z_t = q_sample(z0, t, np.asarray(eps), sched)
    eps_hat = denoiser.predict(z_t, t, cond)
    if isinstance(eps_hat, Tensor) or isinstance(z_t, Tensor):
        diff = np.asarray(eps) - _as_tensor(eps_hat)
        loss = (diff * diff).sum()
        return loss if loss.requires_grad else float(loss.data)
    diff = np.asarray(eps) - np.asarray(eps_hat)
    return float(np.sum(diff * diff))


# ---------------------------------------------------------------------------
# Toy trained backend


@dataclass(frozen=True)
class ToyTrainConfig:
    embed_dim: int = 16
    hidden: int = 128
    steps: int = 8000
    batch: int = 32
    lr: float = 3e-3
    caption_dropout: float = 0.5
    seed: int = 0


class ToyDenoiser:
    """Two-layer perceptron denoiser with per-class embedding conditioning.

    The conditioning sections enter the first layer through their own
    weight blocks (equivalent to concatenating inputs).  During training
    the caption section is zeroed with probability ``caption_dropout`` so
    the inversion section carries class information on its own, which is
    what makes later embedding inversion identifiable.
    """

    def __init__(self, latent_size: int, n_classes: int, cfg: ToyTrainConfig,
                 rng: np.random.Generator, class_names=(),
                 t_scale: float = 1000.0):
        self.latent_size = int(latent_size)
        self.cfg = cfg
        self.class_names = tuple(class_names)
        self.t_scale = float(t_scale)
        n, h, d = self.latent_size, cfg.hidden, cfg.embed_dim
        scale = np.sqrt(2.0 / (n + 3 + 2 * d))
        def w(shape, s):
            return Tensor(rng.normal(0.0, s, shape), requires_grad=True)
        self.params = {
            "wz": w((n, h), scale),
            "wt": w((3, h), scale),
            "wc0": w((d, h), scale),
            "wc1": w((d, h), scale),
            "b1": Tensor(np.zeros(h), requires_grad=True),
            # Tiny head: the untrained network predicts ~0 noise, putting
            # the untrained residual at the expected-squared-norm baseline.
            "w2": w((h, n), 0.01 / np.sqrt(h)),
            "b2": Tensor(np.zeros(n), requires_grad=True),
            # Zero-init gate on a z_t skip connection: the ideal noise
            # estimate is a timestep-dependent multiple of z_t plus a
            # conditional correction, so the gate supplies the linear part
            # the low-width trunk cannot.
            "wg": Tensor(np.zeros((3, 1)), requires_grad=True),
            # Zero-init direct output heads for the guidance sections: the
            # conditional correction is itself an image-shaped quantity, so
            # giving each section a linear readout straight into the output
            # makes conditioning strongly learnable and keeps embedding
            # inversion close to a linear problem.
            "wo0": Tensor(np.zeros((d, n)), requires_grad=True),
            "wo1": Tensor(np.zeros((d, n)), requires_grad=True),
            # Timestep gate on the head contribution, initialized to the
            # identity (1 + 0*t).  The ideal conditional correction shrinks
            # as noise grows, and absorbing that scaling here keeps the
            # optimal embedding itself timestep-invariant.
            "wog": Tensor(np.zeros((3, 1)), requires_grad=True),
            "vocab": Tensor(rng.normal(0.0, 0.3, (n_classes, d)),
                            requires_grad=True),
        }
        self._cast_cache = {}

    @property
    def vocab(self) -> np.ndarray:
        return self.params["vocab"].data

    @property
    def embed_dim(self) -> int:
        return self.cfg.embed_dim

    def cond_for_class(self, label: int) -> GuidanceEmbedding:
        row = self.vocab[label:label + 1]
        return GuidanceEmbedding(section_caption=row, section_inversion=row)

    def _t_features(self, t, dtype) -> np.ndarray:
        # Schedule-relative position plus one sinusoid pair; enough for a
        # monotone noise-level readout at toy scale.
        frac = np.atleast_1d(np.asarray(t, dtype=np.float64)) / self.t_scale
        feats = np.stack(
            [frac, np.sin(2.0 * np.pi * frac), np.cos(2.0 * np.pi * frac)],
            axis=1,
        )
        return feats.astype(dtype)

    def _weights(self, dtype):
        """Parameter views in the requested dtype.

        Training always runs in the native float64 parameters; a float32
        caller (a field-training graph) gets frozen casted copies, which
        is correct because the denoiser is read-only at that point.
        """
        if dtype == np.float64:
            return self.params
        key = np.dtype(dtype).name
        if key not in self._cast_cache:
            self._cast_cache[key] = {
                k: Tensor(v.data.astype(dtype)) for k, v in self.params.items()
            }
        return self._cast_cache[key]

    def _forward(self, z2, tf, s0, s1, weights):
        h = z2 @ weights["wz"] + tf @ weights["wt"] \
            + s0 @ weights["wc0"] + s1 @ weights["wc1"] + weights["b1"]
        h = apply("relu", h)
        gate = tf @ weights["wg"]
        head = s0 @ weights["wo0"] + s1 @ weights["wo1"]
        head_gate = 1.0 + tf @ weights["wog"]
        return h @ weights["w2"] + weights["b2"] + gate * z2 \
            + head_gate * head

    def predict(self, z_t, t: int, cond: GuidanceEmbedding):
        raw = _raw(z_t)
        if raw.shape != (self.latent_size,):
            raise ValueError(
                f"latent shape {raw.shape} != ({self.latent_size},)"
            )
        s0 = cond.section_caption
        s1 = cond.section_inversion
        if s0.shape[0] != 1 or _raw(s1).shape[0] != 1:
            raise ValueError("toy denoiser takes one row per guidance section")
        dtype = raw.dtype if raw.dtype == np.float32 else np.float64
        weights = self._weights(dtype)
        z2 = (z_t if isinstance(z_t, Tensor) else Tensor(raw.astype(dtype)))
        z2 = z2.reshape(1, self.latent_size)
        tf = self._t_features(t, dtype)
        s1_in = s1 if isinstance(s1, Tensor) else Tensor(_raw(s1).astype(dtype))
        out = self._forward(z2, tf, Tensor(s0.astype(dtype)), s1_in, weights)
        out = out.reshape(self.latent_size)
        if isinstance(z_t, Tensor) or isinstance(s1, Tensor):
            return out
        return out.data


def train_toy_denoiser(images, labels, sched: NoiseSchedule,
                       cfg: ToyTrainConfig = ToyTrainConfig(),
                       class_names=()) -> ToyDenoiser:
    """Fit the toy denoiser + class vocabulary on a labeled sprite set.

    Raises RuntimeError with the step index if the loss goes non-finite.
    With cfg.steps = 0 the returned network is the untouched
    initialization.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("need a non-empty [N, H, W, 3] image stack")
    if labels.shape != (images.shape[0],):
        raise ValueError("labels must be one integer per image")
    z0_all = images.reshape(images.shape[0], -1)
    n_classes = int(labels.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    net = ToyDenoiser(z0_all.shape[1], n_classes, cfg, rng,
                      class_names=class_names, t_scale=float(sched.T))
    state = AdamState()
    lo, hi = timestep_bounds(sched)
    for step in range(cfg.steps):
        idx = rng.integers(0, z0_all.shape[0], cfg.batch)
        t = rng.integers(lo, hi + 1, cfg.batch)
        eps = rng.standard_normal((cfg.batch, z0_all.shape[1]))
        z_t = q_sample(z0_all[idx], t, eps, sched)
        keep = (rng.random((cfg.batch, 1)) >= cfg.caption_dropout).astype(float)
        rows = apply("gather", net.params["vocab"],
                     indices=labels[idx].astype(np.int64))
        s0 = rows * keep
        tf = net._t_features(t, np.float64)
        out = net._forward(Tensor(z_t), tf, s0, rows, net.params)
        diff = eps - out
        loss = (diff * diff).mean()
        if not np.isfinite(loss.data):
            raise RuntimeError(f"toy denoiser training diverged at step {step}")
        for p in net.params.values():
            p.zero_grad()
        leaf = backward(loss)
        grads = {k: leaf[p] for k, p in net.params.items() if p in leaf}
        adam_step(net.params, grads, state, cfg.lr)
        # Keep the vocabulary centered across classes: any correction
        # shared by every class belongs in the biases, and inversion can
        # only discriminate classes by cosine if the rows stay spread.
        vocab_data = net.params["vocab"].data
        vocab_data -= vocab_data.mean(axis=0, keepdims=True)
    net._cast_cache.clear()
    return net


def average_residual(denoiser, images, labels, sched: NoiseSchedule,
                     rng: np.random.Generator, draws: int = 200,
                     t_range=None) -> float:
    """Mean per-element squared noise residual over random (image, t, eps).

    ``t_range`` restricts the sampled timesteps; low timesteps are where
    the clean image (and so the conditioning) dominates the estimate,
    which makes a low-t range the sensitive probe for conditioning
    ablations.
    """
    images = np.asarray(images, dtype=np.float64)
    flat = images.reshape(images.shape[0], -1)
    lo, hi = t_range if t_range is not None else timestep_bounds(sched)
    total = 0.0
    for _ in range(draws):
        i = int(rng.integers(0, flat.shape[0]))
        t = int(rng.integers(lo, hi + 1))
        eps = rng.standard_normal(flat.shape[1])
        z_t = q_sample(flat[i], t, eps, sched)
        eps_hat = denoiser.predict(z_t, t, denoiser.cond_for_class(int(labels[i])))
        total += float(np.mean((eps - np.asarray(eps_hat)) ** 2))
    return total / draws


# ---------------------------------------------------------------------------
# Textual inversion


# Inversion samples timesteps from the mid-noise band only.  The
# conditional correction carries most of its signal there: at low t the
# visible image pins the estimate on its own, at high t everything is
# noise, and measured conditional residual gaps peak between the two.
INVERSION_T_FRACTION = (0.15, 0.6)


def textual_inversion(images, denoiser, codec, sched: NoiseSchedule,
                      steps: int, lr: float, s0=None, init=None,
                      rng=None, draws: int = 8) -> tuple:
    """Recover the inversion-section embedding that explains the images.

    Stochastic gradient descent on the noise residual, denoiser and codec
    frozen.  Each step averages the residual over ``draws`` fresh noise
    samples at one stratified timestep; the step size decays so the
    iterate settles, and the returned embedding is the average over the
    last quarter of the steps, which suppresses the sampling jitter left
    in any single iterate.  Returns (s_star [K*, D], loss trace [steps]).
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if rng is None:
        rng = np.random.default_rng(0)
    if isinstance(images, (list, tuple)):
        images = [np.asarray(img, dtype=np.float64) for img in images]
    else:
        arr = np.asarray(images, dtype=np.float64)
        if arr.shape == tuple(codec.image_shape):
            images = [arr]
        else:
            images = list(arr)  # leading batch dimension
    if init is None:
        if not hasattr(denoiser, "vocab"):
            raise ValueError("init embedding required for this backend")
        init = denoiser.vocab.mean(axis=0, keepdims=True)
    init = np.asarray(init, dtype=np.float64)
    if s0 is None:
        s0 = np.zeros_like(init)
    trace = np.zeros(steps)
    if steps == 0:
        return init.copy(), trace
    s_star = Tensor(init.copy(), requires_grad=True)
    state = AdamState()
    # Timesteps cycle a stratified 100-point grid instead of being drawn
    # independently: every 100-step window then sees the same t multiset,
    # so windowed trace averages compare optimization progress rather
    # than the luck of the timestep draw.
    lo = int(round(INVERSION_T_FRACTION[0] * sched.T))
    hi = min(int(round(INVERSION_T_FRACTION[1] * sched.T)), sched.T - 1)
    t_grid = np.linspace(lo, hi, 100).round().astype(int)
    tail = max(1, steps // 4)
    tail_sum = np.zeros_like(init)
    for step in range(steps):
        img = images[step % len(images)]
        t = int(t_grid[step % t_grid.size])
        s_star.zero_grad()
        cond = GuidanceEmbedding(section_caption=s0, section_inversion=s_star)
        losses = [
            diffusion_residual(denoiser, codec, img, cond, t,
                               rng.standard_normal(codec.latent_size), sched)
            for _ in range(draws)
        ]
        if isinstance(losses[0], Tensor):
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            loss = loss * (1.0 / draws)
            leaf = backward(loss)
            g = leaf.get(s_star, np.zeros_like(s_star.data))
            # Cosine decay to a tenth of the base step size: large early
            # moves reach the basin, small late ones let the tail settle.
            frac = step / max(1, steps - 1)
            decayed = lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * frac)))
            adam_step({"s": s_star}, {"s": g}, state, decayed)
            trace[step] = float(loss.data)
        else:
            # Backend ignores conditioning entirely; nothing to optimize.
            trace[step] = float(np.mean([float(v) for v in losses]))
        if steps - step <= tail:
            tail_sum += s_star.data
    return tail_sum / tail, trace


# ---------------------------------------------------------------------------
# Embedding tables on disk


def save_embeddings(path, vocab, class_names=(), sections=None) -> None:
    """Vocabulary (and optional named sections) in the NRDE container."""
    arrays = {"vocab": np.asarray(vocab)}
    if sections:
        for name, arr in sections.items():
            arrays[name] = np.asarray(arr)
    save_container(path, EMBEDDINGS_MAGIC, arrays,
                   meta={"class_names": list(class_names)})


def load_embeddings(path) -> tuple:
    """Returns (arrays dict, class-name tuple) from an NRDE file."""
    arrays, _, meta = load_container(path, EMBEDDINGS_MAGIC)
    return arrays, tuple(meta.get("class_names", []))


def save_toy_denoiser(path, denoiser: ToyDenoiser) -> None:
    """Trained toy weights in a container (float32 payload).

    The cache is for skipping retraining, not for bit-exact resume: the
    container stores float32, so reloaded predictions agree with the
    original to single precision only.
    """
    arrays = {name: t.data for name, t in denoiser.params.items()}
    config = {
        "train": asdict(denoiser.cfg),
        "latent_size": denoiser.latent_size,
        "t_scale": denoiser.t_scale,
        "n_classes": int(denoiser.vocab.shape[0]),
    }
    save_container(path, DENOISER_MAGIC, arrays, config=config,
                   meta={"kind": "toy-denoiser",
                         "class_names": list(denoiser.class_names)})


def load_toy_denoiser(path) -> ToyDenoiser:
    arrays, config, meta = load_container(path, DENOISER_MAGIC)
    cfg = ToyTrainConfig(**config["train"])
    den = ToyDenoiser(
        int(config["latent_size"]), int(config["n_classes"]), cfg,
        np.random.default_rng(0),
        class_names=tuple(meta.get("class_names", [])),
        t_scale=float(config["t_scale"]),
    )
    missing = set(den.params) - set(arrays)
    if missing:
        raise ValueError(f"denoiser file lacks arrays {sorted(missing)}")
    for name in den.params:
        den.params[name] = Tensor(arrays[name].astype(np.float64),
                                  requires_grad=True)
    den._cast_cache.clear()
    return den


# ---------------------------------------------------------------------------
# Backend conformance


def run_denoiser_conformance(denoiser, sched: NoiseSchedule, latent_size: int,
                             cond: GuidanceEmbedding,
                             rng: np.random.Generator) -> dict:
    """Contract checks every backend must pass; returns {check: bool}.

    Checks shape preservation, finiteness across the timestep range, and
    bit-level determinism of repeated identical calls.
    """
    checks = {}
    z = rng.standard_normal(latent_size)
    for tag, t in (("t_low", 0), ("t_mid", sched.T // 2), ("t_high", sched.T - 1)):
        out = _raw(denoiser.predict(z, t, cond))
        checks[f"shape_{tag}"] = out.shape == z.shape
        checks[f"finite_{tag}"] = bool(np.isfinite(out).all())
    t_mid = sched.T // 2
    a = _raw(denoiser.predict(z, t_mid, cond))
    b = _raw(denoiser.predict(z, t_mid, cond))
    checks["deterministic"] = a.tobytes() == b.tobytes()
    return checks
