"""Training losses: input-view reconstruction, guided novel views, depth.

Three independent loss components produce gradients against a frozen
parameter snapshot; ``total_step_loss`` combines them linearly.  The
novel-view component renders the field at a sampled camera, feeds the
image to a diffusion denoiser, and turns the noise residual into a
parameter gradient in either of two modes: exact backpropagation through
the denoiser, or the Jacobian-omitted distilled update pulled back only
through the render.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, apply, backward
from .cameras import CameraIntrinsics, CameraPose, camera_rays
from .images import resize_area_graph
from .prior import (
    PriorBackendError,
    alpha_bar,
    diffusion_residual,
    q_sample,
    sample_timesteps,
)
from .render import BG_VALUES, RenderConfig, make_field_fn, render_rays

VARIANCE_EPS = 1e-8

WEIGHT_MODES = ("one_minus_alpha_bar", "constant")

LOSS_MODES = ("full", "distilled")

# Loss-report component name -> LossWeights attribute carrying its weight.
COMPONENT_LAMBDAS = {
    "recon": "lambda_rec",
    "diff": "lambda_diff",
    "depth": "lambda_depth",
}


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the three loss components."""

    lambda_rec: float = 1.0
    lambda_diff: float = 1.0
    lambda_depth: float = 1.0

    def __post_init__(self):
        vals = (self.lambda_rec, self.lambda_diff, self.lambda_depth)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossReport:
    """Per-step record of loss values and gradient magnitudes."""

    values: dict
    t: int = -1
    view_id: int = -1
    grad_norms: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, v in list(self.values.items()) + list(self.grad_norms.items()):
            if not np.isfinite(v):
                raise ValueError(f"non-finite loss report entry {name!r}")

    def record(self, step: int) -> str:
        """One whitespace-separated log line for the training log."""
        parts = [f"step={step}", f"view={self.view_id}", f"t={self.t}"]
        parts += [f"{k}={v:.6g}" for k, v in sorted(self.values.items())]
        parts += [f"grad_{k}={v:.4g}" for k, v in sorted(self.grad_norms.items())]
        return " ".join(parts)


def grads_for(loss: Tensor, params: dict) -> dict:
    """Gradients of a scalar graph Tensor for each named parameter."""
    for p in params.values():
        p.zero_grad()
    leaf = backward(loss)
    return {
        name: np.asarray(leaf.get(p, np.zeros_like(p.data)))
        for name, p in params.items()
    }


# ---------------------------------------------------------------------------
# Reconstruction


def recon_loss(render, target, mask=None):
    """Mean squared error over (optionally masked) pixels.

    ``render`` may be a graph Tensor or a plain array; the result is a
    scalar Tensor or float accordingly.  ``mask`` may drop the trailing
    channel axis, in which case it selects whole pixels.
    """
    target = np.asarray(target, dtype=np.float64)
    shape = render.shape if isinstance(render, Tensor) else np.asarray(render).shape
    if tuple(shape) != target.shape:
        raise ValueError(f"render shape {tuple(shape)} != target {target.shape}")
    diff = render - target
    sq = diff * diff
    if mask is None:
        out = sq.mean()
        return out if isinstance(out, Tensor) else float(out)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape == target.shape[:-1]:
        mask = mask[..., None]
    if mask.ndim != target.ndim:
        raise ValueError(f"mask shape {mask.shape} does not match {target.shape}")
    w = np.broadcast_to(mask, target.shape).astype(np.float64)
    n_sel = w.sum()
    if n_sel == 0:
        raise ValueError("mask selects no pixels")
    out = (sq * (w / n_sel)).sum()
    return out if isinstance(out, Tensor) else float(out)


# ---------------------------------------------------------------------------
# Depth correlation


def depth_corr_loss(d_hat, d_est, mask=None):
    """1 - Pearson correlation between rendered and estimated depth.

    Affine-invariant in either argument away from degeneracy: the
    rendered-side variance is clamped from below (``eps + relu(v - eps)``)
    rather than shifted, so positive rescaling cancels exactly.  The
    estimated side must carry real variation; a constant estimate has no
    correlation to recover and raises instead.
    """
    d_est = np.asarray(d_est, dtype=np.float64)
    shape = d_hat.shape if isinstance(d_hat, Tensor) else np.asarray(d_hat).shape
    if tuple(shape) != d_est.shape:
        raise ValueError(f"depth shapes differ: {tuple(shape)} vs {d_est.shape}")
    if mask is None:
        sel = np.ones(d_est.shape, dtype=bool)
    else:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != d_est.shape:
            raise ValueError(f"mask shape {sel.shape} != depth {d_est.shape}")
    n_sel = int(sel.sum())
    if n_sel < 2:
        raise ValueError("need at least 2 masked pixels for a correlation")
    wn = sel.astype(np.float64) / n_sel

    me = float((d_est * wn).sum())
    ce = (d_est - me) * sel
    ve = float((ce * ce * wn).sum())
    if ve <= VARIANCE_EPS:
        raise ValueError("degenerate estimated depth: variance is zero")

    if isinstance(d_hat, Tensor):
        mh = (d_hat * wn).sum()
        ch = d_hat - mh
        cov = (ch * (ce * wn)).sum()
        vh = (ch * ch * wn).sum()
        vh = VARIANCE_EPS + apply("relu", vh - VARIANCE_EPS)
        rho = cov / apply("power", vh * ve, exponent=0.5)
        return 1.0 - rho
    d_hat = np.asarray(d_hat, dtype=np.float64)
    mh = float((d_hat * wn).sum())
    ch = (d_hat - mh) * sel
    cov = float((ch * ce * wn).sum())
    vh = float((ch * ch * wn).sum())
    vh = VARIANCE_EPS + max(vh - VARIANCE_EPS, 0.0)
    return float(1.0 - cov / np.sqrt(vh * ve))


# ---------------------------------------------------------------------------
# Novel-view diffusion guidance


def render_view_graph(params: dict, fcfg, intr: CameraIntrinsics,
                      pose: CameraPose, box_min: float, box_max: float,
                      rcfg: RenderConfig) -> Tensor:
    """Differentiable full-frame render as one [H, W, 3] graph Tensor.

    Rays that miss the scene box contribute constant background pixels;
    the composite keeps one gather so gradients reach only the hit rays.
    """
    origins, dirs, tn, tf, hit = camera_rays(intr, pose, box_min, box_max)
    bg = BG_VALUES[rcfg.background]
    n_hit = int(hit.sum())
    if n_hit == 0:
        return Tensor(np.full((intr.height, intr.width, 3), bg))
    field_fn = make_field_fn(params, fcfg)
    out = render_rays(field_fn, origins[hit], dirs[hit], tn[hit], tf[hit], rcfg)
    rows = out["rgb"]
    if n_hit < hit.size:
        bg_row = Tensor(np.full((1, 3), bg, dtype=rows.dtype))
        rows = apply("concat", rows, bg_row, axis=0)
        index = np.full(hit.size, n_hit, dtype=np.int64)
        index[hit] = np.arange(n_hit)
        rows = apply("gather", rows, indices=index)
    return rows.reshape(intr.height, intr.width, 3)


def novel_view_loss(params: dict, fcfg, intr: CameraIntrinsics,
                    pose: CameraPose, box_min: float, box_max: float,
                    rcfg: RenderConfig, denoiser, codec, cond, sched,
                    rng: np.random.Generator, mode: str = "distilled",
                    weight_mode: str = "one_minus_alpha_bar",
                    view_id: int = -1) -> tuple:
    """Parameter gradient pushing a rendered view toward the image prior.

    Renders the view, resizes to the prior's resolution, samples one
    (t, eps) pair, and returns (grads dict, LossReport).  ``full`` mode
    backpropagates the noise residual through the denoiser itself;
    ``distilled`` mode pulls the weighted residual direction w(t) *
    (eps_hat - eps) back only through the render.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"mode must be one of {LOSS_MODES}")
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
    img = render_view_graph(params, fcfg, intr, pose, box_min, box_max, rcfg)
    ph, pw = codec.image_shape[0], codec.image_shape[1]
    img = resize_area_graph(img, ph, pw)
    t = int(sample_timesteps(rng, sched))
    eps = rng.standard_normal(codec.latent_size)
    w = 1.0 - alpha_bar(sched, t) if weight_mode == "one_minus_alpha_bar" else 1.0
    m = float(codec.latent_size)

    if mode == "full":
        loss = diffusion_residual(denoiser, codec, img, cond, t, eps, sched)
        if not isinstance(loss, Tensor):
            raise PriorBackendError(
                "full mode needs an in-process differentiable backend"
            )
        grads = grads_for(loss * (w / m), params)
        value = float(loss.data) / m
    else:
        x_flat = codec.encode(img)
        z_t = q_sample(x_flat.data, t, eps, sched)
        eps_hat = denoiser.predict(z_t, t, cond)
        eps_hat = eps_hat.data if isinstance(eps_hat, Tensor) else np.asarray(eps_hat)
        direction = (w / m) * (eps_hat - eps)
        grads = grads_for((x_flat * direction).sum(), params)
        value = float(np.mean((eps - eps_hat) ** 2))

    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(
                f"non-finite novel-view gradient in {name!r} "
                f"at view {view_id}, t {t}"
            )
    report = LossReport(
        values={"diff": value}, t=t, view_id=view_id,
        grad_norms={k: float(np.linalg.norm(v)) for k, v in grads.items()},
    )
    return grads, report


def distilled_image_update(x, denoiser, codec, cond, t: int, eps, sched,
                           weight_mode: str = "one_minus_alpha_bar") -> np.ndarray:
    """Image-space distilled direction w(t) * (eps_hat - eps) / M.

    The image-shaped quantity the distilled mode pulls back through the
    render; exposed separately so its statistics can be verified against
    closed forms.
    """
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
    x = np.asarray(x, dtype=np.float64)
    z0 = codec.encode(x)
    z_t = q_sample(z0, t, np.asarray(eps), sched)
    eps_hat = denoiser.predict(z_t, t, cond)
    eps_hat = eps_hat.data if isinstance(eps_hat, Tensor) else np.asarray(eps_hat)
    w = 1.0 - alpha_bar(sched, t) if weight_mode == "one_minus_alpha_bar" else 1.0
    update = (w / float(codec.latent_size)) * (eps_hat - np.asarray(eps))
    return codec.decode(update)


# ---------------------------------------------------------------------------
# Combination


def total_step_loss(component_grads: dict, component_values: dict,
                    weights: LossWeights, t: int = -1,
                    view_id: int = -1) -> tuple:
    """Linear combination of per-component gradients by their weights.

    ``component_grads`` maps component name ("recon", "diff", "depth") to
    a per-parameter gradient dict; absent components simply contribute
    nothing.  Returns (combined grads, LossReport) where the report holds
    every component value plus the weighted total.
    """
    combined: dict[str, np.ndarray] = {}
    for comp, grads in component_grads.items():
        if comp not in COMPONENT_LAMBDAS:
            raise ValueError(f"unknown loss component {comp!r}")
        lam = getattr(weights, COMPONENT_LAMBDAS[comp])
        for name, g in grads.items():
            if name in combined:
                combined[name] = combined[name] + lam * g
            else:
                combined[name] = lam * np.asarray(g, dtype=np.float64)
    values = {}
    total = 0.0
    for comp, v in component_values.items():
        if comp not in COMPONENT_LAMBDAS:
            raise ValueError(f"unknown loss component {comp!r}")
        values[comp] = float(v)
        total += getattr(weights, COMPONENT_LAMBDAS[comp]) * float(v)
    values["total"] = total
    report = LossReport(
        values=values, t=t, view_id=view_id,
        grad_norms={k: float(np.linalg.norm(v)) for k, v in combined.items()},
    )
    return combined, report
