"""Single-image field synthesis: the outer optimization loop.

Each iteration draws a ray batch at the fixed input view for the
reconstruction and depth-correlation losses, draws one novel view for
the diffusion-prior loss, combines the three gradients, and applies one
Adam update.  Checkpoints capture parameters, optimizer moments, and the
generator state, so an interrupted run resumes on the exact trajectory
when training in float32 (the on-disk precision).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .cameras import (
    CameraIntrinsics,
    CameraPose,
    camera_rays,
    intrinsics_for_fov,
    look_at,
)
from .containers import load_container, save_container
from .field import (
    FIELD_MAGIC,
    FieldConfig,
    _config_from_dict,
    _config_to_dict,
    init_field,
    param_names,
)
from .objective import (
    LOSS_MODES,
    VARIANCE_EPS,
    WEIGHT_MODES,
    LossWeights,
    depth_corr_loss,
    grads_for,
    novel_view_loss,
    recon_loss,
    total_step_loss,
)
from .optim import AdamState, adam_step
from .prior import PriorBackendError
from .render import BG_VALUES, RenderConfig, make_field_fn, render_rays

CANONICAL_DISTANCE = 2.5
CANONICAL_FOV_DEG = 50.0


@dataclass(frozen=True)
class SynthesisConfig:
    """Everything a synthesis run needs besides the inputs themselves."""

    iterations: int = 5000
    lr: float = 1e-2
    lr_final: float = 1e-3
    rays_per_batch: int = 4096
    samples_per_ray: int = 96
    background: str = "white"
    novel_view_size: int = 64
    radius_range: tuple = (2.0, 2.6)
    elevation_range_deg: tuple = (10.0, 35.0)
    fov_deg: float = 45.0
    weights: LossWeights = field(default_factory=LossWeights)
    grad_mode: str = "distilled"
    weight_mode: str = "one_minus_alpha_bar"
    seed: int = 0
    checkpoint_every: int = 1000
    max_skip: int = 3
    dtype: str = "f64"

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 < self.lr_final <= self.lr:
            raise ValueError("need 0 < lr_final <= lr")
        if self.rays_per_batch < 2:
            raise ValueError("rays_per_batch must be at least 2")
        if self.samples_per_ray < 1 or self.novel_view_size < 1:
            raise ValueError("sample counts and sizes must be positive")
        if self.background not in BG_VALUES:
            raise ValueError(f"background must be one of {tuple(BG_VALUES)}")
        lo, hi = self.radius_range
        if not 0.0 < lo <= hi:
            raise ValueError("radius_range must satisfy 0 < lo <= hi")
        lo, hi = self.elevation_range_deg
        if not -90.0 < lo <= hi < 90.0:
            raise ValueError("elevation_range_deg must lie inside (-90, 90)")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov_deg must lie in (0, 180)")
        if self.grad_mode not in LOSS_MODES:
            raise ValueError(f"grad_mode must be one of {LOSS_MODES}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be at least 1")
        if self.max_skip < 0:
            raise ValueError("max_skip must be non-negative")
        if self.dtype not in ("f32", "f64"):
            raise ValueError("dtype must be 'f32' or 'f64'")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


def lr_at(cfg: SynthesisConfig, step: int) -> float:
    """Cosine decay from cfg.lr to cfg.lr_final across the run."""
    if cfg.iterations <= 1:
        return cfg.lr
    frac = step / (cfg.iterations - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) \
        * (1.0 + np.cos(np.pi * frac))


def sample_view(rng: np.random.Generator, cfg: SynthesisConfig):
    """One camera on the configured sphere segment, looking at the origin."""
    radius = float(rng.uniform(*cfg.radius_range))
    el = np.radians(float(rng.uniform(*cfg.elevation_range_deg)))
    az = float(rng.uniform(0.0, 2.0 * np.pi))
    pos = radius * np.array(
        [np.cos(el) * np.sin(az), -np.sin(el), -np.cos(el) * np.cos(az)]
    )
    intr = intrinsics_for_fov(cfg.novel_view_size, cfg.novel_view_size,
                              cfg.fov_deg)
    return intr, look_at(pos, np.zeros(3))


def canonical_camera(width: int, height: int):
    """Default input-view camera for images that arrive without one."""
    intr = intrinsics_for_fov(width, height, CANONICAL_FOV_DEG)
    pose = CameraPose(rotation=np.eye(3),
                      translation=np.array([0.0, 0.0, -CANONICAL_DISTANCE]))
    return intr, pose


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, params: dict, fcfg: FieldConfig, state: AdamState,
                    step: int, rng: np.random.Generator | None = None,
                    extra_meta: dict | None = None) -> None:
    """Write params + optimizer moments + rng state as one container file.

    The file doubles as a plain field checkpoint: readers that only want
    the field ignore the optimizer arrays.
    """
    arrays = {name: params[name].data for name in param_names(fcfg)}
    for name in param_names(fcfg):
        if name in state.m:
            arrays[f"adam_m.{name}"] = state.m[name]
            arrays[f"adam_v.{name}"] = state.v[name]
    meta = {"kind": "training", "step": int(step),
            "adam_step": int(state.step)}
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    meta.update(extra_meta or {})
    save_container(path, FIELD_MAGIC, arrays, config=_config_to_dict(fcfg),
                   meta=meta)


def load_checkpoint(path):
    """Read a training checkpoint: (params, fcfg, state, step, rng, meta).

    ``rng`` is None when the file carries no generator state; parameters
    come back float32 exactly as stored.
    """
    arrays, config, meta = load_container(path, FIELD_MAGIC)
    fcfg = _config_from_dict(config)
    params = {
        name: Tensor(arrays[name], requires_grad=True)
        for name in param_names(fcfg)
    }
    state = AdamState(step=int(meta.get("adam_step", 0)))
    for name in param_names(fcfg):
        if f"adam_m.{name}" in arrays:
            state.m[name] = arrays[f"adam_m.{name}"]
            state.v[name] = arrays[f"adam_v.{name}"]
    rng = None
    if "rng_state" in meta:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    return params, fcfg, state, int(meta.get("step", 0)), rng, meta


# ---------------------------------------------------------------------------
# The optimization loop


def synthesize(image, intr: CameraIntrinsics, pose: CameraPose, depth_est,
               guidance, denoiser, codec, sched,
               cfg: SynthesisConfig = SynthesisConfig(),
               fcfg: FieldConfig = FieldConfig(), warm_start: dict = None,
               resume_from=None, checkpoint_dir=None, mask=None,
               box_min: float = -1.0, box_max: float = 1.0) -> tuple:
    """Optimize a radiance field against one posed image.

    Args:
        image: [H, W, 3] input view in [0, 1].
        intr, pose: the input camera.
        depth_est: [H, W] estimated depth at the input view; may be None
            when the depth weight is zero.
        guidance: GuidanceEmbedding conditioning the novel-view prior; may
            be None when the diffusion weight is zero.
        denoiser, codec, sched: the prior backend triple, same rule.
        cfg: loop configuration.
        fcfg: field architecture (ignored when resuming).
        warm_start: parameter dict to start from instead of a fresh init.
        resume_from: checkpoint path; restores params, moments, step
            counter, and generator state recorded by save_checkpoint.
        checkpoint_dir: when set, writes ckpt_<step>.nrdf every
            cfg.checkpoint_every steps.
        mask: optional [H, W] foreground mask for the depth loss; default
            is depth_est > 0.

    Returns:
        (params, reports): final parameters and one LossReport per step.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (intr.height, intr.width, 3):
        raise ValueError(
            f"image shape {image.shape} does not match the camera "
            f"({intr.height}, {intr.width}, 3)"
        )
    w = cfg.weights
    if w.lambda_diff > 0 and (denoiser is None or codec is None
                              or sched is None):
        raise ValueError("novel-view loss needs denoiser, codec, and sched")
    d_flat = None
    if w.lambda_depth > 0:
        depth_est = np.asarray(depth_est, dtype=np.float64)
        if depth_est.shape != (intr.height, intr.width):
            raise ValueError(
                f"depth shape {depth_est.shape} does not match the camera"
            )
        d_flat = depth_est.reshape(-1)
    fg = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (intr.height, intr.width):
            raise ValueError("mask shape does not match the camera")
        fg = mask.reshape(-1)
    elif d_flat is not None:
        fg = d_flat > 0

    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    start_step = 0
    if resume_from is not None:
        params, fcfg, state, start_step, saved_rng, _ = \
            load_checkpoint(resume_from)
        if saved_rng is not None:
            rng = saved_rng
    elif warm_start is not None:
        params = {
            name: Tensor(np.array(t.data, dtype=cfg.np_dtype),
                         requires_grad=True)
            for name, t in warm_start.items()
        }
    else:
        params = init_field(fcfg, seed=cfg.seed, dtype=cfg.np_dtype)

    origins, dirs, tn, tfar, hit = camera_rays(intr, pose, box_min, box_max)
    hit_idx = np.flatnonzero(hit)
    if hit_idx.size == 0:
        raise ValueError("input camera sees none of the scene box")
    target = image.reshape(-1, 3)
    rcfg = RenderConfig(samples_per_ray=cfg.samples_per_ray,
                        background=cfg.background)

    reports = []
    skip_run = 0
    for step in range(start_step, cfg.iterations):
        component_grads, component_values = {}, {}
        if w.lambda_rec > 0 or w.lambda_depth > 0:
            batch = rng.choice(hit_idx,
                               size=min(cfg.rays_per_batch, hit_idx.size),
                               replace=False)
            out = render_rays(make_field_fn(params, fcfg), origins[batch],
                              dirs[batch], tn[batch], tfar[batch], rcfg)
            if w.lambda_rec > 0:
                rl = recon_loss(out["rgb"], target[batch])
                component_grads["recon"] = grads_for(rl, params)
                component_values["recon"] = float(rl.data)
            if w.lambda_depth > 0:
                sel = fg[batch] if fg is not None else None
                d_batch = d_flat[batch]
                picked = d_batch[sel] if sel is not None else d_batch
                if picked.size >= 2 and float(np.var(picked)) > VARIANCE_EPS:
                    dl = depth_corr_loss(out["depth"], d_batch, sel)
                    component_grads["depth"] = grads_for(dl, params)
                    component_values["depth"] = float(dl.data)

        t_step = -1
        if w.lambda_diff > 0:
            nv_intr, nv_pose = sample_view(rng, cfg)
            try:
                g, nv_rep = novel_view_loss(
                    params, fcfg, nv_intr, nv_pose, box_min, box_max, rcfg,
                    denoiser, codec, guidance, sched, rng,
                    mode=cfg.grad_mode, weight_mode=cfg.weight_mode,
                    view_id=step,
                )
                component_grads["diff"] = g
                component_values["diff"] = nv_rep.values["diff"]
                t_step = nv_rep.t
                skip_run = 0
            except PriorBackendError as exc:
                skip_run += 1
                if skip_run > cfg.max_skip:
                    raise RuntimeError(
                        f"prior backend failed {skip_run} consecutive "
                        f"steps, last at step {step}: {exc}"
                    ) from exc

        for comp, v in component_values.items():
            if not np.isfinite(v):
                last = reports[-1].record(step - 1) if reports else "none"
                raise RuntimeError(
                    f"synthesis diverged at step {step}: {comp} loss is "
                    f"non-finite; last report: {last}"
                )

        combined, report = total_step_loss(component_grads, component_values,
                                           w, t=t_step, view_id=step)
        adam_step(params, combined, state, lr_at(cfg, step))
        reports.append(report)
        if checkpoint_dir is not None \
                and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(
                os.path.join(checkpoint_dir, f"ckpt_{step + 1:06d}.nrdf"),
                params, fcfg, state, step + 1, rng,
            )
    return params, reports
