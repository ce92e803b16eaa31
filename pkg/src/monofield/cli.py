"""Command-line interface: scene generation, synthesis, rendering, inversion, evaluation.

Exit codes follow the usual convention: 0 on success, 1 for usage errors
(bad flags, malformed config), 2 for runtime failures (missing files,
diverged runs, unreachable backends).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .cameras import intrinsics_for_fov, load_cameras
from .config import (
    ConfigError,
    config_hash,
    field_config,
    load_config,
    prior_backend,
    render_config_text,
    synthesis_config,
    toy_train_config,
)
from .evaluation import EvalReport, evaluate_field
from .field import load_field, save_field
from .images import (
    load_depth_png16,
    load_image,
    load_pfm,
    resize_area,
    save_image,
    save_pfm,
)
from .metrics import psnr, ssim
from .prior import (
    AnalyticGaussianPrior,
    GuidanceEmbedding,
    IdentityCodec,
    build_schedule,
    load_embeddings,
    load_toy_denoiser,
    save_embeddings,
    save_toy_denoiser,
    textual_inversion,
    train_toy_denoiser,
)
from .remote import RemoteDenoiser
from .render import RenderConfig, make_field_fn, render_image
from .scenes import (
    box_scene,
    distort_depth,
    load_dataset,
    make_oracle_scene,
    ring_cameras,
    sphere_scene,
    sprite_dataset,
)
from .trainer import canonical_camera, synthesize

BRIDGE_URL_ENV = "NERDI_BRIDGE_URL"


class UsageError(Exception):
    """Bad flags or flag combinations; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse's default exits the process
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="monofield",
                description="Single-image 3D synthesis toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command",
                           parser_class=_Parser)

    ms = sub.add_parser("make-scene",
                        help="render an analytic scene into a dataset dir")
    ms.add_argument("--out", required=True, help="dataset directory")
    ms.add_argument("--scene", choices=("sphere", "box"), default="sphere")
    ms.add_argument("--views", type=int, default=9)
    ms.add_argument("--size", type=int, default=64)
    ms.add_argument("--fov", type=float, default=45.0)
    ms.add_argument("--radius", type=float, default=2.3)
    ms.add_argument("--elevation", type=float, default=20.0)
    ms.add_argument("--samples", type=int, default=256)
    ms.set_defaults(func=cmd_make_scene)

    sy = sub.add_parser("synth",
                        help="optimize a radiance field from one image")
    sy.add_argument("--image", required=True)
    sy.add_argument("--config", required=True)
    sy.add_argument("--out", default="out")
    sy.add_argument("--depth", help="PFM or 16-bit PNG depth estimate")
    sy.add_argument("--depth-noise", action="store_true",
                    help="apply affine distortion + noise to the depth input")
    sy.add_argument("--caption-class", type=int,
                    help="toy-prior class index for the caption section")
    sy.add_argument("--prior", choices=("analytic", "toy", "remote"))
    sy.add_argument("--camera", help="camera file; first record is used")
    sy.add_argument("--embedding",
                    help="embedding container for the inversion section")
    sy.add_argument("--bridge-url")
    sy.add_argument("--toy-cache",
                    help="denoiser container to reuse or create")
    sy.add_argument("--seed", type=int)
    sy.add_argument("--iterations", type=int)
    sy.add_argument("--resume", help="training checkpoint to continue from")
    sy.add_argument("--turntable-views", type=int, default=8)
    sy.add_argument("--override", action="append", default=[],
                    metavar="SECTION.KEY=VALUE")
    sy.set_defaults(func=cmd_synth)

    rd = sub.add_parser("render",
                        help="render views from a field checkpoint")
    rd.add_argument("--checkpoint", required=True)
    rd.add_argument("--out", required=True)
    rd.add_argument("--cameras", help="camera file (one record per line)")
    rd.add_argument("--turntable", type=int, default=8,
                    help="ring size when --cameras is absent")
    rd.add_argument("--size", type=int, default=64)
    rd.add_argument("--fov", type=float, default=45.0)
    rd.add_argument("--radius", type=float, default=2.3)
    rd.add_argument("--elevation", type=float, default=20.0)
    rd.add_argument("--samples", type=int, default=96)
    rd.add_argument("--save-depth", action="store_true")
    rd.add_argument("--workers", type=int, default=1)
    rd.set_defaults(func=cmd_render)

    iv = sub.add_parser("invert",
                        help="recover an embedding that explains images")
    iv.add_argument("--image", required=True, action="append",
                    help="repeatable; all images drive one embedding")
    iv.add_argument("--config", required=True)
    iv.add_argument("--out", required=True, help="embedding container path")
    iv.add_argument("--toy-cache")
    iv.add_argument("--steps", type=int)
    iv.add_argument("--lr", type=float)
    iv.add_argument("--draws", type=int)
    iv.add_argument("--seed", type=int, default=0)
    iv.add_argument("--override", action="append", default=[],
                    metavar="SECTION.KEY=VALUE")
    iv.set_defaults(func=cmd_invert)

    ev = sub.add_parser("eval",
                        help="score a checkpoint or a render dir on a dataset")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--checkpoint")
    ev.add_argument("--renders", help="directory of %%04d.png frames")
    ev.add_argument("--out", help="report file path")
    ev.add_argument("--samples", type=int, default=96)
    ev.add_argument("--input-view", type=int, default=0)
    ev.add_argument("--workers", type=int, default=1)
    ev.set_defaults(func=cmd_eval)
    return p


# ---------------------------------------------------------------------------
# Commands


def cmd_make_scene(args) -> int:
    spec = sphere_scene() if args.scene == "sphere" else box_scene()
    intr = intrinsics_for_fov(args.size, args.size, args.fov)
    cams = ring_cameras(args.views, intr, radius=args.radius,
                        elevation_deg=args.elevation)
    dataset = make_oracle_scene(spec, cams,
                                RenderConfig(samples_per_ray=args.samples),
                                args.out)
    print(f"wrote {len(cams)} views of {dataset['label']!r} to {args.out}")
    return 0


def _load_depth(path) -> np.ndarray:
    if str(path).lower().endswith(".pfm"):
        return load_pfm(path).astype(np.float64)
    if str(path).lower().endswith(".png"):
        return load_depth_png16(path)
    raise UsageError(f"depth must be .pfm or 16-bit .png, got {path!r}")


def _toy_denoiser(cfg: dict, cache_path, sched):
    if cache_path and os.path.exists(cache_path):
        return load_toy_denoiser(cache_path)
    p = cfg["prior"]
    data = sprite_dataset(p["n_per_class"], p["image_size"], p["data_seed"])
    net = train_toy_denoiser(data["images"], data["labels"], sched,
                             toy_train_config(cfg),
                             class_names=data["class_names"])
    if cache_path:
        save_toy_denoiser(cache_path, net)
    return net


def cmd_synth(args) -> int:
    overrides = list(args.override)
    if args.prior:
        overrides.append(f"prior.backend={args.prior}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.iterations is not None:
        overrides.append(f"train.iterations={args.iterations}")
    cfg = load_config(args.config, overrides)
    scfg = synthesis_config(cfg)
    fcfg = field_config(cfg)
    backend = prior_backend(cfg)
    sched = build_schedule(cfg["prior"]["timesteps"])

    image = load_image(args.image)
    if args.camera:
        intr, pose = load_cameras(args.camera)[0]
    else:
        intr, pose = canonical_camera(image.shape[1], image.shape[0])

    size = scfg.novel_view_size
    net = None
    if backend == "analytic":
        codec = IdentityCodec((size, size, 3))
        denoiser = AnalyticGaussianPrior(
            mu=resize_area(image, size, size).ravel(),
            sigma0=cfg["prior"]["sigma0"], sched=sched,
        )
    elif backend == "toy":
        net = _toy_denoiser(cfg, args.toy_cache, sched)
        side = cfg["prior"]["image_size"]
        if size != side:
            raise UsageError(
                f"toy prior works at {side}x{side}; "
                f"set train.novel_view_size={side}"
            )
        codec = IdentityCodec((side, side, 3))
        denoiser = net
    else:
        url = args.bridge_url or os.environ.get(BRIDGE_URL_ENV)
        if not url:
            raise UsageError(
                f"remote prior needs --bridge-url or ${BRIDGE_URL_ENV}"
            )
        codec = IdentityCodec((size, size, 3))
        denoiser = RemoteDenoiser(url)

    depth_est = _load_depth(args.depth) if args.depth else None
    if depth_est is None and scfg.weights.lambda_depth > 0:
        if backend == "remote":
            depth_est = denoiser.estimate_depth(image)
            print("depth estimate fetched from the bridge")
        else:
            scfg = replace(scfg, weights=replace(scfg.weights,
                                                 lambda_depth=0.0))
            print("no depth input: depth loss disabled")
    if args.depth_noise:
        if depth_est is None:
            raise UsageError("--depth-noise needs a depth input")
        depth_est = distort_depth(depth_est, np.random.default_rng(scfg.seed))

    emb_dim = cfg["prior"]["embed_dim"]
    s0 = np.zeros((1, emb_dim))
    s1 = np.zeros((1, emb_dim))
    if args.caption_class is not None:
        if net is None:
            raise UsageError("--caption-class needs the toy prior")
        if not 0 <= args.caption_class < net.vocab.shape[0]:
            raise UsageError(
                f"caption class {args.caption_class} outside "
                f"[0, {net.vocab.shape[0]})"
            )
        s0 = net.vocab[args.caption_class:args.caption_class + 1]
        s1 = s0
    if args.embedding:
        arrays, _ = load_embeddings(args.embedding)
        s1 = np.asarray(arrays.get("s_star", arrays["vocab"][:1]),
                        dtype=np.float64)
    guidance = GuidanceEmbedding(section_caption=s0, section_inversion=s1)

    os.makedirs(args.out, exist_ok=True)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    params, reports = synthesize(
        image, intr, pose, depth_est, guidance, denoiser, codec, sched,
        scfg, fcfg, resume_from=args.resume, checkpoint_dir=ckpt_dir,
    )

    digest = config_hash(cfg)
    save_field(os.path.join(args.out, "field.nrdf"), params, fcfg,
               meta={"config_hash": digest})
    with open(os.path.join(args.out, "train_log.txt"), "w") as fh:
        for i, rep in enumerate(reports):
            fh.write(rep.record(i) + "\n")
    with open(os.path.join(args.out, "config.ini"), "w") as fh:
        fh.write(render_config_text(cfg))

    tt_dir = os.path.join(args.out, "turntable")
    os.makedirs(tt_dir, exist_ok=True)
    h, w = image.shape[:2]
    tt_intr = intrinsics_for_fov(w, h, scfg.fov_deg)
    tt_radius = 0.5 * (scfg.radius_range[0] + scfg.radius_range[1])
    tt_elev = 0.5 * (scfg.elevation_range_deg[0]
                     + scfg.elevation_range_deg[1])
    fn = make_field_fn(params, fcfg)
    rcfg = RenderConfig(samples_per_ray=scfg.samples_per_ray,
                        background=scfg.background)
    for i, (ti, tp) in enumerate(ring_cameras(args.turntable_views, tt_intr,
                                              radius=tt_radius,
                                              elevation_deg=tt_elev)):
        frame, _, _ = render_image(fn, ti, tp, -1.0, 1.0, rcfg)
        save_image(os.path.join(tt_dir, f"{i:04d}.png"), frame)

    if reports:
        tail = " ".join(f"{k}={v:.5f}" for k, v in
                        sorted(reports[-1].values.items()))
        print(f"final losses: {tail}")
    print(f"config_hash={digest}")
    print(f"wrote field, log, config, and {args.turntable_views} turntable "
          f"frames to {args.out}")
    return 0


def cmd_render(args) -> int:
    params, fcfg, _ = load_field(args.checkpoint)
    if args.cameras:
        cams = load_cameras(args.cameras)
    else:
        intr = intrinsics_for_fov(args.size, args.size, args.fov)
        cams = ring_cameras(args.turntable, intr, radius=args.radius,
                            elevation_deg=args.elevation)
    os.makedirs(args.out, exist_ok=True)
    fn = make_field_fn(params, fcfg)
    rcfg = RenderConfig(samples_per_ray=args.samples)
    for i, (intr, pose) in enumerate(cams):
        frame, depth, _ = render_image(fn, intr, pose, -1.0, 1.0, rcfg,
                                       n_workers=args.workers)
        save_image(os.path.join(args.out, f"{i:04d}.png"), frame)
        if args.save_depth:
            save_pfm(os.path.join(args.out, f"{i:04d}.pfm"), depth)
    print(f"wrote {len(cams)} views to {args.out}")
    return 0


def cmd_invert(args) -> int:
    cfg = load_config(args.config, args.override)
    if prior_backend(cfg) != "toy":
        raise UsageError("invert needs prior.backend=toy "
                         "(the other backends have no embedding table)")
    sched = build_schedule(cfg["prior"]["timesteps"])
    net = _toy_denoiser(cfg, args.toy_cache, sched)
    side = cfg["prior"]["image_size"]
    codec = IdentityCodec((side, side, 3))
    images = [resize_area(load_image(p), side, side) for p in args.image]
    steps = args.steps if args.steps is not None else cfg["invert"]["steps"]
    lr = args.lr if args.lr is not None else cfg["invert"]["lr"]
    draws = args.draws if args.draws is not None else cfg["invert"]["draws"]
    s_star, trace = textual_inversion(
        images, net, codec, sched, steps, lr,
        rng=np.random.default_rng(args.seed), draws=draws,
    )
    save_embeddings(args.out, net.vocab, class_names=net.class_names,
                    sections={"s_star": s_star})
    sims = _cosine_to_vocab(s_star[0], net.vocab)
    top = int(np.argmax(sims))
    name = net.class_names[top] if top < len(net.class_names) else str(top)
    print(f"wrote embedding to {args.out}")
    print(f"nearest class: {top} ({name}) cosine={sims[top]:.4f}")
    if steps:
        print(f"residual: start={trace[0]:.5f} end={trace[-1]:.5f}")
    return 0


def _cosine_to_vocab(vec: np.ndarray, vocab: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vocab, axis=1) * max(np.linalg.norm(vec), 1e-12)
    return vocab @ vec / np.maximum(norms, 1e-12)


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.renders):
        raise UsageError("eval needs exactly one of --checkpoint/--renders")
    dataset = load_dataset(args.dataset)
    if args.checkpoint:
        params, fcfg, meta = load_field(args.checkpoint)
        rep = evaluate_field(
            params, fcfg, dataset, RenderConfig(samples_per_ray=args.samples),
            input_view=args.input_view,
            config_hash=str(meta.get("config_hash", "")),
            n_workers=args.workers,
        )
    else:
        refs = dataset["images"]
        view_psnr, view_ssim = [], []
        for i in range(refs.shape[0]):
            frame = load_image(os.path.join(args.renders, f"{i:04d}.png"))
            view_psnr.append(psnr(frame, refs[i]))
            view_ssim.append(ssim(frame, refs[i]))
        rep = EvalReport(
            view_psnr=tuple(view_psnr), view_ssim=tuple(view_ssim),
            mean_psnr=float(np.mean(view_psnr)),
            std_psnr=float(np.std(view_psnr)),
            mean_ssim=float(np.mean(view_ssim)),
            depth_rho=float("nan"),  # no depth in a bare render dir
        )
    for line in rep.lines():
        print(line)
    if args.out:
        rep.save(args.out)
    return 0


# ---------------------------------------------------------------------------
# Entry


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help prints and asks for exit 0
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
