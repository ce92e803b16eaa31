"""Single-image neural field synthesis with diffusion guidance, in numpy."""

from monofield.autodiff import Tensor, no_grad
from monofield.cameras import (
    CameraIntrinsics,
    CameraPose,
    camera_rays,
    intrinsics_for_fov,
    load_cameras,
    look_at,
    save_cameras,
)
from monofield.config import ConfigError, config_hash, default_config, load_config
from monofield.evaluation import EvalReport, evaluate_field
from monofield.field import FieldConfig, field_eval, init_field, load_field, save_field
from monofield.metrics import psnr, ssim
from monofield.objective import LossWeights
from monofield.prior import (
    AnalyticGaussianPrior,
    GuidanceEmbedding,
    IdentityCodec,
    NoiseSchedule,
    PriorBackendError,
    ToyDenoiser,
    ToyTrainConfig,
    build_schedule,
    concat_guidance,
    load_embeddings,
    load_toy_denoiser,
    q_sample,
    run_denoiser_conformance,
    save_embeddings,
    save_toy_denoiser,
    textual_inversion,
    train_toy_denoiser,
)
from monofield.remote import RemoteDenoiser
from monofield.render import RenderConfig, make_field_fn, render_image, render_rays
from monofield.scenes import (
    box_scene,
    load_dataset,
    make_oracle_scene,
    ring_cameras,
    sphere_scene,
    sprite_dataset,
)
from monofield.trainer import SynthesisConfig, load_checkpoint, save_checkpoint, synthesize

__version__ = "0.1.0"
