"""Lambertian radiance field: multi-resolution hash grid + small MLP.

A world point is encoded per level by trilinear interpolation of the 8
corner features of its grid cell; levels are concatenated coarse to fine
and fed to a perceptron producing 3 color logits and 1 density logit.
Color passes through sigmoid, density through softplus, so outputs are
always in range for any finite parameters.  There is no view-direction
input anywhere, which is what enforces multiview-consistent shading.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, apply
from .containers import load_container, save_container

# Fixed spatial-hash primes; the x coordinate is kept unmixed on purpose
# so dense and hashed layouts agree on axis ordering.
HASH_PRIMES = (1, 2654435761, 805459861)

_CORNERS = np.array(
    [[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)],
    dtype=np.int64,
)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 8
    base_resolution: int = 16
    per_level_scale: float = 1.5
    table_size_log2: int = 15
    features_per_level: int = 2
    box_min: float = -1.0
    box_max: float = 1.0
    primes: tuple = HASH_PRIMES

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be >= 1")
        if not self.per_level_scale > 1.0:
            raise ValueError("per_level_scale must be > 1")
        if not 1 <= self.table_size_log2 <= 30:
            raise ValueError("table_size_log2 out of range")
        if self.features_per_level < 1:
            raise ValueError("features_per_level must be >= 1")
        if not self.box_min < self.box_max:
            raise ValueError("empty bounding box")
        if len(self.primes) != 3:
            raise ValueError("exactly three hash primes required")
        if not np.isfinite(self.finest_resolution()):
            raise ValueError("finest resolution overflows")

    def resolutions(self) -> np.ndarray:
        """Per-level cell counts along each axis, coarse to fine."""
        lvl = np.arange(self.levels)
        return np.floor(
            self.base_resolution * self.per_level_scale ** lvl
        ).astype(np.int64)

    def finest_resolution(self) -> float:
        return self.base_resolution * self.per_level_scale ** (self.levels - 1)

    @property
    def table_rows(self) -> int:
        return 1 << self.table_size_log2

    def is_dense(self, level: int) -> bool:
        """Dense direct indexing when every vertex fits without hashing."""
        res = int(self.resolutions()[level])
        return (res + 1) ** 3 <= self.table_rows

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features_per_level


def hash_index(cfg: HashGridConfig, level: int, cells) -> np.ndarray:
    """Map integer vertex coordinates [..., 3] to table row indices.

    Dense levels use row-major x + y*(R+1) + z*(R+1)^2 over the (R+1)^3
    vertices; finer levels XOR coordinate-prime products and mask to the
    table size.  Deterministic by construction.
    """
    if not 0 <= level < cfg.levels:
        raise ValueError(f"level {level} out of range [0, {cfg.levels})")
    cells = np.asarray(cells, dtype=np.int64)
    if cells.shape[-1] != 3:
        raise ValueError("cells must have a trailing axis of 3")
    if cfg.is_dense(level):
        side = int(cfg.resolutions()[level]) + 1
        return cells[..., 0] + cells[..., 1] * side + cells[..., 2] * side * side
    c = cells.astype(np.uint64)
    p = [np.uint64(v) for v in cfg.primes]
    mixed = (c[..., 0] * p[0]) ^ (c[..., 1] * p[1]) ^ (c[..., 2] * p[2])
    return (mixed & np.uint64(cfg.table_rows - 1)).astype(np.int64)


def _cells_and_fracs(pos: np.ndarray, cfg: HashGridConfig):
    """Per-level base cells, fractional offsets, and flat table indices."""
    lo, hi = cfg.box_min, cfg.box_max
    u = (np.clip(pos, lo, hi) - lo) / (hi - lo)
    res = cfg.resolutions().astype(np.float64)
    scaled = u[:, None, :] * res[None, :, None]          # [M, L, 3]
    base = np.minimum(np.floor(scaled), res[None, :, None] - 1).astype(np.int64)
    frac = scaled - base                                  # in [0, 1]
    corners = base[:, :, None, :] + _CORNERS[None, None, :, :]  # [M, L, 8, 3]
    idx = np.empty(corners.shape[:-1], dtype=np.int64)
    for lvl in range(cfg.levels):
        idx[:, lvl] = hash_index(cfg, lvl, corners[:, lvl]) + lvl * cfg.table_rows
    return base, frac, idx


def encode(positions, tables: Tensor, cfg: HashGridConfig) -> Tensor:
    """Concatenated per-level trilinear features for world points.

    Args:
        positions: [M, 3] (or a single [3]) world points; out-of-box
            points clamp to the box surface.  Pass a Tensor to get
            gradients with respect to the points themselves.
        tables: [levels * table_rows, features_per_level] stacked grids.
        cfg: grid geometry.

    Returns:
        [M, levels * features_per_level] features, differentiable with
        respect to ``tables`` (and ``positions`` when it is a Tensor).
    """
    as_tensor = isinstance(positions, Tensor)
    pos_np = positions.data if as_tensor else np.asarray(positions, dtype=np.float64)
    single = pos_np.ndim == 1
    if single:
        pos_np = pos_np[None, :]
    if pos_np.ndim != 2 or pos_np.shape[1] != 3:
        raise ValueError(f"positions must be [M, 3], got {pos_np.shape}")
    if not np.isfinite(pos_np).all():
        raise ValueError("positions contain non-finite values")
    m = pos_np.shape[0]
    L, F = cfg.levels, cfg.features_per_level

    base, frac_np, idx = _cells_and_fracs(pos_np, cfg)

    if as_tensor and positions.requires_grad:
        frac = _frac_graph(positions, base, cfg)
        csel = _CORNERS[None, None, :, :].astype(pos_np.dtype)
        f = frac.reshape(m, L, 1, 3)
        with_c = apply("mul", f, csel)
        against = apply("mul", f, 1.0 - csel)
        w_axes = with_c + (1.0 - csel) - against          # sel ? f : 1 - f
        w = (
            w_axes[:, :, :, 0]
            * w_axes[:, :, :, 1]
            * w_axes[:, :, :, 2]
        ).reshape(m, L, 8, 1)
    else:
        sel = _CORNERS[None, None, :, :]
        fr = frac_np[:, :, None, :]
        w_np = np.prod(np.where(sel == 1, fr, 1.0 - fr), axis=-1)
        w = w_np.reshape(m, L, 8, 1)

    feats = apply("gather", tables, indices=idx.reshape(-1))
    feats = feats.reshape(m, L, 8, F)
    out = apply("mul", feats, w).sum(axis=2).reshape(m, L * F)
    if single:
        out = out.reshape(L * F)
    return out


def _frac_graph(positions: Tensor, base: np.ndarray, cfg: HashGridConfig) -> Tensor:
    """Fractional cell offsets as graph ops, for point gradients.

    The integer cell index is treated as a constant (its derivative is
    zero almost everywhere), so gradients flow through the fractional
    part only, exactly as in the plain trilinear formula.
    """
    lo, hi = cfg.box_min, cfg.box_max
    clamped = (
        lo
        + apply("relu", positions - lo)
        - apply("relu", positions - hi)
    )
    u = clamped * (1.0 / (hi - lo))
    res = cfg.resolutions().astype(positions.dtype)
    m = positions.shape[0]
    scaled = u.reshape(m, 1, 3) * res[None, :, None]
    return scaled - base.astype(positions.dtype)


@dataclass(frozen=True)
class FieldConfig:
    grid: HashGridConfig = HashGridConfig()
    hidden_width: int = 64
    hidden_layers: int = 2
    density_bias: float = -1.0

    def __post_init__(self):
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_width and hidden_layers must be >= 1")


def init_field(cfg: FieldConfig, seed: int = 0, dtype=np.float64) -> dict:
    """Fresh trainable parameters: grid tables, MLP weights, density bias.

    Tables start near zero (uniform 1e-4), hidden layers He-scaled, the
    output layer small so the initial field is a flat gray haze; the
    density bias starts at ``cfg.density_bias`` so that haze is thin.
    """
    rng = np.random.default_rng(seed)
    g = cfg.grid
    dims = [g.feature_dim] + [cfg.hidden_width] * cfg.hidden_layers + [4]
    params: dict[str, Tensor] = {}
    tables = rng.uniform(-1e-4, 1e-4, size=(g.levels * g.table_rows,
                                            g.features_per_level))
    params["tables"] = Tensor(tables.astype(dtype), requires_grad=True)
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        scale = np.sqrt(2.0 / fan_in) if i < len(dims) - 2 else 0.1 / np.sqrt(fan_in)
        w = rng.normal(0.0, scale, size=(fan_in, fan_out))
        params[f"w{i}"] = Tensor(w.astype(dtype), requires_grad=True)
        params[f"b{i}"] = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)
    params["density_bias"] = Tensor(
        np.asarray(cfg.density_bias, dtype=dtype), requires_grad=True
    )
    return params


def param_names(cfg: FieldConfig) -> list:
    """Declared parameter order, which is also the checkpoint order."""
    names = ["tables"]
    for i in range(cfg.hidden_layers + 1):
        names += [f"w{i}", f"b{i}"]
    names.append("density_bias")
    return names


def field_eval(params: dict, cfg: FieldConfig, positions):
    """Field output (sigma, rgb) at world points.

    Args:
        params: dict from :func:`init_field` (or a loaded checkpoint).
        cfg: field configuration matching the params.
        positions: [M, 3] points (or a single [3]).

    Returns:
        (sigma, rgb): Tensors of shape [M] and [M, 3]; sigma >= 0 via
        softplus, rgb in [0, 1] via sigmoid.  Differentiable w.r.t. all
        params and, for Tensor positions, the points.
    """
    for name, p in params.items():
        if not np.isfinite(p.data).all():
            raise ValueError(f"non-finite field parameter {name!r}")
    h = encode(positions, params["tables"], cfg.grid)
    single = h.ndim == 1
    if single:
        h = h.reshape(1, -1)
    for i in range(cfg.hidden_layers):
        h = apply("relu", h @ params[f"w{i}"] + params[f"b{i}"])
    last = cfg.hidden_layers
    out = h @ params[f"w{last}"] + params[f"b{last}"]
    rgb = apply("sigmoid", out[:, 0:3])
    sigma = apply("softplus", out[:, 3] + params["density_bias"])
    if single:
        return sigma.reshape(()), rgb.reshape(3)
    return sigma, rgb


# ---------------------------------------------------------------------------
# Checkpoint container (magic "NRDF")

FIELD_MAGIC = b"NRDF"


def _config_to_dict(cfg: FieldConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["grid"]["primes"] = list(d["grid"]["primes"])
    return d


def _config_from_dict(d: dict) -> FieldConfig:
    grid = dict(d["grid"])
    grid["primes"] = tuple(grid["primes"])
    return FieldConfig(
        grid=HashGridConfig(**grid),
        hidden_width=d["hidden_width"],
        hidden_layers=d["hidden_layers"],
        density_bias=d["density_bias"],
    )


def save_field(path, params: dict, cfg: FieldConfig, meta: dict | None = None) -> None:
    """Write a field checkpoint: params in declared order, float32."""
    arrays = {name: params[name].data for name in param_names(cfg)}
    full_meta = {"kind": "field"}
    full_meta.update(meta or {})
    save_container(path, FIELD_MAGIC, arrays, config=_config_to_dict(cfg),
                   meta=full_meta)


def load_field(path):
    """Read a field checkpoint back as (params, config, meta).

    Parameters come back as float32 Tensors, bit-identical to what was
    saved from a float32 training run.
    """
    arrays, config, meta = load_container(path, FIELD_MAGIC)
    cfg = _config_from_dict(config)
    params = {
        name: Tensor(arrays[name], requires_grad=True)
        for name in param_names(cfg)
    }
    return params, cfg, meta
