"""Model server speaking the bridge protocol, with self-contained backends."""

from .conformance import all_pass, conformance_suite, format_report
from .models import (
    DominantColorCaptioner,
    GaussianDenoiser,
    HashTextEmbedder,
    LumaDepth,
    PoolCodec,
)
from .protocol import (
    PROTO_HEADER,
    PROTO_VERSION,
    decode_tensor,
    encode_tensor,
    error_body,
)
from .server import BridgeConfig, BridgeServer, load_bridge_config, serve

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "BridgeServer",
    "DominantColorCaptioner",
    "GaussianDenoiser",
    "HashTextEmbedder",
    "LumaDepth",
    "PROTO_HEADER",
    "PROTO_VERSION",
    "PoolCodec",
    "all_pass",
    "conformance_suite",
    "decode_tensor",
    "encode_tensor",
    "error_body",
    "format_report",
    "load_bridge_config",
    "serve",
]
