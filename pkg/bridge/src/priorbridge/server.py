"""HTTP server exposing the model suite over the bridge protocol.

Endpoints: GET /health plus POST /denoise, /text_embed, /encode,
/decode, /depth, /caption.  Error mapping is part of the contract:
400 with code "malformed" for unreadable requests, 422 with code
"shape" for well-formed payloads whose sizes cannot work, 503 with
code "busy" while the server is warming up, 500 with code "internal"
(or "unsupported") otherwise.  Every response echoes the request id
and stamps the protocol version header.
"""

from __future__ import annotations

import configparser
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .models import (
    DominantColorCaptioner,
    GaussianDenoiser,
    HashTextEmbedder,
    LumaDepth,
    PoolCodec,
)
from .protocol import (
    ERROR_BUSY,
    ERROR_INTERNAL,
    ERROR_MALFORMED,
    ERROR_SHAPE,
    ERROR_UNSUPPORTED,
    PROTO_HEADER,
    PROTO_VERSION,
    decode_tensor,
    encode_tensor,
    error_body,
)


@dataclass(frozen=True)
class BridgeConfig:
    """What the server loads and serves.

    Args:
        mean_image: path to a .npy array in [0, 1] used as the denoiser
            prior mean, or None to center the prior on mid-gray at any
            requested latent size.
        sigma0: prior standard deviation around the mean image.
        timesteps: diffusion schedule length served by /denoise.
        embed_dim: /text_embed output dimension.
        pool_factor: autoencoder block size; 1 serves an identity codec.
        depth_near: nearest depth value emitted by /depth.
        depth_span: depth range beyond depth_near.
        depth_blur: smoothing passes applied to the depth map.
        warmup_busy: number of initial POST requests answered 503, the
            way a deployment behaves while weights are still loading.
        caption_template: /caption reply template with a {color} slot,
            or None to report captioning unsupported.
    """

    mean_image: str | None = None
    sigma0: float = 0.25
    timesteps: int = 1000
    embed_dim: int = 64
    pool_factor: int = 2
    depth_near: float = 1.0
    depth_span: float = 2.0
    depth_blur: int = 1
    warmup_busy: int = 0
    caption_template: str | None = "a {color} scene"

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be positive")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")
        if self.warmup_busy < 0:
            raise ValueError("warmup_busy must be >= 0")


def load_bridge_config(path: str) -> BridgeConfig:
    """Read a BridgeConfig from the [bridge] section of an INI file."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section("bridge"):
        raise ValueError(f"{path} has no [bridge] section")
    sec = parser["bridge"]
    caption = sec.get("caption_template", "a {color} scene")
    return BridgeConfig(
        mean_image=sec.get("mean_image") or None,
        sigma0=sec.getfloat("sigma0", 0.25),
        timesteps=sec.getint("timesteps", 1000),
        embed_dim=sec.getint("embed_dim", 64),
        pool_factor=sec.getint("pool_factor", 2),
        depth_near=sec.getfloat("depth_near", 1.0),
        depth_span=sec.getfloat("depth_span", 2.0),
        depth_blur=sec.getint("depth_blur", 1),
        warmup_busy=sec.getint("warmup_busy", 0),
        caption_template=caption if caption.lower() != "none" else None,
    )


class _ModelSuite:
    """Loaded models plus the warmup counter; shared across requests."""

    def __init__(self, config: BridgeConfig):
        mu = None
        if config.mean_image is not None:
            mu = np.load(config.mean_image)
        self.denoiser = GaussianDenoiser(mu, config.sigma0, config.timesteps)
        self.embedder = HashTextEmbedder(config.embed_dim)
        self.codec = PoolCodec(config.pool_factor)
        self.depth = LumaDepth(config.depth_near, config.depth_span,
                               config.depth_blur)
        self.captioner = None
        if config.caption_template is not None:
            self.captioner = DominantColorCaptioner(config.caption_template)
        self._warmup_left = int(config.warmup_busy)
        # One model instance serves all requests, so compute is serialized
        # the way a single-accelerator deployment would be.
        self.compute_lock = threading.Lock()
        self._counter_lock = threading.Lock()

    def still_warming_up(self) -> bool:
        with self._counter_lock:
            if self._warmup_left > 0:
                self._warmup_left -= 1
                return True
            return False


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep per-request stderr quiet
        pass

    def _send(self, status: int, body: dict, retry_after: bool = False):
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header(PROTO_HEADER, PROTO_VERSION)
        if retry_after:
            self.send_header("Retry-After", "1")
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path.rstrip("/") in ("", "/health"):
            self._send(200, {"status": "ok"})
        else:
            self._send(400, error_body(None, ERROR_MALFORMED, "unknown op"))

    def do_POST(self):
        suite: _ModelSuite = self.server.suite
        try:
            n = int(self.headers.get("Content-Length", 0))
            req = json.loads(self.rfile.read(n).decode("utf-8"))
            if not isinstance(req, dict):
                raise ValueError("request body must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            self._send(400, error_body(None, ERROR_MALFORMED, str(exc)))
            return
        rid = req.get("id")
        op = self.path.rstrip("/").lstrip("/")
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       f"unknown op {op!r}"))
            return
        if suite.still_warming_up():
            self._send(503, error_body(rid, ERROR_BUSY, "models loading"),
                       retry_after=True)
            return
        try:
            with suite.compute_lock:
                handler(suite, rid, req)
        except KeyError as exc:
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       f"missing field {exc}"))
        except ValueError as exc:
            self._send(422, error_body(rid, ERROR_SHAPE, str(exc)))
        except Exception as exc:  # contract: 500 with a message, never a hang
            self._send(500, error_body(rid, ERROR_INTERNAL, str(exc)))

    # -- ops ----------------------------------------------------------------

    def _op_denoise(self, suite, rid, req):
        z_t = decode_tensor(req["z_t"])
        t = req["t"]
        if isinstance(t, bool) or not isinstance(t, int):
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       "t must be an integer"))
            return
        cond = req.get("cond")
        if cond is not None:
            decode_tensor(cond["caption"])
            decode_tensor(cond["inversion"])
        eps = suite.denoiser.predict(z_t, t)
        self._send(200, {"id": rid, "eps": encode_tensor(eps)})

    def _op_text_embed(self, suite, rid, req):
        text = req["text"]
        if not isinstance(text, str):
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       "text must be a string"))
            return
        vec = suite.embedder.embed(text)
        self._send(200, {"id": rid, "embedding": encode_tensor(vec)})

    def _op_encode(self, suite, rid, req):
        image = decode_tensor(req["image"])
        latent = suite.codec.encode(image)
        self._send(200, {"id": rid, "latent": encode_tensor(latent)})

    def _op_decode(self, suite, rid, req):
        latent = decode_tensor(req["latent"])
        shape = req.get("shape")
        image = suite.codec.decode(latent, shape)
        self._send(200, {"id": rid, "image": encode_tensor(image)})

    def _op_depth(self, suite, rid, req):
        image = decode_tensor(req["image"])
        depth = suite.depth.estimate(image)
        self._send(200, {"id": rid, "depth": encode_tensor(depth)})

    def _op_caption(self, suite, rid, req):
        image = decode_tensor(req["image"])
        if suite.captioner is None:
            self._send(500, error_body(rid, ERROR_UNSUPPORTED,
                                       "no caption model served"))
            return
        self._send(200, {"id": rid, "text": suite.captioner.caption(image)})


class BridgeServer:
    """Bridge server on a background thread, for tests and embedding.

    Binds an ephemeral port by default; ``url`` reports the address.
    Usable as a context manager.
    """

    def __init__(self, config: BridgeConfig = BridgeConfig(),
                 host: str = "127.0.0.1", port: int = 0):
        suite = _ModelSuite(config)
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.suite = suite
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def serve(config: BridgeConfig, port: int, host: str = "0.0.0.0"):
    """Run the bridge in the foreground until interrupted.

    Models load before the socket opens, so a reachable server is a
    loaded server (minus any configured warmup window).
    """
    suite = _ModelSuite(config)
    httpd = ThreadingHTTPServer((host, port), _Handler)
    httpd.suite = suite
    httpd.daemon_threads = True
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
