"""In-repo mock model server for exercising the remote prior client.

Serves the same HTTP/JSON surface a real model server would (/health,
/denoise, /text_embed, /encode, /decode, /depth, /caption) from pure
stdlib pieces, with two denoiser behaviors: ``echo`` (returns the input
latent) and ``analytic`` (the exact Gaussian-law noise estimate).  Tests
run it on an ephemeral port in a daemon thread.
"""

from __future__ import annotations

import json
import threading
import zlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .prior import analytic_gaussian_eps, build_schedule
from .protocol import (
    ERROR_BUSY,
    ERROR_MALFORMED,
    ERROR_SHAPE,
    ERROR_UNSUPPORTED,
    PROTO_HEADER,
    PROTO_VERSION,
    decode_tensor,
    encode_tensor,
    error_body,
)

MODES = ("echo", "analytic")


class _BridgeState:
    """Configuration plus the mutable busy-failure counter."""

    def __init__(self, mode: str, mu, sigma0: float, timesteps: int,
                 embed_dim: int, fail_first: int, caption_text):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "analytic":
            if mu is None:
                raise ValueError("analytic mode needs a mean image")
            mu = np.asarray(mu, dtype=np.float64).ravel()
        self.mode = mode
        self.mu = mu
        self.sigma0 = float(sigma0)
        self.sched = build_schedule(timesteps)
        self.embed_dim = int(embed_dim)
        self.caption_text = caption_text
        self._fail_left = int(fail_first)
        self._lock = threading.Lock()

    def take_failure(self) -> bool:
        """Consume one scripted 503, if any remain."""
        with self._lock:
            if self._fail_left > 0:
                self._fail_left -= 1
                return True
            return False


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # silence per-request stderr noise
        pass

    def _send(self, status: int, body: dict):
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header(PROTO_HEADER, PROTO_VERSION)
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path.rstrip("/") in ("", "/health"):
            self._send(200, {"status": "ok"})
        else:
            self._send(400, error_body(None, ERROR_MALFORMED, "unknown op"))

    def do_POST(self):
        state: _BridgeState = self.server.state
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
        try:
            handler = getattr(self, f"_op_{op}", None)
            if handler is None:
                self._send(400, error_body(rid, ERROR_MALFORMED, "unknown op"))
                return
            handler(state, rid, req)
        except KeyError as exc:
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       f"missing field {exc}"))
        except ValueError as exc:
            self._send(422, error_body(rid, ERROR_SHAPE, str(exc)))
        except Exception as exc:  # contract: 500 with a message, never a hang
            self._send(500, error_body(rid, "internal", str(exc)))

    # -- ops ----------------------------------------------------------------

    def _op_denoise(self, state, rid, req):
        if state.take_failure():
            self._send(503, error_body(rid, ERROR_BUSY, "model busy"))
            return
        z_t = decode_tensor(req["z_t"]).astype(np.float64)
        t = req["t"]
        if not isinstance(t, int):
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       "t must be an integer"))
            return
        if req.get("cond") is not None:
            decode_tensor(req["cond"]["caption"])
            decode_tensor(req["cond"]["inversion"])
        if state.mode == "echo":
            eps = z_t
        else:
            if z_t.shape != state.mu.shape:
                raise ValueError(
                    f"latent shape {z_t.shape} != served {state.mu.shape}"
                )
            eps = analytic_gaussian_eps(z_t, t, state.mu, state.sigma0,
                                        state.sched)
        self._send(200, {"id": rid, "eps": encode_tensor(eps)})

    def _op_text_embed(self, state, rid, req):
        text = req["text"]
        if not isinstance(text, str):
            self._send(400, error_body(rid, ERROR_MALFORMED,
                                       "text must be a string"))
            return
        seed = zlib.crc32(text.encode("utf-8"))
        vec = np.random.default_rng(seed).standard_normal((1, state.embed_dim))
        self._send(200, {"id": rid, "embedding": encode_tensor(vec)})

    def _op_encode(self, state, rid, req):
        image = decode_tensor(req["image"])
        self._send(200, {"id": rid, "latent": encode_tensor(image.ravel())})

    def _op_decode(self, state, rid, req):
        latent = decode_tensor(req["latent"])
        if "shape" in req:
            latent = latent.reshape([int(s) for s in req["shape"]])
        self._send(200, {"id": rid, "image": encode_tensor(latent)})

    def _op_depth(self, state, rid, req):
        image = decode_tensor(req["image"]).astype(np.float64)
        if image.ndim != 3 or image.shape[-1] != 3:
            raise ValueError(f"image must be [H, W, 3], got {image.shape}")
        luma = image @ np.array([0.299, 0.587, 0.114])
        self._send(200, {"id": rid, "depth": encode_tensor(1.5 + luma)})

    def _op_caption(self, state, rid, req):
        decode_tensor(req["image"])
        if state.caption_text is None:
            self._send(500, error_body(rid, ERROR_UNSUPPORTED,
                                       "no caption model served"))
            return
        self._send(200, {"id": rid, "text": state.caption_text})


class MockBridgeServer:
    """Context-managed mock bridge on an ephemeral local port.

    Args:
        mode: "echo" returns the request latent as the noise estimate;
            "analytic" serves the exact Gaussian-law denoiser around ``mu``.
        mu: mean image (any shape; flattened) for analytic mode.
        sigma0: Gaussian-law standard deviation for analytic mode.
        timesteps: schedule length served by the denoiser.
        fail_first: number of initial /denoise calls answered 503, for
            exercising client retry.
        caption_text: /caption reply, or None to report "unsupported".
    """

    def __init__(self, mode: str = "echo", mu=None, sigma0: float = 0.0,
                 timesteps: int = 1000, embed_dim: int = 16,
                 fail_first: int = 0, caption_text="a synthetic scene"):
        state = _BridgeState(mode, mu, sigma0, timesteps, embed_dim,
                             fail_first, caption_text)
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._httpd.state = state
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
