"""HTTP client for an external prior server speaking the bridge protocol.

``RemoteDenoiser`` satisfies the same ``predict(z_t, t, cond)`` contract
as the in-process backends, so the trainer can point at a live model
server without code changes.  All transport, schema, and shape failures
surface as ``PriorBackendError`` so callers can apply their usual
skip-and-retry policy.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
import uuid

import numpy as np

from .autodiff import Tensor
from .prior import PriorBackendError
from .protocol import PROTO_HEADER, PROTO_VERSION, decode_tensor, encode_tensor

DEFAULT_TIMEOUT = 10.0


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


class RemoteDenoiser:
    """Noise predictor backed by a bridge server over HTTP/JSON."""

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT,
                 retries: int = 2, backoff: float = 0.25):
        if not url.startswith(("http://", "https://")):
            raise ValueError(f"bridge url must be http(s), got {url!r}")
        self.url = url.rstrip("/")
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.backoff = float(backoff)

    # -- transport ---------------------------------------------------------

    def _post(self, op: str, body: dict) -> dict:
        """POST one op, retrying on 503 (server busy) with backoff."""
        request_id = uuid.uuid4().hex
        body = dict(body, id=request_id)
        data = json.dumps(body).encode("utf-8")
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(
                f"{self.url}/{op}",
                data=data,
                headers={
                    "Content-Type": "application/json",
                    PROTO_HEADER: PROTO_VERSION,
                },
                method="POST",
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    reply = json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                detail = _http_error_detail(exc)
                if exc.code == 503 and attempt < self.retries:
                    time.sleep(self.backoff * (2.0 ** attempt))
                    continue
                raise PriorBackendError(f"bridge /{op} failed: {detail}")
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                raise PriorBackendError(f"bridge unreachable at {self.url}: {exc}")
            except json.JSONDecodeError as exc:
                raise PriorBackendError(f"bridge /{op} sent invalid JSON: {exc}")
            if not isinstance(reply, dict):
                raise PriorBackendError(f"bridge /{op} sent a non-object reply")
            if "error" in reply:
                err = reply["error"]
                raise PriorBackendError(
                    f"bridge /{op} error {err.get('code')!r}: {err.get('message')}"
                )
            if reply.get("id") != request_id:
                raise PriorBackendError(
                    f"bridge /{op} echoed id {reply.get('id')!r}, "
                    f"expected {request_id!r}"
                )
            return reply
        raise AssertionError("unreachable: loop exits by return or raise")

    def _tensor_field(self, op: str, reply: dict, key: str) -> np.ndarray:
        try:
            return decode_tensor(reply[key])
        except (KeyError, ValueError) as exc:
            raise PriorBackendError(f"bridge /{op} reply unusable: {exc}")

    # -- operations ---------------------------------------------------------

    def health(self) -> bool:
        """True iff GET /health answers {"status": "ok"}."""
        try:
            req = urllib.request.Request(
                f"{self.url}/health", headers={PROTO_HEADER: PROTO_VERSION}
            )
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                reply = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, TimeoutError,
                json.JSONDecodeError):
            return False
        return isinstance(reply, dict) and reply.get("status") == "ok"

    def predict(self, z_t, t: int, cond=None) -> np.ndarray:
        """Noise estimate for one latent; mirrors the in-process backends.

        The server side is not part of the local graph, so the result is
        a plain array even when ``z_t`` is a graph Tensor.
        """
        raw = _raw(z_t)
        body = {"z_t": encode_tensor(raw), "t": int(t), "cond": None}
        if cond is not None:
            body["cond"] = {
                "caption": encode_tensor(cond.section_caption),
                "inversion": encode_tensor(_raw(cond.section_inversion)),
            }
        reply = self._post("denoise", body)
        eps_hat = self._tensor_field("denoise", reply, "eps")
        if eps_hat.shape != raw.shape:
            raise PriorBackendError(
                f"bridge /denoise shape {eps_hat.shape} != input {raw.shape}"
            )
        return eps_hat.astype(np.float64)

    def text_embed(self, text: str) -> np.ndarray:
        reply = self._post("text_embed", {"text": str(text)})
        return self._tensor_field("text_embed", reply, "embedding").astype(
            np.float64
        )

    def encode_image(self, image) -> np.ndarray:
        reply = self._post("encode", {"image": encode_tensor(image)})
        return self._tensor_field("encode", reply, "latent").astype(np.float64)

    def decode_latent(self, latent, shape=None) -> np.ndarray:
        body = {"latent": encode_tensor(latent)}
        if shape is not None:
            body["shape"] = [int(s) for s in shape]
        reply = self._post("decode", body)
        return self._tensor_field("decode", reply, "image").astype(np.float64)

    def estimate_depth(self, image) -> np.ndarray:
        reply = self._post("depth", {"image": encode_tensor(image)})
        return self._tensor_field("depth", reply, "depth").astype(np.float64)

    def caption(self, image) -> str:
        reply = self._post("caption", {"image": encode_tensor(image)})
        text = reply.get("text")
        if not isinstance(text, str):
            raise PriorBackendError("bridge /caption reply has no text")
        return text


def _http_error_detail(exc: urllib.error.HTTPError) -> str:
    try:
        body = json.loads(exc.read().decode("utf-8"))
        err = body.get("error", {})
        return f"HTTP {exc.code} {err.get('code')!r}: {err.get('message')}"
    except Exception:
        return f"HTTP {exc.code}"
