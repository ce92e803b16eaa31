"""Black-box conformance checks for any bridge-protocol endpoint.

``conformance_suite`` exercises a live server purely over HTTP: health,
protocol header, request-id echo, /denoise shape echo and finiteness,
the documented 400/422 error codes, encode/decode shape round-trip,
statelessness of repeated requests, and the 10-second reply budget.
It never imports the server under test, so the same suite validates
this package's server, a mock, or a production deployment.
"""

from __future__ import annotations

import base64
import json
import time
import urllib.error
import urllib.request

import numpy as np

from .protocol import PROTO_HEADER, PROTO_VERSION, decode_tensor, encode_tensor

REPLY_BUDGET_SECONDS = 10.0


class _Probe:
    """One endpoint plus bookkeeping for elapsed-time accounting."""

    def __init__(self, endpoint: str, timeout: float):
        self.base = endpoint.rstrip("/")
        self.timeout = float(timeout)
        self.max_elapsed = 0.0

    def get(self, op: str):
        req = urllib.request.Request(
            f"{self.base}/{op}", headers={PROTO_HEADER: PROTO_VERSION}
        )
        return self._round_trip(req)

    def post(self, op: str, body, raw: bool = False):
        data = body if raw else json.dumps(body).encode("utf-8")
        req = urllib.request.Request(
            f"{self.base}/{op}",
            data=data,
            headers={
                "Content-Type": "application/json",
                PROTO_HEADER: PROTO_VERSION,
            },
            method="POST",
        )
        return self._round_trip(req)

    def _round_trip(self, req):
        """Returns (http_status, headers, parsed body or None)."""
        start = time.monotonic()
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                status = resp.status
                headers = dict(resp.headers)
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            status = exc.code
            headers = dict(exc.headers)
            try:
                body = json.loads(exc.read().decode("utf-8"))
            except (ValueError, UnicodeDecodeError):
                body = None
        self.max_elapsed = max(self.max_elapsed, time.monotonic() - start)
        return status, headers, body


def conformance_suite(endpoint: str, latent_shape=(4, 3),
                      timeout: float = REPLY_BUDGET_SECONDS) -> dict:
    """Run every wire-contract check against a live endpoint.

    Args:
        endpoint: base URL of the server under test.
        latent_shape: /denoise probe shape; pass the served latent shape
            when the backend pins one (mean-image servers do).
        timeout: socket timeout per request; the reply-budget check
            fails if any call took 10 seconds or longer.

    Returns:
        Ordered dict of {check_name: (ok, detail)}.  Transport failures
        mark the affected checks failed rather than raising.
    """
    probe = _Probe(endpoint, timeout)
    results = {}

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # unreachable endpoint -> failed check
            ok, detail = False, f"transport failure: {exc}"
        results[name] = (bool(ok), str(detail))

    rng = np.random.default_rng(20260816)
    z = rng.standard_normal(latent_shape)

    def health():
        status, headers, body = probe.get("health")
        ok = status == 200 and isinstance(body, dict) \
            and body.get("status") == "ok"
        return ok, f"HTTP {status}, body {body!r}"

    def proto_header():
        status, headers, body = probe.get("health")
        got = headers.get(PROTO_HEADER)
        return got == PROTO_VERSION, f"{PROTO_HEADER}: {got!r}"

    def id_echo():
        status, headers, body = probe.post(
            "text_embed", {"id": "abc", "text": "conformance probe"}
        )
        ok = status == 200 and isinstance(body, dict) \
            and body.get("id") == "abc"
        return ok, f"HTTP {status}, id {body.get('id')!r}"

    def denoise_shape_echo():
        status, headers, body = probe.post(
            "denoise",
            {"id": "shape-echo", "z_t": encode_tensor(z), "t": 500,
             "cond": None},
        )
        if status != 200 or not isinstance(body, dict):
            return False, f"HTTP {status}"
        eps = decode_tensor(body["eps"])
        ok = eps.shape == z.shape and bool(np.isfinite(eps).all())
        return ok, f"eps shape {eps.shape}, finite {np.isfinite(eps).all()}"

    def malformed_400():
        status, headers, body = probe.post("denoise", b"{not json", raw=True)
        code = (body or {}).get("error", {}).get("code")
        return status == 400 and code == "malformed", \
            f"HTTP {status}, code {code!r}"

    def shape_422():
        bad = encode_tensor(z)
        bad["data"] = base64.b64encode(b"\x00" * 12).decode("ascii")
        status, headers, body = probe.post(
            "denoise", {"id": "bad-bytes", "z_t": bad, "t": 500}
        )
        code = (body or {}).get("error", {}).get("code")
        return status == 422 and code == "shape", \
            f"HTTP {status}, code {code!r}"

    def unknown_op_400():
        status, headers, body = probe.post("frobnicate", {"id": "x"})
        return status == 400, f"HTTP {status}"

    def encode_decode_round_trip():
        image = rng.uniform(0.0, 1.0, (8, 8, 3))
        status, headers, body = probe.post(
            "encode", {"id": "enc", "image": encode_tensor(image)}
        )
        if status != 200:
            return False, f"/encode HTTP {status}"
        latent = decode_tensor(body["latent"])
        status, headers, body = probe.post(
            "decode",
            {"id": "dec", "latent": encode_tensor(latent),
             "shape": list(image.shape)},
        )
        if status != 200:
            return False, f"/decode HTTP {status}"
        out = decode_tensor(body["image"])
        return out.shape == image.shape, \
            f"latent {latent.shape}, image {out.shape}"

    def stateless_repeat():
        body_req = {"id": "rep", "z_t": encode_tensor(z), "t": 321}
        _, _, first = probe.post("denoise", body_req)
        _, _, second = probe.post("denoise", body_req)
        ok = isinstance(first, dict) and first == second
        return ok, "identical replies" if ok else "replies differ"

    def reply_budget():
        ok = probe.max_elapsed < REPLY_BUDGET_SECONDS
        return ok, f"slowest call {probe.max_elapsed:.3f}s"

    check("health", health)
    check("proto_header", proto_header)
    check("id_echo", id_echo)
    check("denoise_shape_echo", denoise_shape_echo)
    check("malformed_400", malformed_400)
    check("shape_422", shape_422)
    check("unknown_op_400", unknown_op_400)
    check("encode_decode_round_trip", encode_decode_round_trip)
    check("stateless_repeat", stateless_repeat)
    check("reply_budget", reply_budget)  # must run last: audits all calls
    return results


def all_pass(results: dict) -> bool:
    return all(ok for ok, _ in results.values())


def format_report(results: dict) -> str:
    lines = []
    for name, (ok, detail) in results.items():
        lines.append(f"{'PASS' if ok else 'FAIL'} {name:24s} {detail}")
    n_ok = sum(ok for ok, _ in results.values())
    lines.append(f"{n_ok}/{len(results)} checks passed")
    return "\n".join(lines)
