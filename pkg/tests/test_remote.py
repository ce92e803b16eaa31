"""Tests for the wire protocol, remote prior client, and mock server."""

import json
import socket
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from monofield.bridge_mock import MockBridgeServer
from monofield.cameras import camera_rays, intrinsics_for_fov, look_at
from monofield.field import FieldConfig, HashGridConfig
from monofield.objective import LossWeights
from monofield.prior import (
    GuidanceEmbedding,
    IdentityCodec,
    PriorBackendError,
    analytic_gaussian_eps,
    build_schedule,
    run_denoiser_conformance,
)
from monofield.protocol import decode_tensor, encode_tensor
from monofield.remote import RemoteDenoiser
from monofield.render import RenderConfig, render_image
from monofield.scenes import analytic_depth, scene_field, sphere_scene
from monofield.trainer import SynthesisConfig, synthesize

_CACHE = {}


def shared_mu() -> np.ndarray:
    rng = np.random.default_rng(7)
    return rng.uniform(0.2, 0.8, size=27)


def analytic_server() -> MockBridgeServer:
    if "analytic" not in _CACHE:
        _CACHE["analytic"] = MockBridgeServer(
            mode="analytic", mu=shared_mu(), sigma0=0.4, timesteps=1000
        )
    return _CACHE["analytic"]


def echo_server() -> MockBridgeServer:
    if "echo" not in _CACHE:
        _CACHE["echo"] = MockBridgeServer(mode="echo")
    return _CACHE["echo"]


def small_cond(dim: int = 4) -> GuidanceEmbedding:
    rng = np.random.default_rng(11)
    return GuidanceEmbedding(
        section_caption=rng.standard_normal((1, dim)),
        section_inversion=rng.standard_normal((1, dim)),
    )


def post_raw(url: str, op: str, body, raw_bytes=None):
    """POST and return (status, parsed body, headers) even on HTTP errors."""
    data = raw_bytes if raw_bytes is not None else json.dumps(body).encode()
    req = urllib.request.Request(
        f"{url}/{op}", data=data, method="POST",
        headers={"Content-Type": "application/json"},
    )
    try:
        with urllib.request.urlopen(req, timeout=5.0) as resp:
            return resp.status, json.loads(resp.read().decode()), resp.headers
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode()), exc.headers


def free_port() -> int:
    """A port that was just free, so connections to it are refused."""
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestTensorPayload:
    def test_round_trip_shapes(self):
        rng = np.random.default_rng(0)
        for shape in ((), (5,), (3, 4), (2, 3, 4)):
            arr = rng.standard_normal(shape).astype(np.float32)
            out = decode_tensor(encode_tensor(arr))
            assert out.shape == arr.shape
            np.testing.assert_array_equal(out, arr)

    def test_float64_input_quantized_to_f32(self):
        arr = np.array([1.0 / 3.0], dtype=np.float64)
        out = decode_tensor(encode_tensor(arr))
        assert out.dtype == np.float32
        np.testing.assert_allclose(out[0], arr[0], rtol=1e-6)

    def test_byte_length_mismatch_rejected(self):
        payload = encode_tensor(np.zeros(4, dtype=np.float32))
        payload["shape"] = [5]
        with pytest.raises(ValueError, match="byte length"):
            decode_tensor(payload)

    def test_unknown_dtype_rejected(self):
        payload = encode_tensor(np.zeros(2))
        payload["dtype"] = "f64"
        with pytest.raises(ValueError, match="dtype"):
            decode_tensor(payload)

    def test_unreadable_base64_rejected(self):
        payload = {"dtype": "f32", "shape": [1], "data": "@@@@"}
        with pytest.raises(ValueError, match="unreadable"):
            decode_tensor(payload)


class TestServerContract:
    def test_health_endpoint(self):
        den = RemoteDenoiser(echo_server().url)
        assert den.health() is True

    def test_health_false_when_unreachable(self):
        den = RemoteDenoiser(f"http://127.0.0.1:{free_port()}", timeout=0.5)
        assert den.health() is False

    def test_request_id_echoed_verbatim(self):
        body = {"id": "abc", "z_t": encode_tensor(np.zeros(4)), "t": 10,
                "cond": None}
        status, reply, headers = post_raw(echo_server().url, "denoise", body)
        assert status == 200
        assert reply["id"] == "abc"
        assert headers["X-NeRDi-Proto"] == "1"

    def test_denoise_shape_echo(self):
        z = np.random.default_rng(1).standard_normal(6)
        body = {"id": "s", "z_t": encode_tensor(z), "t": 3, "cond": None}
        status, reply, _ = post_raw(echo_server().url, "denoise", body)
        assert status == 200
        assert decode_tensor(reply["eps"]).shape == z.shape

    def test_malformed_json_gets_400(self):
        status, reply, _ = post_raw(echo_server().url, "denoise", None,
                                    raw_bytes=b"{not json")
        assert status == 400
        assert reply["error"]["code"] == "malformed"

    def test_missing_field_gets_400(self):
        status, reply, _ = post_raw(echo_server().url, "denoise",
                                    {"id": "m", "t": 5})
        assert status == 400
        assert reply["error"]["code"] == "malformed"

    def test_wrong_byte_length_gets_422(self):
        payload = encode_tensor(np.zeros(4))
        payload["shape"] = [7]
        body = {"id": "w", "z_t": payload, "t": 5, "cond": None}
        status, reply, _ = post_raw(echo_server().url, "denoise", body)
        assert status == 422
        assert reply["error"]["code"] == "shape"

    def test_latent_size_mismatch_gets_422(self):
        body = {"id": "x", "z_t": encode_tensor(np.zeros(9)), "t": 5,
                "cond": None}
        status, reply, _ = post_raw(analytic_server().url, "denoise", body)
        assert status == 422
        assert reply["error"]["code"] == "shape"

    def test_non_integer_timestep_gets_400(self):
        body = {"id": "t", "z_t": encode_tensor(np.zeros(4)), "t": "mid",
                "cond": None}
        status, reply, _ = post_raw(echo_server().url, "denoise", body)
        assert status == 400

    def test_unknown_op_gets_400(self):
        status, reply, _ = post_raw(echo_server().url, "warp", {"id": "u"})
        assert status == 400

    def test_encode_decode_round_trip(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0.0, 1.0, size=(4, 5, 3)).astype(np.float32)
        url = echo_server().url
        _, reply, _ = post_raw(url, "encode",
                               {"id": "e", "image": encode_tensor(img)})
        latent = decode_tensor(reply["latent"])
        assert latent.shape == (60,)
        _, reply, _ = post_raw(
            url, "decode",
            {"id": "d", "latent": encode_tensor(latent), "shape": [4, 5, 3]},
        )
        out = decode_tensor(reply["image"])
        assert out.shape == img.shape
        np.testing.assert_array_equal(out, img)

    def test_depth_and_caption_ops(self):
        url = echo_server().url
        img = np.full((3, 3, 3), 0.5, dtype=np.float32)
        _, reply, _ = post_raw(url, "depth",
                               {"id": "p", "image": encode_tensor(img)})
        depth = decode_tensor(reply["depth"])
        assert depth.shape == (3, 3)
        assert np.all(depth > 0)
        _, reply, _ = post_raw(url, "caption",
                               {"id": "c", "image": encode_tensor(img)})
        assert isinstance(reply["text"], str)

    def test_caption_unsupported_reports_error(self):
        with MockBridgeServer(mode="echo", caption_text=None) as srv:
            status, reply, _ = post_raw(
                srv.url, "caption",
                {"id": "c", "image": encode_tensor(np.zeros((2, 2, 3)))},
            )
        assert status == 500
        assert reply["error"]["code"] == "unsupported"

    def test_text_embed_deterministic(self):
        url = echo_server().url
        _, r1, _ = post_raw(url, "text_embed", {"id": "1", "text": "a chair"})
        _, r2, _ = post_raw(url, "text_embed", {"id": "2", "text": "a chair"})
        _, r3, _ = post_raw(url, "text_embed", {"id": "3", "text": "a lamp"})
        e1, e2 = decode_tensor(r1["embedding"]), decode_tensor(r2["embedding"])
        e3 = decode_tensor(r3["embedding"])
        np.testing.assert_array_equal(e1, e2)
        assert e1.shape == (1, 16)
        assert not np.array_equal(e1, e3)


class TestRemoteDenoiser:
    def test_rejects_non_http_url(self):
        with pytest.raises(ValueError, match="http"):
            RemoteDenoiser("ftp://example.test")

    def test_matches_local_analytic_prior(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal(27).astype(np.float32).astype(np.float64)
        mu = shared_mu()
        sched = build_schedule(1000)
        den = RemoteDenoiser(analytic_server().url)
        for t in (20, 500, 979):
            remote = den.predict(z, t, small_cond())
            local = analytic_gaussian_eps(z, t, mu, 0.4, sched)
            np.testing.assert_allclose(remote, local, rtol=1e-6, atol=1e-6)

    def test_echo_passes_shared_conformance(self):
        den = RemoteDenoiser(echo_server().url)
        sched = build_schedule(1000)
        checks = run_denoiser_conformance(den, sched, 12, small_cond(),
                                          np.random.default_rng(2))
        assert all(checks.values()), checks

    def test_analytic_passes_shared_conformance(self):
        den = RemoteDenoiser(analytic_server().url)
        sched = build_schedule(1000)
        checks = run_denoiser_conformance(den, sched, 27, small_cond(),
                                          np.random.default_rng(3))
        assert all(checks.values()), checks

    def test_retries_through_busy_server(self):
        with MockBridgeServer(mode="echo", fail_first=2) as srv:
            den = RemoteDenoiser(srv.url, retries=3, backoff=0.01)
            out = den.predict(np.ones(4), 10)
            np.testing.assert_allclose(out, np.ones(4))

    def test_busy_beyond_retries_raises(self):
        with MockBridgeServer(mode="echo", fail_first=5) as srv:
            den = RemoteDenoiser(srv.url, retries=1, backoff=0.01)
            with pytest.raises(PriorBackendError, match="503"):
                den.predict(np.ones(4), 10)

    def test_unreachable_server_raises(self):
        den = RemoteDenoiser(f"http://127.0.0.1:{free_port()}", timeout=0.5,
                             retries=0)
        with pytest.raises(PriorBackendError, match="unreachable"):
            den.predict(np.ones(4), 10)

    def test_silent_server_times_out(self):
        with socket.socket() as listener:
            listener.bind(("127.0.0.1", 0))
            listener.listen(1)
            port = listener.getsockname()[1]
            den = RemoteDenoiser(f"http://127.0.0.1:{port}", timeout=0.3,
                                 retries=0)
            with pytest.raises(PriorBackendError, match="unreachable"):
                den.predict(np.ones(4), 10)

    def test_wrong_id_echo_rejected(self):
        with _fixed_id_server() as url:
            den = RemoteDenoiser(url, retries=0)
            with pytest.raises(PriorBackendError, match="echoed id"):
                den.predict(np.ones(4), 10)

    def test_text_embed_helper(self):
        den = RemoteDenoiser(echo_server().url)
        vec = den.text_embed("a red sphere")
        assert vec.shape == (1, 16)
        assert np.isfinite(vec).all()


class _FixedIdHandler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        n = int(self.headers.get("Content-Length", 0))
        self.rfile.read(n)
        body = json.dumps(
            {"id": "nope", "eps": encode_tensor(np.zeros(4))}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class _fixed_id_server:
    """Minimal server whose responses never echo the request id."""

    def __enter__(self):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _FixedIdHandler)
        self.thread = threading.Thread(target=self.httpd.serve_forever,
                                       daemon=True)
        self.thread.start()
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
        return False


class TestTrainerOverBridge:
    def test_synthesis_runs_against_mock(self):
        spec = sphere_scene()
        fn = scene_field(spec)
        intr = intrinsics_for_fov(12, 12, 45.0)
        pose = look_at(np.array([0.0, 0.6, -2.2]), np.zeros(3))
        img, _, _ = render_image(fn, intr, pose, -1.0, 1.0,
                                 RenderConfig(samples_per_ray=32))
        origins, dirs, _, _, _ = camera_rays(intr, pose, -1.0, 1.0)
        depth = analytic_depth(spec, origins, dirs).reshape(12, 12)
        fcfg = FieldConfig(
            grid=HashGridConfig(levels=2, base_resolution=4,
                                table_size_log2=8),
            hidden_width=8, hidden_layers=1,
        )
        sched = build_schedule(1000)
        mu = np.full(12, 0.5)
        cfg = SynthesisConfig(
            iterations=3, rays_per_batch=48, samples_per_ray=16,
            novel_view_size=2, weights=LossWeights(1.0, 1.0, 0.0), seed=0,
        )
        with MockBridgeServer(mode="analytic", mu=mu, sigma0=0.3) as srv:
            den = RemoteDenoiser(srv.url)
            params, reports = synthesize(
                img, intr, pose, depth, small_cond(), den,
                IdentityCodec((2, 2, 3)), sched, cfg, fcfg,
            )
        assert len(reports) == 3
        assert all(np.isfinite(r.values["diff"]) for r in reports)
