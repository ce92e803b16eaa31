"""Acceptance checks for the live server: wire contract over real HTTP."""

import base64
import json
import urllib.error
import urllib.request

import numpy as np
import pytest

from priorbridge.conformance import all_pass, conformance_suite, format_report
from priorbridge.protocol import (
    PROTO_HEADER,
    PROTO_VERSION,
    decode_tensor,
    encode_tensor,
)
from priorbridge.models import GaussianDenoiser
from priorbridge.server import BridgeConfig, BridgeServer, load_bridge_config

_CACHE = {}


def _default_server() -> BridgeServer:
    """One shared warm server for every test that needs no special config."""
    if "server" not in _CACHE:
        _CACHE["server"] = BridgeServer(BridgeConfig())
    return _CACHE["server"]


def _get(url: str, op: str):
    req = urllib.request.Request(f"{url}/{op}",
                                 headers={PROTO_HEADER: PROTO_VERSION})
    with urllib.request.urlopen(req, timeout=10.0) as resp:
        return resp.status, dict(resp.headers), json.loads(resp.read())


def _post(url: str, op: str, body, raw: bool = False):
    data = body if raw else json.dumps(body).encode("utf-8")
    req = urllib.request.Request(
        f"{url}/{op}", data=data,
        headers={"Content-Type": "application/json",
                 PROTO_HEADER: PROTO_VERSION},
        method="POST")
    try:
        with urllib.request.urlopen(req, timeout=10.0) as resp:
            return resp.status, dict(resp.headers), json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, dict(exc.headers), json.loads(exc.read())


class TestHealth:
    def test_health_answers_ok(self):
        url = _default_server().url
        status, headers, body = _get(url, "health")
        assert status == 200
        assert body == {"status": "ok"}

    def test_every_response_carries_protocol_header(self):
        url = _default_server().url
        for status, headers, _ in (
            _get(url, "health"),
            _post(url, "text_embed", {"id": "h", "text": "x"}),
            _post(url, "denoise", b"{bad", raw=True),
        ):
            assert headers.get(PROTO_HEADER) == PROTO_VERSION


class TestDenoise:
    def test_shape_echo_across_shapes(self):
        url = _default_server().url
        rng = np.random.default_rng(11)
        for shape in ((5,), (4, 3), (2, 3, 3)):
            z = rng.standard_normal(shape)
            status, _, body = _post(
                url, "denoise",
                {"id": "s", "z_t": encode_tensor(z), "t": 400, "cond": None})
            assert status == 200
            eps = decode_tensor(body["eps"])
            assert eps.shape == shape
            assert np.isfinite(eps).all()

    def test_served_math_matches_local_model(self):
        rng = np.random.default_rng(12)
        mu = rng.uniform(0.0, 1.0, 27)
        with BridgeServer(BridgeConfig(sigma0=0.25)) as srv:
            z = rng.standard_normal(27)
            status, _, body = _post(
                srv.url, "denoise",
                {"id": "m", "z_t": encode_tensor(z), "t": 333})
            assert status == 200
            got = decode_tensor(body["eps"])
        local = GaussianDenoiser(None, sigma0=0.25)
        want = local.predict(z.astype("<f4").astype(np.float64), 333)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_non_integer_timestep_is_malformed(self):
        url = _default_server().url
        z = encode_tensor(np.zeros(4))
        for bad_t in ("5", True, 1.5, None):
            status, _, body = _post(
                url, "denoise", {"id": "t", "z_t": z, "t": bad_t})
            assert status == 400
            assert body["error"]["code"] == "malformed"

    def test_out_of_schedule_timestep_is_shape_error(self):
        url = _default_server().url
        status, _, body = _post(
            url, "denoise",
            {"id": "r", "z_t": encode_tensor(np.zeros(4)), "t": 10_000})
        assert status == 422
        assert body["error"]["code"] == "shape"


class TestErrorBehavior:
    def test_malformed_body_gets_400(self):
        status, _, body = _post(_default_server().url, "denoise",
                                b"{not json at all", raw=True)
        assert status == 400
        assert body["error"]["code"] == "malformed"

    def test_missing_field_gets_400(self):
        status, _, body = _post(_default_server().url, "denoise",
                                {"id": "x", "t": 5})
        assert status == 400
        assert body["error"]["code"] == "malformed"

    def test_wrong_byte_length_gets_422(self):
        payload = encode_tensor(np.zeros((2, 2)))
        payload["data"] = base64.b64encode(b"\x00" * 12).decode("ascii")
        status, _, body = _post(_default_server().url, "denoise",
                                {"id": "x", "z_t": payload, "t": 5})
        assert status == 422
        assert body["error"]["code"] == "shape"

    def test_unknown_op_gets_400(self):
        status, _, body = _post(_default_server().url, "frobnicate",
                                {"id": "x"})
        assert status == 400

    def test_warmup_answers_503_then_recovers(self):
        with BridgeServer(BridgeConfig(warmup_busy=2)) as srv:
            z = encode_tensor(np.zeros(6))
            for _ in range(2):
                status, headers, body = _post(
                    srv.url, "denoise", {"id": "w", "z_t": z, "t": 3})
                assert status == 503
                assert body["error"]["code"] == "busy"
                assert headers.get("Retry-After") == "1"
            status, _, body = _post(
                srv.url, "denoise", {"id": "w", "z_t": z, "t": 3})
            assert status == 200


class TestRequestIdEcho:
    def test_id_echoed_on_success(self):
        url = _default_server().url
        status, _, body = _post(url, "text_embed",
                                {"id": "abc", "text": "probe"})
        assert status == 200
        assert body["id"] == "abc"

    def test_id_echoed_on_error(self):
        url = _default_server().url
        payload = encode_tensor(np.zeros((2, 2)))
        payload["data"] = base64.b64encode(b"\x00" * 4).decode("ascii")
        status, _, body = _post(url, "denoise",
                                {"id": "err-echo", "z_t": payload, "t": 5})
        assert status == 422
        assert body["id"] == "err-echo"


class TestEncodeDecode:
    def test_shape_round_trip(self):
        url = _default_server().url
        rng = np.random.default_rng(13)
        img = rng.uniform(0.0, 1.0, (8, 6, 3))
        status, _, body = _post(url, "encode",
                                {"id": "e", "image": encode_tensor(img)})
        assert status == 200
        latent = decode_tensor(body["latent"])
        assert latent.shape == (4, 3, 3)
        status, _, body = _post(
            url, "decode",
            {"id": "d", "latent": encode_tensor(latent),
             "shape": [8, 6, 3]})
        assert status == 200
        assert decode_tensor(body["image"]).shape == (8, 6, 3)

    def test_block_constant_content_round_trips_exactly(self):
        url = _default_server().url
        rng = np.random.default_rng(14)
        blocks = rng.uniform(0.0, 1.0, (3, 4, 3)).astype("<f4")
        img = np.repeat(np.repeat(blocks, 2, axis=0), 2, axis=1)
        _, _, body = _post(url, "encode",
                           {"id": "e", "image": encode_tensor(img)})
        latent = decode_tensor(body["latent"])
        _, _, body = _post(url, "decode",
                           {"id": "d", "latent": encode_tensor(latent)})
        np.testing.assert_allclose(decode_tensor(body["image"]), img,
                                   rtol=0.0, atol=0.0)

    def test_indivisible_image_gets_422(self):
        url = _default_server().url
        status, _, body = _post(
            url, "encode",
            {"id": "e", "image": encode_tensor(np.zeros((5, 4, 3)))})
        assert status == 422
        assert body["error"]["code"] == "shape"


class TestDepthAndCaption:
    def test_depth_shape_and_range(self):
        url = _default_server().url
        rng = np.random.default_rng(15)
        img = rng.uniform(0.0, 1.0, (10, 7, 3))
        status, _, body = _post(url, "depth",
                                {"id": "d", "image": encode_tensor(img)})
        assert status == 200
        depth = decode_tensor(body["depth"])
        assert depth.shape == (10, 7)
        assert depth.min() >= 1.0 - 1e-6
        assert depth.max() <= 3.0 + 1e-6

    def test_caption_names_dominant_color(self):
        url = _default_server().url
        img = np.zeros((4, 4, 3))
        img[..., 0] = 0.8
        img[..., 1] = 0.15
        img[..., 2] = 0.15
        status, _, body = _post(url, "caption",
                                {"id": "c", "image": encode_tensor(img)})
        assert status == 200
        assert body["text"] == "a red scene"

    def test_caption_disabled_reports_unsupported(self):
        with BridgeServer(BridgeConfig(caption_template=None)) as srv:
            status, _, body = _post(
                srv.url, "caption",
                {"id": "c", "image": encode_tensor(np.zeros((2, 2, 3)))})
            assert status == 500
            assert body["error"]["code"] == "unsupported"


class TestServedMeanImage:
    def test_npy_mean_image_pins_latent_size(self, tmp_path):
        rng = np.random.default_rng(16)
        mu = rng.uniform(0.0, 1.0, 18)
        path = tmp_path / "mean.npy"
        np.save(path, mu)
        with BridgeServer(BridgeConfig(mean_image=str(path),
                                       sigma0=0.0)) as srv:
            ab = GaussianDenoiser(mu, 0.0).alpha_bar[77]
            z = np.sqrt(ab) * mu
            status, _, body = _post(
                srv.url, "denoise",
                {"id": "mu", "z_t": encode_tensor(z), "t": 77})
            assert status == 200
            got = decode_tensor(body["eps"])
            np.testing.assert_allclose(got, 0.0, atol=1e-4)
            status, _, body = _post(
                srv.url, "denoise",
                {"id": "mu", "z_t": encode_tensor(np.zeros(19)), "t": 77})
            assert status == 422
            assert body["error"]["code"] == "shape"


class TestConformanceSuite:
    def test_own_server_passes_every_check(self):
        results = conformance_suite(_default_server().url)
        assert all_pass(results), format_report(results)
        assert len(results) == 10

    def test_unreachable_endpoint_fails_without_raising(self):
        results = conformance_suite("http://127.0.0.1:9", timeout=0.5)
        assert not all_pass(results)
        assert not results["health"][0]

    def test_report_format(self):
        results = conformance_suite(_default_server().url)
        report = format_report(results)
        assert "PASS health" in report
        assert report.strip().endswith("10/10 checks passed")


class TestConfigLoading:
    def test_ini_round_trip(self, tmp_path):
        path = tmp_path / "bridge.ini"
        path.write_text(
            "[bridge]\nsigma0 = 0.5\nembed_dim = 32\npool_factor = 4\n"
            "warmup_busy = 3\ncaption_template = none\n")
        cfg = load_bridge_config(str(path))
        assert cfg.sigma0 == 0.5
        assert cfg.embed_dim == 32
        assert cfg.pool_factor == 4
        assert cfg.warmup_busy == 3
        assert cfg.caption_template is None

    def test_missing_section_raises(self, tmp_path):
        path = tmp_path / "empty.ini"
        path.write_text("[other]\nx = 1\n")
        with pytest.raises(ValueError, match="bridge"):
            load_bridge_config(str(path))

    def test_invalid_config_values_raise(self):
        with pytest.raises(ValueError):
            BridgeConfig(timesteps=0)
        with pytest.raises(ValueError):
            BridgeConfig(warmup_busy=-1)


class TestCommandLine:
    def test_check_command_exit_codes(self, capsys):
        from priorbridge.cli import main
        assert main(["check", "--endpoint", _default_server().url]) == 0
        out = capsys.readouterr().out
        assert "10/10 checks passed" in out
        assert main(["check", "--endpoint", "http://127.0.0.1:9",
                     "--timeout", "0.5"]) == 2

    def test_usage_errors_exit_1(self, capsys):
        from priorbridge.cli import main
        assert main(["check"]) == 1
        assert main(["check", "--endpoint", "http://x",
                     "--latent-shape", "4xnope"]) == 1
        assert main([]) == 1
