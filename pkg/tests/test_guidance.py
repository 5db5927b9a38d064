import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from gsedit.camera import Intrinsics, look_at_pose
from gsedit.errors import (
    GuidanceTransportError,
    GuidanceValidationError,
    ValidationError,
)
from gsedit.fixtures import build_blob10
from gsedit.guidance import (
    GuidanceRequest,
    MockGuidanceProvider,
    PromptSet,
    RemoteGuidanceProvider,
    decode_image_f32,
    encode_image_f32,
    provider_from_spec,
    run_conformance,
    serve_envelope,
)
from gsedit.optim import AdamParams, SceneAdam
from gsedit.renderer import render, render_backward
from gsedit.scene import EditSet, GaussianScene, TrainableAttrs


@pytest.fixture
def fx():
    return build_blob10()


@pytest.fixture
def mock(fx):
    return MockGuidanceProvider(fx.target_full, fx.target_foreground, seed=3)


@pytest.fixture
def pose(fx):
    return look_at_pose([0.0, 0.4, 2.8], fx.box.center)


class TestPromptSet:
    def test_valid(self):
        PromptSet("a sks toy", "a sks toy wearing olx sunglasses", "olx sunglasses",
                  "olx sunglasses", "sunglasses")

    def test_global_needs_both_tokens(self):
        with pytest.raises(ValidationError):
            PromptSet("a sks toy", "a toy wearing sunglasses", "olx sunglasses",
                      "olx sunglasses", "sunglasses")

    def test_local_must_not_name_scene(self):
        with pytest.raises(ValidationError):
            PromptSet("a sks toy", "a sks toy with olx hat", "olx hat on sks toy",
                      "olx hat", "hat")


class TestWireEncoding:
    def test_round_trip_values(self, rng):
        img = rng.uniform(0, 1, size=(9, 7, 3))
        out = decode_image_f32(encode_image_f32(img), (9, 7, 3))
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_nonfinite_rejected(self):
        img = np.full((2, 2, 3), np.inf, dtype=np.float32)
        with pytest.raises(GuidanceValidationError):
            decode_image_f32(encode_image_f32(img), (2, 2, 3))

    def test_wrong_size_rejected(self):
        img = np.zeros((2, 2, 3))
        with pytest.raises(GuidanceValidationError):
            decode_image_f32(encode_image_f32(img), (3, 2, 3))


class TestMockProvider:
    def test_fixed_point_at_target(self, fx, mock, pose):
        target = render(fx.target_full, pose, fx.intrinsics).rgb
        req = GuidanceRequest(image=target, pose=pose, intrinsics=fx.intrinsics,
                              prompt_kind="global")
        grad = mock.sds_gradient(req)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_gradient_is_weighted_residual(self, fx, mock, pose):
        target = render(fx.target_full, pose, fx.intrinsics).rgb
        image = target.copy()
        image[5, 7, 1] = min(1.0, target[5, 7, 1] + 0.5)
        req = GuidanceRequest(image=image, pose=pose, intrinsics=fx.intrinsics,
                              prompt_kind="global")
        grad = mock.sds_gradient(req)
        assert grad[5, 7, 1] == pytest.approx(image[5, 7, 1] - target[5, 7, 1])
        grad[5, 7, 1] = 0.0
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_determinism(self, fx, pose):
        a = MockGuidanceProvider(fx.target_full, fx.target_foreground, seed=11)
        b = MockGuidanceProvider(fx.target_full, fx.target_foreground, seed=11)
        img = render(fx.scene, pose, fx.intrinsics).rgb
        req = GuidanceRequest(image=img, pose=pose, intrinsics=fx.intrinsics,
                              prompt_kind="global")
        np.testing.assert_array_equal(a.sds_gradient(req), b.sds_gradient(req))
        assert a.history[-1]["t_used"] == b.history[-1]["t_used"]
        assert 0.02 <= a.history[-1]["t_used"] <= 0.98

    def test_denoise_is_closed_form_blend(self, fx, mock, pose, rng):
        img = rng.uniform(0, 1, size=(fx.intrinsics.height, fx.intrinsics.width, 3))
        target = render(fx.target_full, pose, fx.intrinsics).rgb
        out = mock.denoise(img, 0.05, "global", pose, fx.intrinsics)
        np.testing.assert_allclose(out, 0.95 * img + 0.05 * target, atol=1e-6)

    def test_denoise_limit_returns_input(self, fx, mock, pose, rng):
        img = rng.uniform(0, 1, size=(fx.intrinsics.height, fx.intrinsics.width, 3))
        out = mock.denoise(img, 1e-9, "global", pose, fx.intrinsics)
        np.testing.assert_allclose(out, img, atol=1e-8)

    def test_attention_empty_subset_is_zero(self, fx, pose, rng):
        empty = GaussianScene.empty(sh_degree=0)
        mock = MockGuidanceProvider(fx.target_full, empty, seed=0)
        img = rng.uniform(0, 1, size=(fx.intrinsics.height, fx.intrinsics.width, 3))
        amap = mock.attention_map(img, "ornament", pose, fx.intrinsics)
        assert np.all(amap.values == 0.0)

    def test_attention_max_at_subset_alpha_argmax(self, fx, mock, pose, rng):
        img = rng.uniform(0, 1, size=(fx.intrinsics.height, fx.intrinsics.width, 3))
        amap = mock.attention_map(img, "ornament", pose, fx.intrinsics)
        alpha = render(fx.target_foreground, pose, fx.intrinsics).alpha
        assert np.argmax(amap.values) == np.argmax(alpha)

    def test_single_gaussian_color_converges_to_target(self):
        # gradient descent against the residual mock reaches the target color
        K = Intrinsics(fx=50.0, fy=50.0, cx=12.0, cy=12.0, width=24, height=24)
        pose = look_at_pose([0, 0, -2.0], [0, 0, 0])

        def one(color_dc):
            sh = np.zeros((1, 1, 3))
            sh[0, 0] = color_dc
            return GaussianScene([[0, 0, 0]], [1.5], np.log([[0.3] * 3]),
                                 [[1, 0, 0, 0]], sh, 0)

        target_scene = one([0.6, -0.4, 0.2])
        scene = one([-0.5, 0.5, -0.2])
        mock = MockGuidanceProvider(target_scene, seed=0)
        edit = EditSet(np.array([0]), TrainableAttrs.sh_only(), "retexture")
        opt = SceneAdam(scene, edit, AdamParams(lr_sh=2e-2))
        target_img = render(target_scene, pose, K).rgb
        for _ in range(200):
            out = render(scene, pose, K)
            req = GuidanceRequest(image=out.rgb, pose=pose, intrinsics=K,
                                  prompt_kind="global")
            grad = mock.sds_gradient(req)
            grads = render_backward(scene, pose, K, grad)
            opt.step(scene, grads)
        final = render(scene, pose, K).rgb
        assert float(np.mean((final - target_img) ** 2)) < 1e-4

    def test_provider_from_spec(self):
        p = provider_from_spec("mock:blob-10", seed=5)
        assert isinstance(p, MockGuidanceProvider)
        r = provider_from_spec("remote:http://localhost:9")
        assert isinstance(r, RemoteGuidanceProvider)
        with pytest.raises(GuidanceValidationError):
            provider_from_spec("mock:nope")


class TestConformance:
    def test_mock_passes_shared_suite(self, fx, pose):
        mock = MockGuidanceProvider(fx.target_full, fx.target_foreground, seed=0)
        report = run_conformance(lambda env: serve_envelope(mock, env),
                                 pose, fx.intrinsics)
        assert report["bad_kind"] == "ok"
        assert report["denoise_identity"] == "ok"


def _serve_in_thread(handler):
    server = HTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_port}"


class TestRemoteProvider:
    def test_echo_round_trip_preserves_values(self, fx, pose, rng):
        # echo service: payload is the request image itself
        class EchoHandler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers["Content-Length"])
                env = json.loads(self.rfile.read(n))
                body = json.dumps({
                    "request_id": env["request_id"], "kind": env["kind"],
                    "payload": env["image"], "width": env["width"],
                    "height": env["height"], "t_used": 0.5, "elapsed_ms": 0.1,
                }).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        server, url = _serve_in_thread(EchoHandler)
        try:
            provider = RemoteGuidanceProvider(url, timeout=5)
            img = rng.uniform(0, 1, size=(16, 16, 3))
            K = Intrinsics(fx=20, fy=20, cx=8, cy=8, width=16, height=16)
            req = GuidanceRequest(image=img, pose=pose, intrinsics=K,
                                  prompt_kind="global")
            out = provider.sds_gradient(req)
            np.testing.assert_allclose(out, img, atol=1e-6)
            assert provider.history[-1]["t_used"] == 0.5
        finally:
            server.shutdown()

    def test_mock_behind_http_passes_conformance(self, fx, pose):
        mock = MockGuidanceProvider(fx.target_full, fx.target_foreground, seed=0)

        class MockHandler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers["Content-Length"])
                env = json.loads(self.rfile.read(n))
                status, body = serve_envelope(mock, env)
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        server, url = _serve_in_thread(MockHandler)
        try:
            import requests

            def call(env):
                resp = requests.post(url + "/v1/guidance", json=env, timeout=10)
                return resp.status_code, resp.json()

            run_conformance(call, pose, fx.intrinsics)
        finally:
            server.shutdown()

    def test_unreachable_raises_transport_error(self, fx, pose):
        provider = RemoteGuidanceProvider("http://127.0.0.1:1", timeout=0.2, retries=1)
        img = np.zeros((4, 4, 3))
        K = Intrinsics(fx=5, fy=5, cx=2, cy=2, width=4, height=4)
        req = GuidanceRequest(image=img, pose=pose, intrinsics=K, prompt_kind="global")
        with pytest.raises(GuidanceTransportError) as err:
            provider.sds_gradient(req)
        assert err.value.attempts == 2


class TestRequestValidation:
    def test_image_range(self, pose):
        K = Intrinsics(fx=5, fy=5, cx=2, cy=2, width=4, height=4)
        with pytest.raises(GuidanceValidationError):
            GuidanceRequest(image=np.full((4, 4, 3), 2.0), pose=pose, intrinsics=K,
                            prompt_kind="global")

    def test_noise_level_range(self, pose):
        K = Intrinsics(fx=5, fy=5, cx=2, cy=2, width=4, height=4)
        with pytest.raises(GuidanceValidationError):
            GuidanceRequest(image=np.zeros((4, 4, 3)), pose=pose, intrinsics=K,
                            prompt_kind="global", noise_level=1.5)

    def test_prompt_kind(self, pose):
        K = Intrinsics(fx=5, fy=5, cx=2, cy=2, width=4, height=4)
        with pytest.raises(GuidanceValidationError):
            GuidanceRequest(image=np.zeros((4, 4, 3)), pose=pose, intrinsics=K,
                            prompt_kind="banana")
