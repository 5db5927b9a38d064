"""Guidance boundary: the contract between the optimizer and a diffusion
service, one analytic mock provider, and the HTTP client.

The optimizer never sees diffusion internals. A provider answers three
kinds of requests against its active prompt set:

  sds        pixel-space gradient already mapped through the image encoder,
             ready to feed the renderer adjoint
  denoise    lightly noised then denoised copy of a rendered image
  attention  normalized cross-attention response of the object keyword

The wire protocol is a JSON envelope over POST /v1/guidance with images as
base64 little-endian float32 (see `request_envelope`), so any service that
speaks it can replace the mock.
"""

import base64
import time
import uuid
from dataclasses import dataclass

import numpy as np

from .errors import (
    GuidanceError,
    GuidanceTransportError,
    GuidanceValidationError,
    ValidationError,
)
from .losses import AttentionMap, resample_bilinear
from .renderer import render

PROMPT_KINDS = ("global", "local", "reference")
GUIDANCE_PATH = "/v1/guidance"
SDS_T_RANGE = (0.02, 0.98)


@dataclass
class PromptSet:
    """Prompt bundle around two special tokens.

    `scene_token` marks the personalized scene concept, `object_token` the
    reference object. The global prompt must mention both, the local prompt
    only the object.
    """

    scene_prompt: str
    global_prompt: str
    local_prompt: str
    reference_prompt: str
    object_keyword: str
    scene_token: str = "sks"
    object_token: str = "olx"

    def __post_init__(self):
        if self.scene_token not in self.global_prompt or self.object_token not in self.global_prompt:
            raise ValidationError("global prompt must contain both special tokens")
        if self.object_token not in self.local_prompt:
            raise ValidationError("local prompt must contain the object token")
        if self.scene_token in self.local_prompt:
            raise ValidationError("local prompt must not contain the scene token")

    def to_dict(self):
        return {
            "scene_prompt": self.scene_prompt,
            "global_prompt": self.global_prompt,
            "local_prompt": self.local_prompt,
            "reference_prompt": self.reference_prompt,
            "object_keyword": self.object_keyword,
            "scene_token": self.scene_token,
            "object_token": self.object_token,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GuidanceRequest:
    image: np.ndarray
    pose: object                 # CameraPose
    intrinsics: object           # Intrinsics
    prompt_kind: str
    noise_level: float = None    # None: provider samples its own timestep

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise GuidanceValidationError(f"image must be (h, w, 3), got {self.image.shape}")
        if self.image.min() < -1e-9 or self.image.max() > 1.0 + 1e-9:
            raise GuidanceValidationError("image values must lie in [0, 1]")
        if self.prompt_kind not in PROMPT_KINDS:
            raise GuidanceValidationError(f"unknown prompt kind {self.prompt_kind!r}")
        if self.noise_level is not None and not 0.0 < self.noise_level < 1.0:
            raise GuidanceValidationError("noise_level must lie in (0, 1)")


# ---------------------------------------------------------------------------
# wire encoding

def encode_image_f32(image):
    arr = np.ascontiguousarray(image, dtype="<f4")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_image_f32(payload, shape):
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise GuidanceValidationError(f"payload holds {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise GuidanceValidationError("non-finite values in payload")
    return arr


def request_envelope(kind, req, request_id=None):
    h, w = req.image.shape[:2]
    return {
        "request_id": request_id or uuid.uuid4().hex,
        "kind": kind,
        "prompt_kind": req.prompt_kind,
        "pose": {
            "quat": req.pose.rotation.tolist(),
            "trans": req.pose.translation.tolist(),
            "intrinsics": req.intrinsics.to_dict(),
        },
        "noise_level": req.noise_level,
        "image": encode_image_f32(req.image),
        "width": w,
        "height": h,
    }


def payload_shape(kind, height, width):
    return (height, width) if kind == "attention" else (height, width, 3)


# ---------------------------------------------------------------------------
# providers

class MockGuidanceProvider:
    """Analytic stand-in for the diffusion service.

    Holds target scenes and answers every request in closed form:

      sds        weight * (image - render(target at pose)); a degenerate
                 score gradient whose fixed point is the target image
      denoise    (1 - t0) * image + t0 * render(target at pose)
      attention  alpha of the foreground-target render, optionally
                 resampled to a coarse attention resolution

    Deterministic: the sampled timestep stream depends only on `seed`.
    """

    def __init__(self, target_full, target_foreground=None, *, background=(0.0, 0.0, 0.0),
                 weight=1.0, seed=0, attention_resolution=None):
        self.target_full = target_full
        self.target_foreground = target_foreground
        self.background = np.asarray(background, dtype=np.float64)
        self.weight = float(weight)
        self.attention_resolution = attention_resolution
        self._rng = np.random.default_rng(seed)
        self.history = []

    def _target_image(self, kind, pose, K):
        if kind == "local":
            if self.target_foreground is None:
                raise GuidanceError("mock has no foreground target for local prompts")
            return render(self.target_foreground, pose, K).rgb
        return render(self.target_full, pose, K, background=self.background).rgb

    def sds_gradient(self, req):
        if req.prompt_kind not in ("global", "local"):
            raise GuidanceValidationError("sds requests take the global or local prompt")
        start = time.perf_counter()
        t_used = req.noise_level if req.noise_level is not None else float(
            self._rng.uniform(*SDS_T_RANGE)
        )
        target = self._target_image(req.prompt_kind, req.pose, req.intrinsics)
        grad = self.weight * (req.image - target)
        self.history.append({
            "kind": "sds", "prompt_kind": req.prompt_kind, "t_used": t_used,
            "elapsed_ms": 1000.0 * (time.perf_counter() - start),
        })
        return grad

    def denoise(self, image, t0, prompt_kind, pose, intrinsics):
        if not 0.0 < t0 < 1.0:
            raise GuidanceValidationError("t0 must lie in (0, 1)")
        start = time.perf_counter()
        target = self._target_image(prompt_kind, pose, intrinsics)
        out = (1.0 - t0) * np.asarray(image, dtype=np.float64) + t0 * target
        self.history.append({
            "kind": "denoise", "prompt_kind": prompt_kind, "t_used": t0,
            "elapsed_ms": 1000.0 * (time.perf_counter() - start),
        })
        return out

    def attention_map(self, image, object_keyword, pose, intrinsics):
        if not object_keyword or not object_keyword.strip():
            raise GuidanceValidationError("object keyword is empty")
        start = time.perf_counter()
        if self.target_foreground is None or len(self.target_foreground) == 0:
            values = np.zeros(np.asarray(image).shape[:2])
        else:
            values = render(self.target_foreground, pose, intrinsics).alpha
        if self.attention_resolution is not None:
            values = np.clip(resample_bilinear(values, self.attention_resolution), 0.0, 1.0)
        self.history.append({
            "kind": "attention", "prompt_kind": "global", "t_used": None,
            "elapsed_ms": 1000.0 * (time.perf_counter() - start),
        })
        return AttentionMap(values)


class RemoteGuidanceProvider:
    """HTTP client for a personalization service speaking the wire protocol."""

    def __init__(self, base_url, timeout=30.0, retries=2, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = float(timeout)
        self.retries = int(retries)
        self._session = session or requests.Session()
        self.history = []

    def _post(self, envelope):
        import requests

        url = self.base_url + GUIDANCE_PATH
        last = None
        for attempt in range(1, self.retries + 2):
            try:
                resp = self._session.post(url, json=envelope, timeout=self.timeout)
                break
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                time.sleep(min(0.25 * attempt, 1.0))
        else:
            raise GuidanceTransportError(
                f"guidance service unreachable at {url}: {last}",
                attempts=self.retries + 1, retry_after=1.0,
            )
        if resp.status_code != 200:
            try:
                body = resp.json()
            except ValueError:
                body = {"code": "http_error", "message": resp.text[:200]}
            raise GuidanceError(f"{body.get('code', 'error')}: {body.get('message', '')}")
        return resp.json()

    def _round_trip(self, kind, req):
        envelope = request_envelope(kind, req)
        start = time.perf_counter()
        body = self._post(envelope)
        if body.get("request_id") != envelope["request_id"]:
            raise GuidanceValidationError("response does not match request id")
        shape = payload_shape(kind, envelope["height"], envelope["width"])
        payload = decode_image_f32(body["payload"], shape)
        self.history.append({
            "kind": kind, "prompt_kind": req.prompt_kind,
            "t_used": body.get("t_used"),
            "elapsed_ms": 1000.0 * (time.perf_counter() - start),
        })
        return payload

    def sds_gradient(self, req):
        if req.prompt_kind not in ("global", "local"):
            raise GuidanceValidationError("sds requests take the global or local prompt")
        return self._round_trip("sds", req)

    def denoise(self, image, t0, prompt_kind, pose, intrinsics):
        req = GuidanceRequest(image=image, pose=pose, intrinsics=intrinsics,
                              prompt_kind=prompt_kind, noise_level=t0)
        return self._round_trip("denoise", req)

    def attention_map(self, image, object_keyword, pose, intrinsics):
        req = GuidanceRequest(image=image, pose=pose, intrinsics=intrinsics,
                              prompt_kind="global")
        values = self._round_trip("attention", req)
        return AttentionMap(np.clip(values, 0.0, 1.0))


def provider_from_spec(spec, fixture_registry=None, **mock_kwargs):
    """Build a provider from a manifest string: mock:<fixture> or remote:<url>."""
    if spec.startswith("remote:"):
        return RemoteGuidanceProvider(spec[len("remote:"):])
    if spec.startswith("mock:"):
        from . import fixtures

        registry = fixture_registry or fixtures.FIXTURES
        name = spec[len("mock:"):]
        if name not in registry:
            raise GuidanceValidationError(f"unknown mock fixture {name!r}")
        fx = registry[name]()
        return MockGuidanceProvider(fx.target_full, fx.target_foreground, **mock_kwargs)
    raise GuidanceValidationError(f"unknown provider spec {spec!r}")


# ---------------------------------------------------------------------------
# in-process envelope dispatch and the shared conformance suite

def serve_envelope(provider, envelope, object_keyword="object"):
    """Answer one wire envelope with an in-process provider.

    Returns (status_code, response_dict) matching what an HTTP service
    would produce; used to run the protocol conformance suite against the
    mock and by test servers.
    """
    from .camera import CameraPose, Intrinsics

    start = time.perf_counter()
    try:
        kind = envelope.get("kind")
        if kind not in ("sds", "denoise", "attention"):
            return 400, {"code": "bad_kind", "message": f"unknown kind {kind!r}"}
        for key in ("image", "width", "height", "pose", "prompt_kind"):
            if key not in envelope:
                return 400, {"code": "bad_request", "message": f"missing field {key!r}"}
        h, w = int(envelope["height"]), int(envelope["width"])
        image = decode_image_f32(envelope["image"], (h, w, 3))
        pose = CameraPose(np.asarray(envelope["pose"]["quat"]),
                          np.asarray(envelope["pose"]["trans"]))
        K = Intrinsics.from_dict(envelope["pose"]["intrinsics"])
        noise = envelope.get("noise_level")

        if kind == "sds":
            req = GuidanceRequest(image=image, pose=pose, intrinsics=K,
                                  prompt_kind=envelope["prompt_kind"], noise_level=noise)
            payload = provider.sds_gradient(req)
            t_used = provider.history[-1]["t_used"]
        elif kind == "denoise":
            t_used = noise if noise is not None else 0.05
            payload = provider.denoise(image, t_used, envelope["prompt_kind"], pose, K)
        else:
            payload = provider.attention_map(image, object_keyword, pose, K).values
            t_used = None
    except (GuidanceValidationError, ValidationError) as exc:
        return 400, {"code": "bad_request", "message": str(exc)}
    except GuidanceError as exc:
        return 500, {"code": "provider_error", "message": str(exc)}

    out_h, out_w = payload.shape[:2]
    return 200, {
        "request_id": envelope.get("request_id"),
        "kind": kind,
        "payload": encode_image_f32(payload),
        "width": int(out_w),
        "height": int(out_h),
        "t_used": t_used,
        "elapsed_ms": 1000.0 * (time.perf_counter() - start),
    }


def run_conformance(call, pose, intrinsics, rtol=1e-6):
    """Protocol conformance checks shared by the mock and real services.

    `call(envelope) -> (status, dict)` abstracts the transport. Raises
    AssertionError on the first violation; returns a report dict.
    """
    h, w = intrinsics.height, intrinsics.width
    rng = np.random.default_rng(2024)
    image = rng.uniform(0.0, 1.0, size=(h, w, 3))

    report = {}

    # encoding round trip at float32 precision
    decoded = decode_image_f32(encode_image_f32(image), (h, w, 3))
    assert np.allclose(decoded, image, atol=1e-6), "base64 float32 round trip drifted"
    report["encoding"] = "ok"

    def make(kind, prompt_kind="global", noise=None):
        req = GuidanceRequest(image=image, pose=pose, intrinsics=intrinsics,
                              prompt_kind=prompt_kind, noise_level=noise)
        return request_envelope(kind, req)

    for kind, prompt_kind in (("sds", "global"), ("sds", "local"), ("denoise", "global")):
        env = make(kind, prompt_kind, noise=0.05 if kind == "denoise" else None)
        status, body = call(env)
        assert status == 200, f"{kind}/{prompt_kind} returned {status}: {body}"
        assert body["request_id"] == env["request_id"], "request id not mirrored"
        payload = decode_image_f32(body["payload"], payload_shape(kind, h, w))
        assert np.all(np.isfinite(payload)), f"{kind} payload not finite"
        assert (body["width"], body["height"]) == (w, h)
        report[f"{kind}:{prompt_kind}"] = "ok"

    status, body = call(make("attention"))
    assert status == 200, f"attention returned {status}: {body}"
    att = decode_image_f32(body["payload"],
                           payload_shape("attention", body["height"], body["width"]))
    assert att.min() >= -rtol and att.max() <= 1.0 + rtol, "attention outside [0, 1]"
    report["attention"] = "ok"

    # denoise at vanishing noise returns the input
    env = make("denoise", noise=1e-6)
    status, body = call(env)
    assert status == 200
    out = decode_image_f32(body["payload"], (h, w, 3))
    assert np.allclose(out, image, atol=1e-3), "denoise at t0 -> 0 must return the input"
    report["denoise_identity"] = "ok"

    env = make("sds")
    env["kind"] = "definitely_not_a_kind"
    status, body = call(env)
    assert status == 400 and body.get("code") == "bad_kind", f"bad kind gave {status} {body}"
    report["bad_kind"] = "ok"

    env = make("sds")
    del env["image"]
    status, body = call(env)
    assert status == 400 and "code" in body, "malformed request must give a coded 400"
    report["malformed"] = "ok"

    return report
