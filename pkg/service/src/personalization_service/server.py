"""HTTP guidance endpoint.

POST /v1/guidance with the JSON envelope used by the editor:
{request_id, kind: sds|denoise|attention, prompt_kind, pose: {quat, trans,
intrinsics}, noise_level, image: base64 float32 h*w*3, width, height}.

sds returns w(t) * (predicted noise - added noise) mapped to pixel space
through the latent codec adjoint; denoise runs short DDIM from the
requested noise level; attention returns the object keyword's map at
16x16. Errors are JSON {code, message}: 400 for bad requests, 503 when no
personalized model is loaded.
"""

import time

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import diffusion
from .model import tokenize
from .personalize import ATTENTION_RES
from .wire import WireError, decode_f32, encode_f32

SDS_T_RANGE = (0.02, 0.98)
ATTENTION_T = 0.3


def _error(status, code, message):
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(state, seed=0):
    app = FastAPI(title="personalization guidance service")
    gen = torch.Generator().manual_seed(seed)

    def ready():
        return state is not None and state.prompts is not None

    def prompt_ids(prompt_kind):
        text = {
            "global": state.prompts["global_prompt"],
            "local": state.prompts["local_prompt"],
            "reference": state.prompts["reference_prompt"],
        }[prompt_kind]
        return tokenize(text)

    @app.post("/v1/guidance")
    async def guidance(request: Request):
        start = time.perf_counter()
        try:
            env = await request.json()
        except Exception:
            return _error(400, "bad_request", "body is not JSON")

        kind = env.get("kind")
        if kind not in ("sds", "denoise", "attention"):
            return _error(400, "bad_kind", f"unknown kind {kind!r}")
        if not ready():
            return _error(503, "not_loaded", "no personalized model is loaded")

        for key in ("image", "width", "height", "pose", "prompt_kind"):
            if key not in env:
                return _error(400, "bad_request", f"missing field {key!r}")
        prompt_kind = env["prompt_kind"]
        if prompt_kind not in ("global", "local", "reference"):
            return _error(400, "bad_request", f"unknown prompt kind {prompt_kind!r}")

        try:
            h, w = int(env["height"]), int(env["width"])
            image = decode_f32(env["image"], (h, w, 3))
            pose = env["pose"]
            pose_vec = torch.tensor(
                [list(pose["quat"]) + list(pose["trans"])], dtype=torch.float32,
            )
        except (WireError, KeyError, TypeError, ValueError) as exc:
            return _error(400, "bad_request", str(exc))
        if image.min() < -1e-6 or image.max() > 1.0 + 1e-6:
            return _error(400, "bad_request", "image values must lie in [0, 1]")

        noise_level = env.get("noise_level")
        if noise_level is not None and not 0.0 < float(noise_level) < 1.0:
            return _error(400, "bad_request", "noise_level must lie in (0, 1)")

        model = state.model
        codec = state.codec
        z0 = codec.encode(image)

        try:
            if kind == "sds":
                if prompt_kind not in ("global", "local"):
                    return _error(400, "bad_request", "sds takes the global or local prompt")
                t_used = (float(noise_level) if noise_level is not None
                          else float(torch.rand(1, generator=gen) * (SDS_T_RANGE[1] - SDS_T_RANGE[0]) + SDS_T_RANGE[0]))
                ids, _ = prompt_ids(prompt_kind)
                eps = torch.randn(z0.shape, generator=gen)
                z_t = torch.as_tensor(diffusion.q_sample(z0.numpy(), t_used, eps.numpy()),
                                      dtype=torch.float32)
                with torch.no_grad():
                    eps_hat = model(z_t.unsqueeze(0), t_used, pose_vec, ids)[0]
                lat_grad = diffusion.sds_weight(t_used) * (eps_hat - eps)
                payload = codec.decode_np(lat_grad, size=(h, w))
            elif kind == "denoise":
                t_used = float(noise_level) if noise_level is not None else 0.05
                ids, _ = prompt_ids(prompt_kind)
                eps = torch.randn(z0.shape, generator=gen)
                z_t = torch.as_tensor(diffusion.q_sample(z0.numpy(), t_used, eps.numpy()),
                                      dtype=torch.float32)
                steps = max(2, int(round(t_used * 20)))
                z_out = diffusion.ddim_denoise(model, z_t, t_used, pose_vec, ids,
                                               steps=steps)
                payload = np.clip(codec.decode_np(z_out, size=(h, w)), 0.0, 1.0)
            else:
                keyword = state.prompts["object_keyword"].lower()
                ids, words = prompt_ids("global")
                if keyword not in words:
                    return _error(400, "bad_request",
                                  f"keyword {keyword!r} not tokenizable from the prompt")
                eps = torch.randn(z0.shape, generator=gen)
                z_t = torch.as_tensor(
                    diffusion.q_sample(z0.numpy(), ATTENTION_T, eps.numpy()),
                    dtype=torch.float32,
                )
                with torch.no_grad():
                    model(z_t.unsqueeze(0), ATTENTION_T, pose_vec, ids)
                amap = model.attention_for_token(words, keyword, z0.shape[1:])
                amap = torch.nn.functional.interpolate(
                    amap[None, None], size=ATTENTION_RES, mode="bilinear",
                    align_corners=False,
                )[0, 0].clamp(0.0, 1.0)
                t_used = None
                payload = amap.numpy().astype(np.float64)
        except KeyError as exc:
            return _error(400, "bad_request", str(exc))

        out_h, out_w = payload.shape[:2]
        return {
            "request_id": env.get("request_id"),
            "kind": kind,
            "payload": encode_f32(payload),
            "width": int(out_w),
            "height": int(out_h),
            "t_used": t_used,
            "elapsed_ms": 1000.0 * (time.perf_counter() - start),
        }

    return app
