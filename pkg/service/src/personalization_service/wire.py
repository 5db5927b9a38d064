"""Wire payload encoding for the guidance protocol: base64 float32 LE."""

import base64

import numpy as np


class WireError(ValueError):
    pass


def encode_f32(arr):
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload, shape):
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise WireError(f"payload is not valid base64: {exc}") from exc
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise WireError(f"payload holds {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise WireError("non-finite values in payload")
    return arr
