"""Wire format for the bridge protocol, version 1.

Requests and responses are JSON objects over HTTP.  Tensors travel as
TensorPayload objects: {"dtype": "f32", "shape": [...], "data": base64
of little-endian row-major float32 bytes}.  Every request may carry a
client-chosen "id"; the response echoes it verbatim.  Both sides stamp
the X-NeRDi-Proto header with the protocol version.
"""

from __future__ import annotations

import base64

import numpy as np

PROTO_HEADER = "X-NeRDi-Proto"
PROTO_VERSION = "1"

ERROR_MALFORMED = "malformed"
ERROR_SHAPE = "shape"
ERROR_BUSY = "busy"
ERROR_UNSUPPORTED = "unsupported"
ERROR_INTERNAL = "internal"


def encode_tensor(arr) -> dict:
    """Array -> TensorPayload dict; bytes are little-endian C order."""
    arr = np.asarray(arr, dtype="<f4")  # tobytes() emits C order regardless
    return {
        "dtype": "f32",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_tensor(payload) -> np.ndarray:
    """TensorPayload dict -> float32 array.

    Raises ValueError when the payload is not an object, the dtype is
    not "f32", the fields are unreadable, or the byte length does not
    equal 4 * product(shape).
    """
    if not isinstance(payload, dict):
        raise ValueError("tensor payload must be an object")
    if payload.get("dtype") != "f32":
        raise ValueError(f"unsupported dtype {payload.get('dtype')!r}")
    try:
        shape = tuple(int(s) for s in payload["shape"])
        raw = base64.b64decode(payload["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"unreadable tensor payload: {exc}") from exc
    expect = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
    if len(raw) != expect:
        raise ValueError(
            f"payload byte length {len(raw)} does not match shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def error_body(request_id, code: str, message: str) -> dict:
    """The error response shape: {"id": ..., "error": {code, message}}."""
    return {"id": request_id, "error": {"code": code, "message": message}}
