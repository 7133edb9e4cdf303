"""Deterministic in-process transport used by tests and ``--mock`` runs.

Replies are looked up by request digest. A behavior is one of:

* ``str``: chat reply text (or, for editors, ``"identity"`` / ``"invert"``)
* ``bytes``: image bytes returned by an editor
* ``dict``: JSON body for scorer endpoints
* ``int``: bare HTTP status with an error body
* ``MockResponse``: a fully specified raw response
* an exception instance: raised from the transport (use TransientError for timeouts)
* a callable ``f(request) -> behavior``
* a list of the above, consumed in order; the last entry repeats once exhausted

Unmatched digests fall through to ``responder`` and then to a role default
computed from the digest, so two runs over the same request stream see the same
replies.
"""
from __future__ import annotations

import io
import json
import random
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from ..taxonomy import default_taxonomy
from .messages import EditRequest, ImageQuery, request_digest
from .transport import RawResponse


@dataclass(frozen=True)
class MockResponse:
    status: int = 200
    body: bytes = b""
    content_type: str = "application/json"


@dataclass(frozen=True)
class RecordedCall:
    digest: str
    request: object


def chat_body(text: str) -> bytes:
    doc = {"object": "chat.completion", "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}
    return json.dumps(doc, ensure_ascii=False).encode("utf-8")


def invert_image(data: bytes) -> bytes:
    with Image.open(io.BytesIO(data)) as im:
        im.load()
        mode = im.mode if im.mode in ("L", "RGB", "RGBA") else "RGB"
        arr = np.asarray(im.convert(mode)).copy()
    if mode == "RGBA":
        arr[..., :3] = 255 - arr[..., :3]
    else:
        arr = 255 - arr
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def _instruction_from(text: str) -> str:
    marker = "**Editing instruction**:"
    if marker in text:
        return text.split(marker, 1)[1].strip().splitlines()[0].strip()
    return ""


def default_reply(role: str, request, digest: str):
    """Role-aware reply derived only from the request digest."""
    rng = random.Random(digest)
    if isinstance(request, EditRequest):
        return "identity"
    if isinstance(request, ImageQuery):
        if request.task == "face_embed":
            vec = [rng.gauss(0.0, 1.0) for _ in range(8)]
            norm = sum(v * v for v in vec) ** 0.5
            return {"embedding": [v / norm for v in vec]}
        return {"score": round(5.0 + rng.random() * 5.0, 4)}
    if role == "generator":
        subtasks = rng.sample(list(default_taxonomy()), rng.randint(3, 7))
        items = [{"subtask": s.name, "instruction": f"Apply a {s.name.lower()} edit ({digest[:6]}-{i})."}
                 for i, s in enumerate(subtasks)]
        return json.dumps(items)
    if role == "verifier":
        original = _instruction_from(request.text) or "Apply the edit."
        changed = rng.random() < 0.75
        return json.dumps({"is_changed": changed, "instruction": original if changed else ""})
    if role == "judge":
        return json.dumps({"score": rng.randint(0, 10), "reason": f"mock verdict {digest[:8]}"})
    return f"mock reply {digest[:16]}"


class MockTransport:
    def __init__(self, behaviors: Optional[dict] = None, responder=None, role: str = "generic",
                 model_name: str = "", latency: float = 0.0):
        self.behaviors = dict(behaviors or {})
        self.responder = responder
        self.role = role
        self.model_name = model_name
        self.latency = latency
        self.calls: list[RecordedCall] = []
        self.in_flight = 0
        self.high_water = 0
        self._cursors: dict = {}
        self._lock = threading.Lock()

    def digest(self, request) -> str:
        return request_digest(request, self.model_name)

    def _pick(self, key, behavior):
        if isinstance(behavior, list):
            with self._lock:
                i = self._cursors.get(key, 0)
                self._cursors[key] = i + 1
            return behavior[min(i, len(behavior) - 1)]
        return behavior

    def _resolve(self, request, digest):
        if digest in self.behaviors:
            behavior = self._pick(digest, self.behaviors[digest])
        elif self.responder is not None:
            behavior = self._pick("__responder__", self.responder)
        else:
            behavior = default_reply(self.role, request, digest)
        while callable(behavior) and not isinstance(behavior, BaseException):
            behavior = behavior(request)
        return behavior

    def _to_response(self, request, behavior) -> RawResponse:
        if isinstance(behavior, BaseException):
            raise behavior
        if isinstance(behavior, MockResponse):
            return RawResponse(behavior.status, behavior.body, behavior.content_type)
        if isinstance(behavior, bool) or behavior is None:
            raise TypeError(f"unsupported mock behavior {behavior!r}")
        if isinstance(behavior, int):
            return RawResponse(behavior, json.dumps({"error": {"code": behavior}}).encode())
        if isinstance(request, EditRequest):
            if behavior == "identity":
                return RawResponse(200, request.source.read_bytes(), "image/png")
            if behavior == "invert":
                return RawResponse(200, invert_image(request.source.read_bytes()), "image/png")
            if isinstance(behavior, bytes):
                return RawResponse(200, behavior, "image/png")
        if isinstance(behavior, dict):
            return RawResponse(200, json.dumps(behavior).encode())
        if isinstance(behavior, bytes):
            return RawResponse(200, behavior, "application/octet-stream")
        if isinstance(behavior, str):
            return RawResponse(200, chat_body(behavior))
        raise TypeError(f"unsupported mock behavior {behavior!r}")

    def send(self, request, cfg) -> RawResponse:
        digest = self.digest(request)
        with self._lock:
            self.calls.append(RecordedCall(digest, request))
            self.in_flight += 1
            self.high_water = max(self.high_water, self.in_flight)
        try:
            if self.latency:
                time.sleep(self.latency)
            return self._to_response(request, self._resolve(request, digest))
        finally:
            with self._lock:
                self.in_flight -= 1


def mock_bind(behaviors: Optional[dict] = None, role: str = "generic", responder=None,
              config=None, **endpoint_kwargs):
    """Return an Endpoint whose traffic stays in-process and is recorded on ``endpoint.transport``."""
    from .client import Endpoint
    from .config import EndpointConfig

    cfg = config or EndpointConfig(base_url=f"mock://{role}", model_name=f"mock-{role}", backoff_base=0.001)
    transport = MockTransport(behaviors, responder=responder, role=role, model_name=cfg.model_name)
    return Endpoint(cfg, transport=transport, name=role, **endpoint_kwargs)
