"""Endpoint client: retries, backoff, rate limiting and in-flight caps over any transport."""
from __future__ import annotations

import base64
import binascii
import json
import logging
import threading
import time
from dataclasses import dataclass

from ..errors import BadRequest, DecodeFailure, Exhausted, MalformedReply
from ..models import ImageRef
from .config import EndpointConfig
from .messages import ChatRequest, EditRequest, ImageQuery
from .store import ArtifactStore
from .transport import HttpTransport, RawResponse, TransientError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CallTrace:
    attempts: int
    delays: tuple
    status: int | None


def is_transient(status: int) -> bool:
    return status == 429 or status >= 500


class Endpoint:
    """One remote (or mock-bound) model endpoint.

    Safe to share between threads: the in-flight cap and rate limit apply to all
    callers of the same instance. ``sleep`` and ``clock`` are injectable so tests
    can run the retry schedule without waiting.
    """

    def __init__(self, config: EndpointConfig, transport=None, name: str = "", sleep=time.sleep, clock=time.monotonic):
        self.config = config
        self.name = name or config.model_name or config.base_url
        self.transport = transport if transport is not None else HttpTransport()
        self._sleep = sleep
        self._clock = clock
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._rate_lock = threading.Lock()
        self._next_slot = 0.0
        self._trace_lock = threading.Lock()
        self.traces: list[CallTrace] = []

    @property
    def request_count(self) -> int:
        return sum(t.attempts for t in self.traces)

    def _wait_for_rate_slot(self):
        if not self.config.rate_limit:
            return
        interval = 1.0 / self.config.rate_limit
        with self._rate_lock:
            now = self._clock()
            slot = max(now, self._next_slot)
            self._next_slot = slot + interval
        if slot > now:
            self._sleep(slot - now)

    def _record(self, trace: CallTrace):
        with self._trace_lock:
            self.traces.append(trace)

    def send(self, request) -> RawResponse:
        cfg = self.config
        delays = []
        last_error = None
        last_status = None
        for attempt in range(cfg.max_retries + 1):
            self._wait_for_rate_slot()
            try:
                with self._slots:
                    resp = self.transport.send(request, cfg)
            except TransientError as exc:
                last_error, last_status = str(exc), None
            else:
                last_status = resp.status
                if 200 <= resp.status < 300:
                    self._record(CallTrace(attempt + 1, tuple(delays), resp.status))
                    return resp
                if not is_transient(resp.status):
                    self._record(CallTrace(attempt + 1, tuple(delays), resp.status))
                    raise BadRequest(f"{self.name}: HTTP {resp.status}: {resp.body[:200]!r}", status=resp.status)
                last_error = f"HTTP {resp.status}"
            if attempt < cfg.max_retries:
                delay = cfg.backoff_base * (2 ** attempt)
                delays.append(delay)
                logger.debug("%s: %s, retrying in %.3fs", self.name, last_error, delay)
                self._sleep(delay)
        self._record(CallTrace(cfg.max_retries + 1, tuple(delays), last_status))
        raise Exhausted(
            f"{self.name}: gave up after {cfg.max_retries + 1} attempts ({last_error})",
            attempts=cfg.max_retries + 1,
            last_error=last_error,
        )

    def chat(self, req: ChatRequest) -> str:
        return parse_chat_reply(self.send(req).body)

    def edit(self, req: EditRequest, store: ArtifactStore) -> ImageRef:
        return store.put(parse_image_reply(self.send(req)))

    def query(self, req: ImageQuery) -> dict:
        return _json_body(self.send(req).body)


def _json_body(body: bytes) -> dict:
    try:
        doc = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedReply(f"reply body is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedReply("reply body is not a JSON object")
    return doc


def parse_chat_reply(body: bytes) -> str:
    doc = _json_body(body)
    try:
        content = doc["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedReply("reply has no choices[0].message.content") from exc
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str):
        raise MalformedReply("message content is not text")
    return content


def parse_image_reply(resp: RawResponse) -> bytes:
    """Accept raw image bytes, ``{"image": <b64>}`` or ``{"data": [{"b64_json": <b64>}]}``."""
    if resp.content_type.startswith("image/"):
        return resp.body
    try:
        doc = _json_body(resp.body)
    except MalformedReply:
        raise DecodeFailure("edit reply is neither an image nor JSON") from None
    encoded = doc.get("image")
    if encoded is None:
        try:
            encoded = doc["data"][0]["b64_json"]
        except (KeyError, IndexError, TypeError):
            raise DecodeFailure("edit reply JSON carries no image field") from None
    if isinstance(encoded, str) and encoded.startswith("data:"):
        encoded = encoded.split(",", 1)[-1]
    try:
        return base64.b64decode(encoded, validate=True)
    except (binascii.Error, TypeError, ValueError) as exc:
        raise DecodeFailure(f"edit reply image is not valid base64: {exc}") from exc


def chat(endpoint: Endpoint, req: ChatRequest) -> str:
    return endpoint.chat(req)


def edit_image(endpoint: Endpoint, req: EditRequest, store: ArtifactStore) -> ImageRef:
    return endpoint.edit(req, store)


def score_aesthetic(endpoint: Endpoint, image: ImageRef) -> float:
    doc = endpoint.query(ImageQuery(image, "aesthetic"))
    try:
        return float(doc["score"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedReply("aesthetic reply has no numeric 'score'") from exc


def embed_face(endpoint: Endpoint, image: ImageRef) -> list:
    doc = endpoint.query(ImageQuery(image, "face_embed"))
    vec = doc.get("embedding")
    if not isinstance(vec, list) or not vec:
        raise MalformedReply("face_embed reply has no 'embedding' list")
    try:
        return [float(v) for v in vec]
    except (TypeError, ValueError) as exc:
        raise MalformedReply("embedding contains non-numeric values") from exc
