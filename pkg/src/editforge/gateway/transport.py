"""Wire-level transports. Each turns a request value into a raw HTTP-like response."""
from __future__ import annotations

import base64
from dataclasses import dataclass, field

import httpx

from .config import EndpointConfig
from .messages import ChatRequest, EditRequest, ImageQuery, TextPart


class TransientError(Exception):
    """Timeout or connection failure; retried like a 5xx."""


@dataclass(frozen=True)
class RawResponse:
    status: int
    body: bytes = b""
    content_type: str = "application/json"
    headers: dict = field(default_factory=dict)


def chat_payload(req: ChatRequest, model_name: str) -> dict:
    """OpenAI-compatible chat-completions body."""
    messages = []
    if req.system:
        messages.append({"role": "system", "content": req.system})
    content = []
    for part in req.parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        else:
            content.append({"type": "image_url", "image_url": {"url": part.wire_url()}})
    messages.append({"role": "user", "content": content})
    return {
        "model": model_name,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }


def edit_payload(req: EditRequest, model_name: str) -> dict:
    return {
        "model": model_name,
        "image": base64.b64encode(req.source.read_bytes()).decode("ascii"),
        "prompt": req.instruction,
        "seed": req.seed,
    }


def query_payload(req: ImageQuery, model_name: str) -> dict:
    return {
        "model": model_name,
        "task": req.task,
        "image": base64.b64encode(req.image.read_bytes()).decode("ascii"),
    }


class HttpTransport:
    """httpx-backed transport; chat goes to ``<base_url>/chat/completions``, the rest to ``base_url``."""

    def __init__(self, client: httpx.Client | None = None):
        self._client = client or httpx.Client()

    def send(self, request, cfg: EndpointConfig) -> RawResponse:
        base = cfg.base_url.rstrip("/")
        if isinstance(request, ChatRequest):
            url, payload = f"{base}/chat/completions", chat_payload(request, cfg.model_name)
        elif isinstance(request, EditRequest):
            url, payload = base, edit_payload(request, cfg.model_name)
        elif isinstance(request, ImageQuery):
            url, payload = base, query_payload(request, cfg.model_name)
        else:
            raise TypeError(f"unsupported request type {type(request).__name__}")
        headers = {"Authorization": f"Bearer {cfg.api_key}"} if cfg.api_key else {}
        try:
            resp = self._client.post(url, json=payload, headers=headers, timeout=cfg.timeout)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientError(str(exc) or type(exc).__name__) from exc
        return RawResponse(
            status=resp.status_code,
            body=resp.content,
            content_type=resp.headers.get("content-type", ""),
            headers=dict(resp.headers),
        )

    def close(self):
        self._client.close()
