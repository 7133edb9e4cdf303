"""Request values sent to remote endpoints, and their canonical digests."""
from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
from dataclasses import dataclass
from typing import Optional, Union

from ..models import ImageRef


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: ImageRef
    encoding: str = "base64"
    media_type: str = ""

    def __post_init__(self):
        if self.encoding not in ("base64", "url"):
            raise ValueError(f"image encoding must be 'base64' or 'url', got {self.encoding!r}")
        if not self.media_type:
            guessed = mimetypes.guess_type(self.image.uri)[0] or "image/png"
            object.__setattr__(self, "media_type", guessed)

    def wire_url(self) -> str:
        if self.encoding == "url":
            return self.image.uri
        data = base64.b64encode(self.image.read_bytes()).decode("ascii")
        return f"data:{self.media_type};base64,{data}"


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatRequest:
    parts: tuple
    system: Optional[str] = None
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("a chat request needs at least one part")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def images(self) -> list:
        return [p.image for p in self.parts if isinstance(p, ImagePart)]

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    def with_extra_text(self, text: str) -> "ChatRequest":
        return ChatRequest(self.parts + (TextPart(text),), self.system, self.temperature, self.max_tokens)

    def canonical(self) -> dict:
        parts = []
        for p in self.parts:
            if isinstance(p, TextPart):
                parts.append({"text": p.text})
            else:
                parts.append({"image": p.image.content_hash, "media_type": p.media_type})
        return {
            "kind": "chat",
            "system": self.system,
            "parts": parts,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class EditRequest:
    source: ImageRef
    instruction: str
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("edit instruction must be non-empty")

    def canonical(self) -> dict:
        return {"kind": "edit", "source": self.source.content_hash, "instruction": self.instruction, "seed": self.seed}


@dataclass(frozen=True)
class ImageQuery:
    """Single-image request to a scorer endpoint (aesthetic score or face embedding)."""

    image: ImageRef
    task: str

    def canonical(self) -> dict:
        return {"kind": self.task, "image": self.image.content_hash}


def request_digest(request, model_name: str = "") -> str:
    """sha256 over the canonical JSON form of a request; images enter by content hash."""
    doc = dict(request.canonical(), model=model_name)
    blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
