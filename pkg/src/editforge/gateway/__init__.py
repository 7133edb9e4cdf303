"""Clients for remote model endpoints, plus a deterministic mock bound through the same interface."""
from .client import CallTrace, Endpoint, chat, edit_image, embed_face, score_aesthetic
from .config import ROLES, EndpointConfig
from .jsonx import extract_json_array, extract_json_object
from .messages import ChatRequest, EditRequest, ImagePart, ImageQuery, TextPart, request_digest
from .mock import MockResponse, MockTransport, mock_bind
from .store import ArtifactStore
from .transport import HttpTransport, RawResponse, TransientError

__all__ = [
    "ArtifactStore",
    "CallTrace",
    "ChatRequest",
    "EditRequest",
    "Endpoint",
    "EndpointConfig",
    "HttpTransport",
    "ImagePart",
    "ImageQuery",
    "MockResponse",
    "MockTransport",
    "ROLES",
    "RawResponse",
    "TextPart",
    "TransientError",
    "chat",
    "edit_image",
    "embed_face",
    "extract_json_array",
    "extract_json_object",
    "mock_bind",
    "request_digest",
    "score_aesthetic",
]
