"""Pull a JSON object out of a model reply that may wrap it in prose or code fences."""
from __future__ import annotations

import json

from ..errors import DuplicateTopLevel, NoJsonFound

_decoder = json.JSONDecoder()


def _objects(reply: str):
    pos = reply.find("{")
    while pos != -1:
        try:
            value, end = _decoder.raw_decode(reply, pos)
        except json.JSONDecodeError:
            pos = reply.find("{", pos + 1)
            continue
        if isinstance(value, dict):
            yield value, end
            pos = reply.find("{", end)
        else:
            pos = reply.find("{", pos + 1)


def extract_json_object(reply: str, strict: bool = False) -> dict:
    """Return the first well-formed JSON object in ``reply``.

    Scanning starts at each ``{`` in turn, so fences and surrounding prose are
    skipped. When several disjoint objects are present the first one wins; with
    ``strict=True`` that situation raises DuplicateTopLevel instead.
    """
    found = _objects(reply)
    try:
        value, _ = next(found)
    except StopIteration:
        raise NoJsonFound("no JSON object in reply") from None
    if strict and next(found, None) is not None:
        raise DuplicateTopLevel("reply contains more than one top-level JSON object")
    return value


def extract_json_array(reply: str) -> list:
    """First well-formed JSON array in ``reply``; used for generator replies."""
    pos = reply.find("[")
    while pos != -1:
        try:
            value, _ = _decoder.raw_decode(reply, pos)
        except json.JSONDecodeError:
            pos = reply.find("[", pos + 1)
            continue
        if isinstance(value, list):
            return value
        pos = reply.find("[", pos + 1)
    raise NoJsonFound("no JSON array in reply")
