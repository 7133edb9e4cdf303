"""Immutable domain records exchanged between pipeline stages, scorers and the bench runner."""
from __future__ import annotations

import enum
import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import InvalidTransition
from .taxonomy import METRIC_ORDER, Metric, SubTask, Taxonomy, classify_subtask


@dataclass(frozen=True)
class ImageRef:
    uri: str
    width: int
    height: int
    content_hash: str

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if not re.fullmatch(r"[0-9a-f]{64}", self.content_hash):
            raise ValueError(f"content_hash must be a sha256 hex digest, got {self.content_hash!r}")

    @classmethod
    def from_path(cls, path: str | Path) -> "ImageRef":
        from .imaging import image_size  # imaging imports models

        data = Path(path).read_bytes()
        width, height = image_size(data)
        return cls(uri=str(path), width=width, height=height, content_hash=sha256_hex(data))

    def read_bytes(self) -> bytes:
        return Path(self.uri).read_bytes()

    def to_dict(self) -> dict:
        return {"uri": self.uri, "width": self.width, "height": self.height, "content_hash": self.content_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(uri=d["uri"], width=int(d["width"]), height=int(d["height"]), content_hash=d["content_hash"])


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Status(str, enum.Enum):
    PENDING = "pending"
    EDITED = "edited"
    VERIFIED = "verified"
    REJECTED_NO_EDIT = "rejected_no_edit"
    REJECTED_MISALIGNED = "rejected_misaligned"
    REJECTED_OTHER = "rejected_other"

    @property
    def is_rejected(self) -> bool:
        return self.value.startswith("rejected")

    @property
    def is_terminal(self) -> bool:
        return self is Status.VERIFIED or self.is_rejected


_ALLOWED = {
    Status.PENDING: {Status.EDITED, Status.REJECTED_OTHER},
    Status.EDITED: {Status.VERIFIED, Status.REJECTED_NO_EDIT, Status.REJECTED_MISALIGNED, Status.REJECTED_OTHER},
}


@dataclass(frozen=True)
class ProvenanceEntry:
    stage: str
    status: Status
    reason: str = ""

    def to_dict(self) -> dict:
        d = {"stage": self.stage, "status": self.status.value}
        if self.reason:
            d["reason"] = self.reason
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceEntry":
        return cls(stage=d["stage"], status=Status(d["status"]), reason=d.get("reason", ""))


@dataclass(frozen=True)
class Triplet:
    """<original image, instruction, edited image> plus its lifecycle state.

    ``edited`` is required for every status past Pending, with one exception: a
    triplet rejected by the editing stage itself (status RejectedOther and no
    edit ever produced) has nothing to point at.
    """

    id: str
    original: ImageRef
    instruction: str
    subtask: SubTask
    status: Status = Status.PENDING
    edited: Optional[ImageRef] = None
    refined_instruction: Optional[str] = None
    provenance: tuple = ()

    def __post_init__(self):
        if self.status is Status.PENDING and self.edited is not None:
            raise ValueError(f"{self.id}: pending triplet cannot carry an edited image")
        if self.status not in (Status.PENDING, Status.REJECTED_OTHER) and self.edited is None:
            raise ValueError(f"{self.id}: status {self.status.value} requires an edited image")
        if (self.status is Status.VERIFIED) != bool(self.refined_instruction):
            raise ValueError(f"{self.id}: refined_instruction must be set iff status is verified")

    @property
    def rejected_at_edit(self) -> bool:
        return self.status is Status.REJECTED_OTHER and self.edited is None

    def advance(self, status: Status, stage: str, reason: str = "", **changes) -> "Triplet":
        """Return a copy moved to ``status``; only forward transitions are accepted."""
        if status not in _ALLOWED.get(self.status, ()):
            raise InvalidTransition(f"{self.id}: {self.status.value} -> {status.value} is not allowed")
        entry = ProvenanceEntry(stage=stage, status=status, reason=reason)
        return replace(self, status=status, provenance=self.provenance + (entry,), **changes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "original": self.original.to_dict(),
            "edited": self.edited.to_dict() if self.edited else None,
            "instruction": self.instruction,
            "refined_instruction": self.refined_instruction,
            "subtask": self.subtask.key,
            "status": self.status.value,
            "provenance": [p.to_dict() for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, d: dict, taxonomy: Taxonomy | None = None) -> "Triplet":
        return cls(
            id=d["id"],
            original=ImageRef.from_dict(d["original"]),
            edited=ImageRef.from_dict(d["edited"]) if d.get("edited") else None,
            instruction=d["instruction"],
            refined_instruction=d.get("refined_instruction"),
            subtask=classify_subtask(d["subtask"], taxonomy),
            status=Status(d["status"]),
            provenance=tuple(ProvenanceEntry.from_dict(p) for p in d.get("provenance", ())),
        )


@dataclass(frozen=True)
class VerificationVerdict:
    is_changed: bool
    refined_instruction: str = ""
    raw_reply: str = field(default="", repr=False)
    # schema extension; the default verification prompt never sets it
    misaligned: bool = False

    def __post_init__(self):
        if self.is_changed and not self.refined_instruction.strip():
            raise ValueError("a changed verdict needs a non-empty refined instruction")


class SampleCategory(str, enum.Enum):
    """Label of a verifier training/evaluation sample."""

    NORMAL = "normal"
    NO_EDIT = "no_edit"
    HALLUCINATION = "hallucination"


@dataclass(frozen=True)
class MetricVector:
    if_score: Optional[float] = None
    nc_score: Optional[float] = None
    vq_score: Optional[float] = None
    ra_score: Optional[float] = None

    def __post_init__(self):
        for name in ("if_score", "nc_score", "vq_score", "ra_score"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 10.0):
                raise ValueError(f"{name}={v} outside [0, 10]")

    def get(self, metric: Metric) -> Optional[float]:
        return getattr(self, f"{Metric(metric).value.lower()}_score")

    def as_dict(self) -> dict:
        return {m.value: self.get(m) for m in METRIC_ORDER}

    @classmethod
    def from_scores(cls, scores: dict) -> "MetricVector":
        return cls(**{f"{Metric(k).value.lower()}_score": float(v) for k, v in scores.items()})


@dataclass(frozen=True)
class PreferencePair:
    """Logged log-probabilities of a preferred (w) and rejected (l) instruction.

    ``context_id`` identifies the image pair the instructions were conditioned on.
    """

    context_id: str
    beta: float
    logp_theta_w: float
    logp_ref_w: float
    logp_theta_l: float
    logp_ref_l: float

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        for name in ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l"):
            v = getattr(self, name)
            if not math.isfinite(v) or v > 0:
                raise ValueError(f"{name}={v} must be a finite log-probability <= 0")

    @property
    def logps(self) -> tuple:
        return (self.logp_theta_w, self.logp_ref_w, self.logp_theta_l, self.logp_ref_l)

    def to_dict(self) -> dict:
        return {
            "context_id": self.context_id,
            "beta": self.beta,
            "logp_theta_w": self.logp_theta_w,
            "logp_ref_w": self.logp_ref_w,
            "logp_theta_l": self.logp_theta_l,
            "logp_ref_l": self.logp_ref_l,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreferencePair":
        return cls(
            context_id=str(d["context_id"]),
            beta=float(d["beta"]),
            logp_theta_w=float(d["logp_theta_w"]),
            logp_ref_w=float(d["logp_ref_w"]),
            logp_theta_l=float(d["logp_theta_l"]),
            logp_ref_l=float(d["logp_ref_l"]),
        )


def _norm_token(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class AtomicTask:
    """One (object, action) pair parsed out of an instruction; tokens are normalized on construction."""

    object: str
    action: str

    def __post_init__(self):
        obj, act = _norm_token(self.object), _norm_token(self.action)
        if not obj or not act:
            raise ValueError("atomic task tokens must be non-empty after normalization")
        object.__setattr__(self, "object", obj)
        object.__setattr__(self, "action", act)
