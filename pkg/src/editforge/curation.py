"""Three-stage curation: instruction generation, editing, and unified post-verification.

Every stage appends its results to a line-delimited JSON file under the run
directory in batches, and a checkpoint is rewritten after each batch. A resumed
run reloads those files, skips finished work and, given deterministic endpoints,
produces the same final manifest as an uninterrupted run.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import imaging
from .errors import (
    BadRequest,
    ConfigInvalid,
    DecodeFailure,
    Exhausted,
    GatewayError,
    MalformedReply,
    NoJsonFound,
    ParseFailure,
    StoreUnavailable,
    TooFew,
    UnknownSubTask,
)
from .gateway import ArtifactStore, ChatRequest, EditRequest, Endpoint, ImagePart, TextPart, score_aesthetic
from .gateway.config import DEFAULT_TEMPERATURE
from .gateway.jsonx import extract_json_array, extract_json_object
from .imaging import GrayImage, SsimParams
from .models import ImageRef, Status, Triplet, VerificationVerdict
from .scoring import round_half_up
from .taxonomy import Category, SubTask, Taxonomy, default_taxonomy, load_taxonomy

logger = logging.getLogger(__name__)

STATS_SCHEMA_VERSION = 1


def _template(name: str) -> str:
    return resources.files("editforge").joinpath(f"data/prompts/{name}.txt").read_text(encoding="utf-8")


# -- stage accounting ---------------------------------------------------------


class Stage(str, enum.Enum):
    INITIAL = "initial"
    INSTRUCTION_GEN = "instruction_gen"
    EDITING_GEN = "editing_gen"
    FAILED_EDIT_FILTER = "failed_edit_filter"
    RECAPTION = "recaption"


STAGE_LABELS = {
    Stage.INITIAL: "Initial Images",
    Stage.INSTRUCTION_GEN: "Instruction Gen.",
    Stage.EDITING_GEN: "Editing Gen.",
    Stage.FAILED_EDIT_FILTER: "Failed Edit Filter",
    Stage.RECAPTION: "Recaption",
}
FILTERING_STAGES = {Stage.INITIAL, Stage.EDITING_GEN, Stage.FAILED_EDIT_FILTER, Stage.RECAPTION}


@dataclass(frozen=True)
class StageStats:
    stage: Stage
    count_in: int
    count_out: int
    method: str = ""

    def __post_init__(self):
        if self.count_in < 0 or self.count_out < 0:
            raise ValueError("stage counts must be non-negative")
        if self.stage in FILTERING_STAGES and self.count_out > self.count_in:
            raise ValueError(f"{self.stage.value}: filtering stage cannot grow ({self.count_in} -> {self.count_out})")

    def to_dict(self) -> dict:
        return {"stage": self.stage.value, "count_in": self.count_in, "count_out": self.count_out, "method": self.method}

    @classmethod
    def from_dict(cls, d: dict) -> "StageStats":
        return cls(Stage(d["stage"]), int(d["count_in"]), int(d["count_out"]), d.get("method", ""))


def compute_stage_ratio(prev_count: int, next_count: int) -> float:
    """Percentage change between consecutive stages, rounded half-up to 2 decimals."""
    if prev_count < 1:
        raise ValueError("prev_count must be >= 1")
    return round_half_up(100.0 * (next_count / prev_count - 1.0), 2)


def format_stage_table(stats: Sequence[StageStats]) -> str:
    """Render stage counts with a percentage-change column (shown for stages that change volume)."""
    rows = [("Processing Stage", "Method", "Delta Ratio(%)", "Data Volume")]
    prev = None
    for s in stats:
        if prev is None or s.stage is Stage.RECAPTION:
            ratio = "-"
        else:
            ratio = f"{compute_stage_ratio(prev, s.count_out):+.2f}" if prev >= 1 else "-"
        rows.append((STAGE_LABELS[s.stage], s.method or "-", ratio, str(s.count_out)))
        prev = s.count_out
    if stats:
        rows.append(("Final Data", "-", "-", str(stats[-1].count_out)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def check_conservation(stats: Sequence[StageStats], triplets: Iterable[Triplet]) -> list[str]:
    """Return violated conservation laws (empty when consistent)."""
    problems = []
    by_stage = {s.stage: s for s in stats}
    order = list(Stage)
    for a, b in zip(order, order[1:]):
        if a in by_stage and b in by_stage and by_stage[b].count_in != by_stage[a].count_out:
            problems.append(f"count_in({b.value})={by_stage[b].count_in} != count_out({a.value})={by_stage[a].count_out}")
    triplets = list(triplets)
    verified = sum(t.status is Status.VERIFIED for t in triplets)
    reached_verification = sum(t.status.is_terminal and not t.rejected_at_edit for t in triplets)
    if Stage.FAILED_EDIT_FILTER in by_stage and by_stage[Stage.FAILED_EDIT_FILTER].count_out != verified:
        problems.append(f"count_out(failed_edit_filter)={by_stage[Stage.FAILED_EDIT_FILTER].count_out} != |verified|={verified}")
    if Stage.EDITING_GEN in by_stage and by_stage[Stage.EDITING_GEN].count_out != reached_verification:
        problems.append(
            f"count_out(editing_gen)={by_stage[Stage.EDITING_GEN].count_out} != verified+rejected={reached_verification}"
        )
    return problems


# -- instruction generation ---------------------------------------------------

_NUMBERED = re.compile(r"^\s*\d+[.)]\s*(?:\[(?P<b>[^\]]+)\]|(?P<c>[^:]+):)\s*(?P<text>.+?)\s*$")


def _coerce_items(reply: str) -> list[tuple[str, str]]:
    try:
        items = extract_json_array(reply)
    except NoJsonFound:
        items = None
    if items is None:
        try:
            obj = extract_json_object(reply)
            items = obj.get("instructions")
        except NoJsonFound:
            items = None
    pairs = []
    if isinstance(items, list):
        for it in items:
            if isinstance(it, dict) and isinstance(it.get("subtask"), str) and isinstance(it.get("instruction"), str):
                pairs.append((it["subtask"], it["instruction"]))
        return pairs
    for line in reply.splitlines():
        m = _NUMBERED.match(line)
        if m:
            pairs.append(((m.group("b") or m.group("c")).strip(), m.group("text")))
    return pairs


def parse_instruction_list(reply: str, taxonomy: Taxonomy | None = None) -> list[tuple[SubTask, str]]:
    """Parse a JSON list (or numbered ``1. [Sub Task] text`` lines) into tagged instructions.

    Items naming an unknown sub-task or with empty text are dropped. Raises
    ParseFailure when the reply has no recognizable list at all.
    """
    taxonomy = taxonomy or default_taxonomy()
    raw = _coerce_items(reply)
    if not raw:
        raise ParseFailure("generator reply contains no instruction list")
    out = []
    for name, text in raw:
        text = " ".join(text.split())
        if not text:
            continue
        try:
            out.append((taxonomy.get(name), text))
        except UnknownSubTask:
            logger.debug("dropping instruction with unknown sub-task %r", name)
    return out


def _norm_text(text: str) -> str:
    return " ".join(text.lower().split()).rstrip(".")


def generate_instructions(
    generator: Endpoint,
    image: ImageRef,
    taxonomy: Taxonomy | None = None,
    min_n: int = 3,
    max_n: int = 7,
    temperature: float = DEFAULT_TEMPERATURE["generator"],
) -> list[tuple[SubTask, str]]:
    """Ask the generator for content-aware instructions, one per distinct sub-task.

    Duplicate texts (case/whitespace-insensitive) and repeated sub-tasks are
    dropped, keeping the first occurrence; the result is cut to ``max_n``.
    """
    if not 1 <= min_n <= max_n:
        raise ValueError("need 1 <= min_n <= max_n")
    taxonomy = taxonomy or default_taxonomy()
    prompt = (
        _template("generate_instructions")
        .replace("<min_n>", str(min_n))
        .replace("<max_n>", str(max_n))
        .replace("<taxonomy>", taxonomy.render())
    )
    req = ChatRequest((ImagePart(image), TextPart(prompt)), temperature=temperature)
    items = parse_instruction_list(generator.chat(req), taxonomy)
    seen_text, seen_task, kept = set(), set(), []
    for subtask, text in items:
        key = _norm_text(text)
        if key in seen_text or subtask.key in seen_task:
            continue
        seen_text.add(key)
        seen_task.add(subtask.key)
        kept.append((subtask, text))
    kept = kept[:max_n]
    if len(kept) < min_n:
        raise TooFew(f"generator produced {len(kept)} usable instructions, need at least {min_n}")
    return kept


def select_for_editing(instructions: Sequence[tuple[SubTask, str]], k: int) -> list[tuple[SubTask, str]]:
    """First ``k`` instructions in category round-robin order (object, attribute, scene, reasoning, ...)."""
    queues = {c: [it for it in instructions if it[0].category is c] for c in Category}
    ordered = []
    while any(queues.values()):
        for c in Category:
            if queues[c]:
                ordered.append(queues[c].pop(0))
    return ordered[:k]


# -- editing ------------------------------------------------------------------

_EDIT_ERRORS = (Exhausted, BadRequest, MalformedReply, DecodeFailure)


def stable_seed(triplet_id: str, base_seed: int = 0) -> int:
    return (int(hashlib.sha256(triplet_id.encode()).hexdigest()[:8], 16) + base_seed) % (2 ** 31)


def edit_triplet(t: Triplet, editor: Endpoint, store: ArtifactStore, base_seed: Optional[int] = 0) -> Triplet:
    if t.status is not Status.PENDING:
        raise ValueError(f"{t.id}: expected a pending triplet, got {t.status.value}")
    seed = None if base_seed is None else stable_seed(t.id, base_seed)
    try:
        ref = editor.edit(EditRequest(t.original, t.instruction, seed), store)
    except _EDIT_ERRORS as exc:
        logger.warning("%s: edit failed: %s", t.id, exc)
        return t.advance(Status.REJECTED_OTHER, Stage.EDITING_GEN.value, reason=f"edit_failed:{type(exc).__name__}")
    return t.advance(Status.EDITED, Stage.EDITING_GEN.value, edited=ref)


def run_edit_stage(
    triplets: Iterable[Triplet],
    editor: Endpoint,
    store: ArtifactStore,
    workers: int = 8,
    base_seed: Optional[int] = 0,
) -> list[Triplet]:
    """Edit every pending triplet; per-triplet failures become RejectedOther.

    Only an artifact-store failure aborts the stage. The result is sorted by id.
    """
    triplets = list(triplets)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        done = list(pool.map(lambda t: edit_triplet(t, editor, store, base_seed), triplets))
    return sorted(done, key=lambda t: t.id)


# -- verification -------------------------------------------------------------


def parse_verdict(reply: str) -> VerificationVerdict:
    try:
        obj = extract_json_object(reply)
    except NoJsonFound as exc:
        raise ParseFailure(str(exc)) from exc
    flag = obj.get("is_changed")
    if isinstance(flag, str) and flag.strip().lower() in ("true", "false"):
        flag = flag.strip().lower() == "true"
    if not isinstance(flag, bool):
        raise ParseFailure("verdict has no boolean is_changed")
    text = obj.get("instruction", obj.get("refined_instruction", ""))
    if not isinstance(text, str):
        raise ParseFailure("verdict instruction is not a string")
    text = " ".join(text.split())
    if flag and not text:
        raise ParseFailure("changed verdict without a refined instruction")
    misaligned = obj.get("misaligned") is True
    return VerificationVerdict(is_changed=flag, refined_instruction=text if flag else "", raw_reply=reply,
                               misaligned=misaligned)


def verification_request(t: Triplet, template: str | None = None,
                         temperature: float = DEFAULT_TEMPERATURE["verifier"]) -> ChatRequest:
    prompt = (template or _template("verify_triplet")).replace("<instruction>", t.instruction)
    parts = (TextPart("Original Image:"), ImagePart(t.original), TextPart("Edited Image:"), ImagePart(t.edited),
             TextPart(prompt))
    return ChatRequest(parts, temperature=temperature)


def verify_triplet(t: Triplet, verifier: Endpoint, template: str | None = None,
                   temperature: float = DEFAULT_TEMPERATURE["verifier"]):
    """Run the multi-step verification prompt and apply its verdict.

    Returns ``(verdict, triplet)``; the verdict is None when the reply stayed
    unparseable after one re-prompt or the endpoint failed.
    """
    if t.status is not Status.EDITED:
        raise ValueError(f"{t.id}: expected an edited triplet, got {t.status.value}")
    stage = Stage.FAILED_EDIT_FILTER.value
    req = verification_request(t, template, temperature)
    verdict = None
    try:
        for attempt in range(2):
            reply = verifier.chat(req if attempt == 0 else req.with_extra_text(_template("reprompt").strip()))
            try:
                verdict = parse_verdict(reply)
                break
            except ParseFailure as exc:
                logger.info("%s: unparseable verdict (attempt %d): %s", t.id, attempt + 1, exc)
    except GatewayError as exc:
        logger.warning("%s: verifier failed: %s", t.id, exc)
        return None, t.advance(Status.REJECTED_OTHER, stage, reason=f"verifier_failed:{type(exc).__name__}")
    if verdict is None:
        return None, t.advance(Status.REJECTED_OTHER, stage, reason="verifier_unparseable")
    if not verdict.is_changed:
        return verdict, t.advance(Status.REJECTED_NO_EDIT, stage, reason="no_edit")
    if verdict.misaligned:
        return verdict, t.advance(Status.REJECTED_MISALIGNED, stage, reason="misaligned")
    updated = t.advance(Status.VERIFIED, Stage.RECAPTION.value, refined_instruction=verdict.refined_instruction)
    return verdict, updated


def _load_pair(t: Triplet) -> tuple[GrayImage, GrayImage]:
    a = imaging.decode_gray(t.original.read_bytes())
    b = imaging.decode_gray(t.edited.read_bytes())
    if (a.height, a.width) != (b.height, b.width):
        b = GrayImage(np.clip(imaging.resize_bilinear(b.pixels, a.height, a.width), 0.0, 1.0))
    return a, b


def ssim_no_edit_baseline(t: Triplet, params: SsimParams = SsimParams(), threshold: float = 0.95) -> bool:
    """Pixel baseline: flag as no-edit when SSIM(original, edited) >= threshold.

    For comparison against the learned verifier only; the pipeline never uses it
    to filter. The edited image is resized to the original's size when they differ.
    """
    if t.edited is None:
        raise ValueError(f"{t.id}: triplet has no edited image")
    a, b = _load_pair(t)
    return imaging.ssim(a, b, params) >= threshold


class AestheticFilter:
    """Reject edited triplets whose edited image scores below ``min_score``."""

    reason = "aesthetic_below_threshold"

    def __init__(self, endpoint: Endpoint, min_score: float):
        self.endpoint = endpoint
        self.min_score = min_score

    def __call__(self, t: Triplet) -> Optional[str]:
        try:
            score = score_aesthetic(self.endpoint, t.edited)
        except GatewayError as exc:
            return f"aesthetic_failed:{type(exc).__name__}"
        return self.reason if score < self.min_score else None


def post_verify(t: Triplet, verifier: Endpoint, filters: Sequence[Callable] = (), template: str | None = None,
                temperature: float = DEFAULT_TEMPERATURE["verifier"]) -> Triplet:
    for check in filters:
        reason = check(t)
        if reason:
            return t.advance(Status.REJECTED_OTHER, Stage.FAILED_EDIT_FILTER.value, reason=reason)
    return verify_triplet(t, verifier, template, temperature)[1]


def run_verification(triplets: Iterable[Triplet], verifier: Endpoint, filters: Sequence[Callable] = (),
                     workers: int = 8, template: str | None = None) -> list[Triplet]:
    """Verification-only pass; triplets not in Edited state pass through unchanged."""
    triplets = list(triplets)

    def one(t):
        return post_verify(t, verifier, filters, template) if t.status is Status.EDITED else t

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return sorted(pool.map(one, triplets), key=lambda t: t.id)


# -- full pipeline ------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    k_per_image: int = 4
    min_instructions: int = 3
    max_instructions: int = 7
    crop_threshold: float = imaging.DEFAULT_CROP_THRESHOLD
    preprocess_side: Optional[int] = None
    checkpoint_batch: int = 64
    workers: int = 8
    seed: Optional[int] = 0
    aesthetic_min_score: Optional[float] = 5.0
    generator_temperature: float = DEFAULT_TEMPERATURE["generator"]
    verifier_temperature: float = DEFAULT_TEMPERATURE["verifier"]
    taxonomy_path: Optional[str] = None

    def __post_init__(self):
        if not 1 <= self.min_instructions <= self.max_instructions:
            raise ConfigInvalid("need 1 <= min_instructions <= max_instructions")
        if self.k_per_image < 1:
            raise ConfigInvalid("k_per_image must be >= 1")
        if not 0.0 < self.crop_threshold < 1.0:
            raise ConfigInvalid("crop_threshold must lie in (0, 1)")
        if self.checkpoint_batch < 1 or self.workers < 1:
            raise ConfigInvalid("checkpoint_batch and workers must be >= 1")
        if self.preprocess_side is not None and self.preprocess_side < 1:
            raise ConfigInvalid("preprocess_side must be >= 1")


@dataclass(frozen=True)
class SourceImage:
    id: str
    image: ImageRef


@dataclass
class PipelineResult:
    run_id: str
    run_dir: Path
    manifest_path: Path
    stats_path: Path
    stats: list
    triplets: list
    details: dict = field(default_factory=dict)


def read_jsonl(path: Path) -> list[dict]:
    """Records of a JSONL file; a truncated final line (crash mid-write) is ignored."""
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.endswith("\n"):
                break
            if line.strip():
                out.append(json.loads(line))
    return out


def _dumps(doc) -> str:
    return json.dumps(doc, ensure_ascii=False, sort_keys=True)


def write_jsonl(path: Path, records: Iterable[dict]):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for r in records:
            f.write(_dumps(r) + "\n")
    os.replace(tmp, path)


def _append_jsonl(path: Path, records: Iterable[dict]):
    with open(path, "a", encoding="utf-8") as f:
        for r in records:
            f.write(_dumps(r) + "\n")
        f.flush()
        os.fsync(f.fileno())


def load_source_manifest(path: str | Path) -> list[SourceImage]:
    """JSONL of ``{"id": ..., "uri": ...}``; relative URIs resolve against the manifest's directory."""
    path = Path(path)
    out, seen = [], set()
    for n, rec in enumerate(read_jsonl(path), 1):
        try:
            image_id, uri = str(rec["id"]), rec["uri"]
        except (KeyError, TypeError):
            raise ConfigInvalid(f"{path}:{n}: source records need 'id' and 'uri'") from None
        if image_id in seen:
            raise ConfigInvalid(f"{path}:{n}: duplicate source id {image_id!r}")
        seen.add(image_id)
        p = Path(uri)
        if not p.is_absolute():
            p = path.parent / p
        out.append(SourceImage(image_id, ImageRef.from_path(p)))
    return out


def config_digest(config: PipelineConfig, endpoints: dict, source_hash: str = "") -> str:
    doc = {
        "pipeline": asdict(config),
        "endpoints": {role: ep.config.public_dict() for role, ep in sorted(endpoints.items())},
        "source": source_hash,
    }
    return hashlib.sha256(_dumps(doc).encode()).hexdigest()


class _Checkpoint:
    """Single writer of run state: cursors per stage plus each triplet's last status."""

    def __init__(self, run_dir: Path, run_id: str, digest: str):
        self.path = run_dir / "checkpoint.json"
        self.state = {"run_id": run_id, "config_digest": digest, "cursors": {}, "statuses": {}}

    def load(self) -> bool:
        if not self.path.exists():
            return False
        with open(self.path, encoding="utf-8") as f:
            saved = json.load(f)
        if saved.get("config_digest") != self.state["config_digest"]:
            raise ConfigInvalid("config changed since the checkpoint was written; refusing to resume")
        self.state = saved
        return True

    def update(self, stage: Stage, cursor: int, triplets: Iterable[Triplet] = ()):
        self.state["cursors"][stage.value] = cursor
        for t in triplets:
            self.state["statuses"][t.id] = t.status.value
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.state, f, sort_keys=True, indent=1)
        os.replace(tmp, self.path)


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def run_pipeline(
    source: str | Path | Sequence[SourceImage],
    config: PipelineConfig,
    endpoints: dict,
    run_dir: str | Path,
    store: ArtifactStore | None = None,
    resume: bool = False,
    run_id: str | None = None,
) -> PipelineResult:
    """Run admission, instruction generation, editing and verification with checkpoints.

    ``endpoints`` maps roles to Endpoint objects; ``generator``, ``editor`` and
    ``verifier`` are required, ``aesthetic`` enables the aesthetic filter.
    """
    for role in ("generator", "editor", "verifier"):
        if role not in endpoints:
            raise ConfigInvalid(f"endpoint for role {role!r} is not configured")
    run_dir = Path(run_dir)
    taxonomy = load_taxonomy(config.taxonomy_path)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "stages").mkdir(exist_ok=True)
    except OSError as exc:
        raise StoreUnavailable(f"cannot create run directory {run_dir}: {exc}") from exc
    store = store or ArtifactStore(run_dir / "store")

    sources = load_source_manifest(source) if isinstance(source, (str, Path)) else list(source)
    source_hash = hashlib.sha256(_dumps([[s.id, s.image.content_hash] for s in sources]).encode()).hexdigest()
    digest = config_digest(config, endpoints, source_hash)
    run_id = run_id or digest[:12]
    ckpt = _Checkpoint(run_dir, run_id, digest)
    files = {name: run_dir / "stages" / f"{name}.jsonl" for name in ("instructions", "edited", "verified")}
    if resume:
        if ckpt.load():
            logger.info("resuming run %s from checkpoint", run_id)
    else:
        for p in files.values():
            p.unlink(missing_ok=True)
        ckpt.update(Stage.INITIAL, 0)

    # stage 0: admission and optional center-crop preprocessing
    admitted = []
    for s in sources:
        if not imaging.admit_image(s.image.width, s.image.height, config.crop_threshold):
            continue
        if config.preprocess_side:
            ref = store.put(imaging.crop_resize_rgb(s.image.read_bytes(), config.preprocess_side, config.crop_threshold))
            s = SourceImage(s.id, ref)
        admitted.append(s)
    ckpt.update(Stage.INITIAL, len(sources))
    pool = ThreadPoolExecutor(max_workers=config.workers)
    try:
        # stage 1: instruction generation
        gen_done = {r["image_id"]: r for r in read_jsonl(files["instructions"])}
        todo = [s for s in admitted if s.id not in gen_done]

        def gen_one(s: SourceImage) -> dict:
            rec = {"image_id": s.id, "generated": 0, "error": None, "triplets": []}
            try:
                items = generate_instructions(endpoints["generator"], s.image, taxonomy, config.min_instructions,
                                              config.max_instructions, config.generator_temperature)
            except (TooFew, ParseFailure, GatewayError) as exc:
                logger.warning("%s: instruction generation failed: %s", s.id, exc)
                rec["error"] = type(exc).__name__
                return rec
            rec["generated"] = len(items)
            for subtask, text in select_for_editing(items, config.k_per_image):
                idx = items.index((subtask, text))
                t = Triplet(id=f"{s.id}-{idx:02d}", original=s.image, instruction=text, subtask=subtask)
                rec["triplets"].append(t.to_dict())
            return rec

        for batch in _batches(todo, config.checkpoint_batch):
            recs = list(pool.map(gen_one, batch))
            _append_jsonl(files["instructions"], recs)
            gen_done.update((r["image_id"], r) for r in recs)
            ckpt.update(Stage.INSTRUCTION_GEN, len(gen_done))
        gen_records = [gen_done[s.id] for s in admitted if s.id in gen_done]
        pending = [Triplet.from_dict(d, taxonomy) for r in gen_records for d in r["triplets"]]

        # stage 2: editing
        edited = {d["id"]: Triplet.from_dict(d, taxonomy) for d in read_jsonl(files["edited"])}
        todo = [t for t in pending if t.id not in edited]
        for batch in _batches(todo, config.checkpoint_batch):
            out = list(pool.map(lambda t: edit_triplet(t, endpoints["editor"], store, config.seed), batch))
            _append_jsonl(files["edited"], [t.to_dict() for t in out])
            edited.update((t.id, t) for t in out)
            ckpt.update(Stage.EDITING_GEN, len(edited), out)

        # stage 3: unified post-verification (others filters, then verifier with recaptioning)
        filters = []
        if "aesthetic" in endpoints and config.aesthetic_min_score is not None:
            filters.append(AestheticFilter(endpoints["aesthetic"], config.aesthetic_min_score))
        final = {d["id"]: Triplet.from_dict(d, taxonomy) for d in read_jsonl(files["verified"])}
        todo = [edited[t.id] for t in pending if t.id in edited and t.id not in final]
        todo = [t for t in todo if t.status is Status.EDITED]
        for batch in _batches(todo, config.checkpoint_batch):
            out = list(pool.map(
                lambda t: post_verify(t, endpoints["verifier"], filters, temperature=config.verifier_temperature),
                batch))
            _append_jsonl(files["verified"], [t.to_dict() for t in out])
            final.update((t.id, t) for t in out)
            ckpt.update(Stage.FAILED_EDIT_FILTER, len(final), out)
    finally:
        pool.shutdown(wait=True)

    triplets = []
    for t in pending:
        e = edited.get(t.id, t)
        triplets.append(final.get(t.id, e))
    triplets.sort(key=lambda t: t.id)

    n_generated = sum(r["generated"] for r in gen_records)
    n_edited = sum(1 for t in triplets if t.edited is not None)
    n_verified = sum(t.status is Status.VERIFIED for t in triplets)
    methods = {role: ep.config.model_name or ep.name for role, ep in endpoints.items()}
    stats = [
        StageStats(Stage.INITIAL, len(sources), len(admitted), "source images"),
        StageStats(Stage.INSTRUCTION_GEN, len(admitted), n_generated, methods["generator"]),
        StageStats(Stage.EDITING_GEN, n_generated, n_edited, methods["editor"]),
        StageStats(Stage.FAILED_EDIT_FILTER, n_edited, n_verified, methods["verifier"]),
        StageStats(Stage.RECAPTION, n_verified, n_verified, methods["verifier"]),
    ]
    status_counts = {s.value: 0 for s in Status}
    for t in triplets:
        status_counts[t.status.value] += 1
    details = {
        "selected_for_editing": len(pending),
        "edit_failures": sum(t.rejected_at_edit for t in triplets),
        "instruction_failures": sum(1 for r in gen_records if r["error"]),
        "status_counts": status_counts,
    }
    manifest_path = run_dir / "manifest.jsonl"
    write_jsonl(manifest_path, (t.to_dict() for t in triplets))
    stats_path = run_dir / "stage_stats.json"
    doc = {
        "schema_version": STATS_SCHEMA_VERSION,
        "run_id": run_id,
        "config_digest": digest,
        "stages": [s.to_dict() for s in stats],
        "ratios": {s.stage.value: compute_stage_ratio(p.count_out, s.count_out)
                   for p, s in zip(stats, stats[1:4]) if p.count_out >= 1},
        "details": details,
    }
    tmp = stats_path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, stats_path)
    ckpt.update(Stage.RECAPTION, n_verified, triplets)
    return PipelineResult(run_id, run_dir, manifest_path, stats_path, stats, triplets, details)


def load_stage_stats(path: str | Path) -> list[StageStats]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return [StageStats.from_dict(d) for d in doc["stages"]]
