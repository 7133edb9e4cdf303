"""Benchmark runner: edit each case with the model under test, judge four dimensions,
combine them per case with the geometric mean and aggregate into report tables."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .curation import read_jsonl, stable_seed
from .errors import (
    GatewayError,
    IncompleteVerdicts,
    JudgeUnparseable,
    MissingReasoningPoints,
    NoJsonFound,
    NoScoredCases,
    SchemaViolation,
    ShapeViolation,
    UnknownSubTask,
)
from .gateway import ArtifactStore, ChatRequest, EditRequest, Endpoint, ImagePart, TextPart
from .gateway.config import DEFAULT_TEMPERATURE
from .gateway.jsonx import extract_json_object
from .models import ImageRef, MetricVector
from .scoring import geometric_score, round_half_up
from .taxonomy import METRIC_ORDER, Category, Metric, SubTask, Taxonomy, default_taxonomy, metric_set_for

logger = logging.getLogger(__name__)

LOCALES = ("en", "cn")
CASES_PER_SUBTASK = 50
REPORT_SCHEMA_VERSION = 1
AGGREGATION_MODES = ("cases", "subtask_means")


@dataclass(frozen=True)
class BenchCase:
    id: str
    image: ImageRef
    instruction_en: str
    subtask: SubTask
    instruction_cn: Optional[str] = None
    reasoning_points: Optional[tuple] = None

    def instruction(self, locale: str) -> Optional[str]:
        if locale not in LOCALES:
            raise ValueError(f"unknown locale {locale!r}")
        return self.instruction_en if locale == "en" else self.instruction_cn


@dataclass(frozen=True)
class JudgeVerdict:
    dimension: Metric
    score: float
    reason: str
    clamped: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score <= 10.0:
            raise ValueError("judge score must already be clamped into [0, 10]")
        if not self.reason:
            raise ValueError("judge verdict needs a reason")


@dataclass(frozen=True)
class ScoredCase:
    case_id: str
    subtask: SubTask
    locale: str
    vector: MetricVector
    score: float


# -- manifest -----------------------------------------------------------------


def _resolve_image(value, base: Path) -> ImageRef:
    if isinstance(value, str):
        p = Path(value)
        return ImageRef.from_path(p if p.is_absolute() else base / p)
    if isinstance(value, dict):
        return ImageRef.from_dict(value)
    raise SchemaViolation("image must be a path or an ImageRef object")


def parse_case(rec: dict, base: Path, taxonomy: Taxonomy) -> BenchCase:
    missing = [k for k in ("id", "image", "instruction_en", "subtask") if k not in rec or rec[k] in (None, "")]
    if missing:
        raise SchemaViolation(f"missing fields {missing}")
    try:
        subtask = taxonomy.get(rec["subtask"])
    except UnknownSubTask as exc:
        raise SchemaViolation(str(exc)) from None
    points = rec.get("reasoning_points")
    if points is not None:
        if not isinstance(points, list) or not all(isinstance(p, str) and p.strip() for p in points):
            raise SchemaViolation("reasoning_points must be a list of non-empty strings")
        points = tuple(points)
    if subtask.is_complex and not points:
        raise SchemaViolation(f"complex sub-task {subtask.name} requires reasoning_points")
    try:
        image = _resolve_image(rec["image"], base)
    except (OSError, ValueError, KeyError) as exc:
        raise SchemaViolation(f"bad image: {exc}") from exc
    return BenchCase(
        id=str(rec["id"]),
        image=image,
        instruction_en=rec["instruction_en"],
        subtask=subtask,
        instruction_cn=rec.get("instruction_cn") or None,
        reasoning_points=points or None,
    )


def load_manifest(path: str | Path, canonical: bool = False, taxonomy: Taxonomy | None = None) -> list[BenchCase]:
    """Read a JSONL benchmark manifest.

    With ``canonical=True`` every sub-task must appear exactly 50 times;
    otherwise other counts are accepted and logged as a warning.
    """
    path = Path(path)
    taxonomy = taxonomy or default_taxonomy()
    cases, seen = [], set()
    try:
        records = read_jsonl(path)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON: {exc}") from exc
    for n, rec in enumerate(records, 1):
        try:
            case = parse_case(rec, path.parent, taxonomy)
        except SchemaViolation as exc:
            raise SchemaViolation(f"{path}:{n}: {exc}") from None
        if case.id in seen:
            raise SchemaViolation(f"{path}:{n}: duplicate case id {case.id!r}")
        seen.add(case.id)
        cases.append(case)
    counts = Counter(c.subtask.key for c in cases)
    off = {s.key: counts.get(s.key, 0) for s in taxonomy if counts.get(s.key, 0) != CASES_PER_SUBTASK}
    if off:
        msg = f"{path}: {len(off)} sub-tasks deviate from {CASES_PER_SUBTASK} cases (e.g. {sorted(off.items())[:3]})"
        if canonical:
            raise ShapeViolation(msg)
        logger.warning("non-canonical manifest: %s", msg)
    return cases


# -- judging ------------------------------------------------------------------

_TEMPLATE_FILES = {Metric.IF: "judge_if", Metric.NC: "judge_nc", Metric.VQ: "judge_vq", Metric.RA: "judge_ra"}
_MARKERS = re.compile(r"<instruction>|<reasoning_points>")


def load_template(dimension) -> str:
    name = _TEMPLATE_FILES[Metric(dimension)]
    return resources.files("editforge").joinpath(f"data/prompts/{name}.txt").read_text(encoding="utf-8")


def format_reasoning_points(points: Sequence[str]) -> str:
    return "\n".join(f"{i}. {p}" for i, p in enumerate(points, 1))


def render_prompt(dimension, case: BenchCase, locale: str = "en") -> str:
    """Fill the dimension's judge template; markers are substituted in a single pass."""
    dimension = Metric(dimension)
    instruction = case.instruction(locale)
    if instruction is None:
        raise ValueError(f"case {case.id} has no {locale} instruction")
    values = {"<instruction>": instruction}
    if dimension is Metric.RA:
        if not case.reasoning_points:
            raise MissingReasoningPoints(f"case {case.id} has no reasoning points")
        values["<reasoning_points>"] = format_reasoning_points(case.reasoning_points)
    return _MARKERS.sub(lambda m: values.get(m.group(0), m.group(0)), load_template(dimension))


def judge_request(dimension, case: BenchCase, original: ImageRef, edited: ImageRef, locale: str) -> ChatRequest:
    parts = (
        TextPart("Original Image:"),
        ImagePart(original),
        TextPart("Edited Image:"),
        ImagePart(edited),
        TextPart(render_prompt(dimension, case, locale)),
    )
    return ChatRequest(parts, temperature=DEFAULT_TEMPERATURE["judge"])


def parse_judge_reply(dimension, reply: str, case_id: str = "") -> JudgeVerdict:
    obj = extract_json_object(reply)
    score, reason = obj.get("score"), obj.get("reason")
    if isinstance(score, str):
        try:
            score = float(score.strip())
        except ValueError:
            score = None
    if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
        raise NoJsonFound("reply has no numeric 'score'")
    if not isinstance(reason, str) or not reason.strip():
        raise NoJsonFound("reply has no 'reason'")
    clamped = min(10.0, max(0.0, float(score)))
    if clamped != score:
        logger.warning("clamped %s score for case %s: %s -> %s", Metric(dimension).value, case_id, score, clamped)
    return JudgeVerdict(Metric(dimension), clamped, reason.strip(), clamped=clamped != score)


def judge_dimension(judge: Endpoint, dimension, case: BenchCase, original: ImageRef, edited: ImageRef,
                    locale: str = "en") -> JudgeVerdict:
    """Score one dimension; one re-prompt on an unparseable reply, then JudgeUnparseable."""
    req = judge_request(dimension, case, original, edited, locale)
    reprompt = resources.files("editforge").joinpath("data/prompts/reprompt.txt").read_text(encoding="utf-8").strip()
    for attempt in range(2):
        reply = judge.chat(req if attempt == 0 else req.with_extra_text(reprompt))
        try:
            return parse_judge_reply(dimension, reply, case.id)
        except NoJsonFound as exc:
            logger.info("case %s %s: unparseable judge reply (attempt %d): %s",
                        case.id, Metric(dimension).value, attempt + 1, exc)
    raise JudgeUnparseable(f"case {case.id}: judge reply for {Metric(dimension).value} unparseable after retry")


def score_case(case: BenchCase, verdicts) -> tuple[MetricVector, float]:
    """Assemble the metric vector from verdicts (dict keyed by Metric, or a sequence) and score it."""
    if not isinstance(verdicts, dict):
        verdicts = {v.dimension: v for v in verdicts}
    verdicts = {Metric(k): v for k, v in verdicts.items()}
    needed = metric_set_for(case.subtask)
    missing = sorted(m.value for m in needed if m not in verdicts)
    if missing:
        raise IncompleteVerdicts(f"case {case.id}: missing verdicts for {missing}")
    vector = MetricVector.from_scores({m.value: verdicts[m].score for m in needed})
    return vector, geometric_score(vector, needed)


# -- aggregation --------------------------------------------------------------

_COLUMNS = tuple(m.value for m in METRIC_ORDER) + ("Overall",)


def _mean(values) -> Optional[float]:
    values = list(values)
    return math.fsum(values) / len(values) if values else None


def _row(cases: Sequence[ScoredCase]) -> dict:
    row = {}
    for m in METRIC_ORDER:
        row[m.value] = _mean(c.vector.get(m) for c in cases if c.vector.get(m) is not None)
    row["Overall"] = _mean(c.score for c in cases)
    row["n"] = len(cases)
    return row


def _row_of_rows(rows: Sequence[dict]) -> dict:
    out = {col: _mean(r[col] for r in rows if r[col] is not None) for col in _COLUMNS}
    out["n"] = sum(r["n"] for r in rows)
    return out


@dataclass
class LocaleReport:
    locale: str
    per_subtask: dict
    per_category: dict
    overall: dict
    cases: list
    failures: dict = field(default_factory=dict)


def aggregate(scored: Sequence[ScoredCase], locale: str = "en", mode: str = "cases",
              failures: Optional[dict] = None, taxonomy: Taxonomy | None = None) -> LocaleReport:
    """Per-sub-task, per-category and overall means over the scored cases.

    ``mode="cases"`` averages category and overall rows over cases;
    ``mode="subtask_means"`` averages the sub-task rows instead. Overall is the
    mean of per-case geometric scores in both modes.
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"mode must be one of {AGGREGATION_MODES}")
    if not scored:
        raise NoScoredCases(f"no scored cases for locale {locale}")
    taxonomy = taxonomy or default_taxonomy()
    by_sub = defaultdict(list)
    for c in scored:
        by_sub[c.subtask.key].append(c)
    per_subtask = {s.key: _row(by_sub[s.key]) for s in taxonomy if by_sub.get(s.key)}
    per_category = {}
    for cat in Category:
        keys = [s.key for s in taxonomy.by_category(cat) if s.key in per_subtask]
        if not keys:
            continue
        if mode == "cases":
            per_category[cat.value] = _row([c for k in keys for c in by_sub[k]])
        else:
            per_category[cat.value] = _row_of_rows([per_subtask[k] for k in keys])
    overall = _row(scored) if mode == "cases" else _row_of_rows(list(per_subtask.values()))
    ordered = sorted(scored, key=lambda c: c.case_id)
    return LocaleReport(locale, per_subtask, per_category, overall, ordered, dict(failures or {}))


@dataclass
class BenchReport:
    model: str
    locales: dict
    metadata: dict

    def to_dict(self) -> dict:
        doc = {"schema_version": REPORT_SCHEMA_VERSION, "model": self.model, "metadata": self.metadata, "locales": {}}
        for loc, rep in self.locales.items():
            doc["locales"][loc] = {
                "overall": rep.overall,
                "per_category": rep.per_category,
                "per_subtask": rep.per_subtask,
                "failures": rep.failures,
                "cases": [
                    {"id": c.case_id, "subtask": c.subtask.key, "scores": c.vector.as_dict(), "score": c.score}
                    for c in rep.cases
                ],
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict, taxonomy: Taxonomy | None = None) -> "BenchReport":
        taxonomy = taxonomy or default_taxonomy()
        locales = {}
        for loc, d in doc["locales"].items():
            cases = [
                ScoredCase(c["id"], taxonomy.get(c["subtask"]), loc,
                           MetricVector.from_scores({k: v for k, v in c["scores"].items() if v is not None}), c["score"])
                for c in d["cases"]
            ]
            locales[loc] = LocaleReport(loc, d["per_subtask"], d["per_category"], d["overall"], cases, d["failures"])
        return cls(doc["model"], locales, doc["metadata"])


def _fmt(x) -> str:
    return "-" if x is None else f"{round_half_up(x, 4):.4f}"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _locale_rank(loc: str):
    return (LOCALES.index(loc), loc) if loc in LOCALES else (len(LOCALES), loc)


def report_tables(report: BenchReport, taxonomy: Taxonomy | None = None) -> dict:
    """CSV texts keyed by file name: overall, per-category, per-sub-task and radar data."""
    taxonomy = taxonomy or default_taxonomy()
    names = {s.key: s for s in taxonomy}
    # rows follow locale and taxonomy order, so a report read back from sorted JSON renders the same
    order = {key: i for i, key in enumerate(names)}
    cat_order = {c.value: i for i, c in enumerate(Category)}
    overall, per_cat, per_sub, radar = [], [], [], []
    for loc in sorted(report.locales, key=_locale_rank):
        rep = report.locales[loc]
        f = rep.failures
        overall.append([report.model, loc] + [_fmt(rep.overall[c]) for c in _COLUMNS]
                       + [rep.overall["n"], f.get("judge_failures", 0), f.get("edit_failures", 0)])
        for cat in sorted(rep.per_category, key=cat_order.__getitem__):
            row = rep.per_category[cat]
            per_cat.append([report.model, loc, Category(cat).display_name] + [_fmt(row[c]) for c in _COLUMNS] + [row["n"]])
        for key in sorted(rep.per_subtask, key=order.__getitem__):
            row = rep.per_subtask[key]
            s = names[key]
            per_sub.append([report.model, loc, s.category.display_name, s.name]
                           + [_fmt(row[c]) for c in _COLUMNS] + [row["n"]])
            radar.append([s.name, report.model, loc, _fmt(row["Overall"])])
    cols = list(_COLUMNS)
    return {
        "overall.csv": _csv_text(["model", "locale"] + cols + ["n_cases", "judge_failures", "edit_failures"], overall),
        "per_category.csv": _csv_text(["model", "locale", "category"] + cols + ["n_cases"], per_cat),
        "per_subtask.csv": _csv_text(["model", "locale", "category", "subtask"] + cols + ["n_cases"], per_sub),
        "radar.csv": _csv_text(["subtask", "model", "locale", "value"], radar),
    }


def write_report(report: BenchReport, out_dir: str | Path, taxonomy: Taxonomy | None = None) -> dict:
    """Write report.json plus the CSV tables; returns the written paths by name."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    texts = {"report.json": json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"}
    texts.update(report_tables(report, taxonomy))
    paths = {}
    for name, text in texts.items():
        p = out_dir / name
        tmp = p.with_suffix(p.suffix + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, p)
        paths[name] = p
    return paths


def format_overall(report: BenchReport) -> str:
    lines = [f"model: {report.model}", "locale | " + " | ".join(_COLUMNS) + " | n"]
    for loc in sorted(report.locales, key=_locale_rank):
        rep = report.locales[loc]
        lines.append(f"{loc} | " + " | ".join(_fmt(rep.overall[c]) for c in _COLUMNS) + f" | {rep.overall['n']}")
    return "\n".join(lines)


# -- runner -------------------------------------------------------------------


def _evaluate(case: BenchCase, locale: str, editor: Endpoint, judge: Endpoint, store: ArtifactStore, seed):
    instruction = case.instruction(locale)
    try:
        edited = editor.edit(EditRequest(case.image, instruction, stable_seed(case.id, seed) if seed is not None else None),
                             store)
    except GatewayError as exc:
        logger.warning("case %s (%s): edit failed: %s", case.id, locale, exc)
        return "edit_failures", None
    verdicts = {}
    try:
        for m in METRIC_ORDER:
            if m in metric_set_for(case.subtask):
                verdicts[m] = judge_dimension(judge, m, case, case.image, edited, locale)
    except (JudgeUnparseable, GatewayError) as exc:
        logger.warning("case %s (%s): judge failed: %s", case.id, locale, exc)
        return "judge_failures", None
    vector, score = score_case(case, verdicts)
    return None, ScoredCase(case.id, case.subtask, locale, vector, score)


def run_bench(cases: Sequence[BenchCase], editor: Endpoint, judge: Endpoint, store: ArtifactStore,
              model: str, locales: Sequence[str] = ("en",), workers: int = 8, mode: str = "cases",
              seed: Optional[int] = 0, taxonomy: Taxonomy | None = None) -> BenchReport:
    """Evaluate every case in every requested locale the manifest covers.

    Cases whose edit or judging failed are excluded and counted, not scored zero.
    Raises NoScoredCases when no locale produced any score.
    """
    reports = {}
    for locale in locales:
        todo = [c for c in cases if c.instruction(locale)]
        if not todo:
            logger.info("skipping locale %s: no instructions in manifest", locale)
            continue
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(lambda c: _evaluate(c, locale, editor, judge, store, seed), todo))
        failures = Counter(kind for kind, _ in results if kind)
        scored = [sc for _, sc in results if sc is not None]
        if not scored:
            continue
        failures = {"judge_failures": failures.get("judge_failures", 0), "edit_failures": failures.get("edit_failures", 0)}
        reports[locale] = aggregate(scored, locale, mode, failures, taxonomy)
    if not reports:
        raise NoScoredCases("no case was scored in any locale")
    metadata = {
        "aggregation": mode,
        "overall_definition": "mean of per-case geometric means",
        "category_definition": "mean over cases" if mode == "cases" else "mean of sub-task means",
        "judge_model": judge.config.model_name,
        "n_manifest_cases": len(cases),
    }
    return BenchReport(model, reports, metadata)
