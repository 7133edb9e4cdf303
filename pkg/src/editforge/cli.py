"""Command-line driver.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Fatal errors are also written to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import uuid
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from . import bench, curation
from .errors import (
    ConfigInvalid,
    EditforgeError,
    SchemaViolation,
    ShapeViolation,
)
from .gateway import ROLES, ArtifactStore, Endpoint, EndpointConfig, mock_bind
from .imaging import SsimParams
from .models import PreferencePair, Status, Triplet
from .scoring import d2po_loss, gradient_check

logger = logging.getLogger("editforge")

CONFIG_SCHEMA_VERSION = 1
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
_CONFIG_ERRORS = (ConfigInvalid, SchemaViolation, ShapeViolation)

COMMAND_ROLES = {
    "curate": ("generator", "editor", "verifier"),
    "verify": ("verifier",),
    "bench": ("editor", "judge"),
}
_TOP_KEYS = {"schema_version", "output_dir", "endpoints", "pipeline", "ssim", "paths", "locales", "bench", "audit"}
_PATH_KEYS = {"source_manifest", "bench_manifest", "triplet_manifest", "pairs", "store"}


@dataclass
class RunConfig:
    output_dir: Path
    endpoints: dict = field(default_factory=dict)
    pipeline: curation.PipelineConfig = field(default_factory=curation.PipelineConfig)
    ssim: SsimParams = field(default_factory=SsimParams)
    paths: dict = field(default_factory=dict)
    locales: tuple = ("en",)
    bench_model: str = "candidate"
    bench_canonical: bool = False
    bench_aggregation: str = "cases"
    gradient_tolerance: float = 1e-6
    schema_version: int = CONFIG_SCHEMA_VERSION

    @property
    def store_dir(self) -> Path:
        return self.paths.get("store", self.output_dir / "store")

    def require_roles(self, roles):
        missing = [r for r in roles if r not in self.endpoints]
        if missing:
            raise ConfigInvalid(f"endpoints not configured for roles: {', '.join(missing)}")

    def path(self, key: str, override: Optional[str] = None) -> Path:
        if override:
            return Path(override)
        if key not in self.paths:
            raise ConfigInvalid(f"paths.{key} is not set")
        return self.paths[key]


def _section(doc: dict, key: str) -> dict:
    value = doc.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigInvalid(f"section {key!r} must be a mapping")
    return value


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc


def parse_run_config(doc: dict, base: Path) -> RunConfig:
    """Validate a parsed config document; relative paths resolve against ``base``."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown top-level keys {sorted(unknown)}")
    if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigInvalid(f"schema_version must be {CONFIG_SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    if not doc.get("output_dir"):
        raise ConfigInvalid("output_dir is required")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (base / p).resolve()

    endpoints = {}
    for role, section in _section(doc, "endpoints").items():
        if role not in ROLES:
            raise ConfigInvalid(f"unknown endpoint role {role!r}; expected one of {', '.join(ROLES)}")
        if not isinstance(section, dict):
            raise ConfigInvalid(f"endpoints.{role} must be a mapping")
        endpoints[role] = EndpointConfig.from_mapping(role, section)

    paths = {}
    for key, value in _section(doc, "paths").items():
        if key not in _PATH_KEYS:
            raise ConfigInvalid(f"paths: unknown key {key!r}")
        paths[key] = resolve(value)
    output_dir = resolve(doc["output_dir"])
    if "store" in paths and output_dir not in (paths["store"], *paths["store"].parents):
        raise ConfigInvalid("paths.store must lie under output_dir")

    ssim = _build(SsimParams, _section(doc, "ssim"), "ssim")

    locales = tuple(doc.get("locales") or ("en",))
    bad = [loc for loc in locales if loc not in bench.LOCALES]
    if bad:
        raise ConfigInvalid(f"unknown locales {bad}; expected a subset of {list(bench.LOCALES)}")

    bsec = _section(doc, "bench")
    unknown = set(bsec) - {"model", "canonical", "aggregation"}
    if unknown:
        raise ConfigInvalid(f"bench: unknown keys {sorted(unknown)}")
    aggregation = bsec.get("aggregation", "cases")
    if aggregation not in bench.AGGREGATION_MODES:
        raise ConfigInvalid(f"bench.aggregation must be one of {bench.AGGREGATION_MODES}")
    asec = _section(doc, "audit")
    tol = float(asec.get("gradient_tolerance", 1e-6))
    if not 0 < tol < 1:
        raise ConfigInvalid("audit.gradient_tolerance must lie in (0, 1)")

    return RunConfig(
        output_dir=output_dir,
        endpoints=endpoints,
        pipeline=_build(curation.PipelineConfig, _section(doc, "pipeline"), "pipeline"),
        ssim=ssim,
        paths=paths,
        locales=locales,
        bench_model=str(bsec.get("model", "candidate")),
        bench_canonical=bool(bsec.get("canonical", False)),
        bench_aggregation=aggregation,
        gradient_tolerance=tol,
        schema_version=doc["schema_version"],
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: invalid YAML: {exc}") from exc
    return parse_run_config(doc, path.resolve().parent)


def bind_endpoints(cfg: RunConfig, roles, mock: bool = False) -> dict:
    """Endpoints for the required ``roles`` plus every other configured role.

    With ``mock`` the same set of roles is bound to the deterministic mock.
    """
    if mock:
        return {role: mock_bind(role=role) for role in sorted(set(roles) | set(cfg.endpoints))}
    cfg.require_roles(roles)
    return {role: Endpoint(c, name=role) for role, c in cfg.endpoints.items()}


# -- subcommands --------------------------------------------------------------


def cmd_curate(cfg: RunConfig, args) -> int:
    source = cfg.path("source_manifest", args.source)
    sources = curation.load_source_manifest(source)
    if not args.mock:
        cfg.require_roles(COMMAND_ROLES["curate"])
    if args.dry_run:
        print(f"dry run: {len(sources)} source images, output under {cfg.output_dir}")
        return EXIT_OK
    endpoints = bind_endpoints(cfg, COMMAND_ROLES["curate"], args.mock)
    run_id = args.resume or uuid.uuid4().hex[:12]
    run_dir = cfg.output_dir / "runs" / run_id
    if args.resume and not (run_dir / "checkpoint.json").exists():
        raise ConfigInvalid(f"no checkpoint for run {run_id} under {cfg.output_dir / 'runs'}")
    result = curation.run_pipeline(
        sources, cfg.pipeline, endpoints, run_dir,
        store=ArtifactStore(cfg.store_dir), resume=bool(args.resume), run_id=run_id,
    )
    print(f"run {result.run_id}")
    print(curation.format_stage_table(result.stats))
    print(f"manifest: {result.manifest_path}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    manifest = cfg.path("triplet_manifest", args.manifest)
    try:
        triplets = [Triplet.from_dict(d) for d in curation.read_jsonl(manifest)]
    except (KeyError, ValueError, EditforgeError) as exc:
        raise SchemaViolation(f"{manifest}: {exc}") from exc
    if not args.mock:
        cfg.require_roles(COMMAND_ROLES["verify"])
    n_edited = sum(t.status is Status.EDITED for t in triplets)
    if args.dry_run:
        print(f"dry run: {len(triplets)} triplets, {n_edited} awaiting verification")
        return EXIT_OK
    endpoints = bind_endpoints(cfg, COMMAND_ROLES["verify"], args.mock)
    filters = []
    if "aesthetic" in endpoints and cfg.pipeline.aesthetic_min_score is not None:
        filters.append(curation.AestheticFilter(endpoints["aesthetic"], cfg.pipeline.aesthetic_min_score))
    out = curation.run_verification(triplets, endpoints["verifier"], filters, cfg.pipeline.workers)
    summary = {s.value: 0 for s in Status}
    for t in out:
        summary[t.status.value] += 1
    if args.ssim_baseline:
        flagged = [t for t in triplets if t.edited is not None
                   and curation.ssim_no_edit_baseline(t, cfg.ssim, args.ssim_threshold)]
        summary["ssim_no_edit_flags"] = len(flagged)
    out_dir = cfg.output_dir / "verify" / manifest.stem
    out_dir.mkdir(parents=True, exist_ok=True)
    curation.write_jsonl(out_dir / "manifest.jsonl", (t.to_dict() for t in out))
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    manifest = cfg.path("bench_manifest", args.manifest)
    canonical = args.canonical or cfg.bench_canonical
    cases = bench.load_manifest(manifest, canonical=canonical)
    if not args.mock:
        cfg.require_roles(COMMAND_ROLES["bench"])
    model = args.model or cfg.bench_model
    if args.dry_run:
        print(f"dry run: {len(cases)} cases, model {model}, locales {','.join(cfg.locales)}")
        return EXIT_OK
    endpoints = bind_endpoints(cfg, COMMAND_ROLES["bench"], args.mock)
    report = bench.run_bench(
        cases, endpoints["editor"], endpoints["judge"], ArtifactStore(cfg.store_dir), model,
        locales=cfg.locales, workers=cfg.pipeline.workers, mode=args.aggregation or cfg.bench_aggregation,
        seed=cfg.pipeline.seed,
    )
    out_dir = cfg.output_dir / "bench" / _safe_name(model)
    paths = bench.write_report(report, out_dir)
    print(bench.format_overall(report))
    print(f"report: {paths['report.json']}")
    return EXIT_OK


def _safe_name(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label) or "model"


def audit_pairs(path: Path, tolerance: float = 1e-6) -> dict:
    """Mean loss and gradient-check pass rate over a JSONL file of preference pairs.

    Malformed lines are skipped and counted, with their line numbers.
    """
    losses, passed, skipped = [], 0, []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                pair = PreferencePair.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                skipped.append(n)
                logger.warning("%s:%d: skipped malformed pair: %s", path, n, exc)
                continue
            losses.append(d2po_loss(pair))
            passed += gradient_check(pair, rel_tol=tolerance)
    n = len(losses)
    return {
        "pairs": n,
        "skipped": len(skipped),
        "skipped_lines": skipped,
        "mean_loss": math.fsum(losses) / n if n else None,
        "gradient_pass_rate": passed / n if n else None,
        "gradient_tolerance": tolerance,
    }


def cmd_audit_d2po(cfg: Optional[RunConfig], args) -> int:
    if args.pairs:
        path = Path(args.pairs)
    elif cfg is not None:
        path = cfg.path("pairs")
    else:
        raise ConfigInvalid("audit-d2po needs a pairs file (argument or paths.pairs)")
    if not path.exists():
        raise ConfigInvalid(f"pairs file {path} does not exist")
    tolerance = cfg.gradient_tolerance if cfg else 1e-6
    if args.dry_run:
        print(f"dry run: would audit {path}")
        return EXIT_OK
    summary = audit_pairs(path, tolerance)
    if summary["pairs"] == 0:
        print(json.dumps(summary, sort_keys=True))
        raise SchemaViolation(f"{path}: no valid preference pairs")
    print(f"pairs: {summary['pairs']}  skipped: {summary['skipped']}")
    print(f"mean loss: {summary['mean_loss']:.12g}")
    print(f"gradient check pass rate: {100 * summary['gradient_pass_rate']:.2f}% (rel. tol {tolerance:g})")
    if cfg is not None:
        out_dir = cfg.output_dir / "audit"
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{path.stem}_summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_stats(cfg: Optional[RunConfig], args) -> int:
    if args.stats_file:
        path = Path(args.stats_file)
    elif cfg is not None and args.run_id:
        path = cfg.output_dir / "runs" / args.run_id / "stage_stats.json"
    else:
        raise ConfigInvalid("stats needs --stats-file or a run id with --config")
    if not path.exists():
        raise ConfigInvalid(f"stage stats file {path} does not exist")
    try:
        stats = curation.load_stage_stats(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaViolation(f"{path}: not a stage stats file: {exc}") from exc
    if not args.dry_run:
        print(curation.format_stage_table(stats))
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    path = Path(args.report)
    if not path.exists():
        raise ConfigInvalid(f"report {path} does not exist")
    try:
        report = bench.BenchReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaViolation(f"{path}: not a benchmark report: {exc}") from exc
    if args.dry_run:
        print(f"dry run: report for {report.model} with locales {','.join(report.locales)}")
        return EXIT_OK
    out_dir = cfg.output_dir / "reports" / _safe_name(report.model)
    bench.write_report(report, out_dir)
    print(bench.format_overall(report))
    print(f"tables: {out_dir}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; SUPPRESS keeps them from resetting values given earlier
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration", **kw)
    p.add_argument("--dry-run", action="store_true", help="validate config and inputs, write nothing", **kw)
    p.add_argument("--resume", metavar="RUN_ID", help="resume a checkpointed curation run", **kw)
    p.add_argument("--mock", action="store_true", help="bind every endpoint to the deterministic mock", **kw)
    p.add_argument("-v", "--verbose", action="count", **(kw or {"default": 0}))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="editforge", parents=[_global_flags(suppress=False)],
                                description="Image-editing data curation and benchmark tooling.")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("curate", parents=[common], help="run the curation pipeline")
    c.add_argument("--source", help="source image manifest (overrides paths.source_manifest)")
    v = sub.add_parser("verify", parents=[common], help="verification-only pass over a triplet manifest")
    v.add_argument("--manifest", help="triplet manifest (overrides paths.triplet_manifest)")
    v.add_argument("--ssim-baseline", action="store_true", help="also count SSIM no-edit flags")
    v.add_argument("--ssim-threshold", type=float, default=0.95)
    b = sub.add_parser("bench", parents=[common], help="run the benchmark against an editor")
    b.add_argument("--manifest", help="benchmark manifest (overrides paths.bench_manifest)")
    b.add_argument("--model", help="label of the model under test")
    b.add_argument("--canonical", action="store_true", help="require the full 22 x 50 manifest shape")
    b.add_argument("--aggregation", choices=bench.AGGREGATION_MODES)
    a = sub.add_parser("audit-d2po", parents=[common], help="audit logged preference pairs")
    a.add_argument("pairs", nargs="?", help="JSONL of preference pairs (overrides paths.pairs)")
    s = sub.add_parser("stats", parents=[common], help="print a run's stage table")
    s.add_argument("run_id", nargs="?")
    s.add_argument("--stats-file")
    r = sub.add_parser("report", parents=[common], help="re-export tables from a report.json")
    r.add_argument("report")
    return p


_COMMANDS = {
    "curate": cmd_curate,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "audit-d2po": cmd_audit_d2po,
    "stats": cmd_stats,
    "report": cmd_report,
}
_CONFIG_OPTIONAL = {"audit-d2po", "stats"}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.resume and args.command != "curate":
            raise ConfigInvalid("--resume only applies to curate")
        cfg = None
        if args.config:
            cfg = load_run_config(args.config)
        elif args.command not in _CONFIG_OPTIONAL:
            raise ConfigInvalid(f"{args.command} requires --config")
        return _COMMANDS[args.command](cfg, args)
    except _CONFIG_ERRORS as exc:
        return _fail(EXIT_CONFIG, exc)
    except (EditforgeError, OSError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
