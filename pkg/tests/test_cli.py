import json
import math
import random

import pytest
import yaml
from conftest import make_bench_manifest, make_sources

from editforge import cli
from editforge.curation import compute_stage_ratio, load_stage_stats
from editforge.errors import ConfigInvalid


def write_config(root, **extra):
    doc = {
        "schema_version": 1,
        "output_dir": "out",
        "endpoints": {
            "generator": {"base_url": "http://gen.invalid/v1", "model_name": "gen"},
            "editor": {"base_url": "http://edit.invalid", "model_name": "edit"},
            "verifier": {"base_url": "http://ver.invalid/v1", "model_name": "ver"},
            "judge": {"base_url": "http://judge.invalid/v1", "model_name": "judge"},
        },
        "pipeline": {"workers": 4, "checkpoint_batch": 8},
        "paths": {"source_manifest": "sources.jsonl", "bench_manifest": "bench.jsonl"},
        "locales": ["en", "cn"],
    }
    for k, v in extra.items():
        if v is None:
            doc.pop(k, None)
        else:
            doc[k] = v
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def tree(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*"))


def last_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# -- config -------------------------------------------------------------------


def test_parse_config_defaults(tmp_path):
    cfg = cli.load_run_config(write_config(tmp_path))
    assert cfg.output_dir == (tmp_path / "out").resolve()
    assert cfg.store_dir == cfg.output_dir / "store"
    assert cfg.locales == ("en", "cn")
    assert cfg.pipeline.workers == 4


@pytest.mark.parametrize("extra", [
    {"schema_version": 2},
    {"output_dir": None},
    {"surprise": 1},
    {"pipeline": {"k_per_image": 0}},
    {"pipeline": {"speed": "fast"}},
    {"ssim": {"window": 4}},
    {"locales": ["fr"]},
    {"paths": {"store": "/elsewhere"}},
    {"endpoints": {"painter": {"base_url": "x"}}},
    {"endpoints": {"judge": {"base_url": "x", "api_key": "sk-literal"}}},
    {"bench": {"aggregation": "median"}},
    {"audit": {"gradient_tolerance": 2}},
])
def test_invalid_configs(tmp_path, extra):
    with pytest.raises(ConfigInvalid):
        cli.load_run_config(write_config(tmp_path, **extra))


def test_api_key_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("EDITFORGE_JUDGE_API_KEY", "sk-test")
    cfg = cli.load_run_config(write_config(tmp_path))
    assert cfg.endpoints["judge"].api_key == "sk-test"
    assert "sk-test" not in (tmp_path / "config.yaml").read_text()


def test_bad_yaml_exits_2(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("a: [", encoding="utf-8")
    assert cli.main(["--config", str(tmp_path / "c.yaml"), "bench"]) == 2
    assert last_error(capsys)["error"] == "ConfigInvalid"


def test_missing_config_exits_2(capsys):
    assert cli.main(["bench"]) == 2
    assert last_error(capsys)["exit_code"] == 2


# -- curate -------------------------------------------------------------------


def test_curate_mock(tmp_path, capsys):
    make_sources(tmp_path, 6)
    cfg = write_config(tmp_path)
    assert cli.main(["--config", str(cfg), "--mock", "curate"]) == 0
    out = capsys.readouterr().out
    run_id = out.splitlines()[0].split()[1]
    run_dir = tmp_path / "out" / "runs" / run_id
    stats = load_stage_stats(run_dir / "stage_stats.json")
    assert stats[0].count_out == 6
    for prev, cur in zip(stats, stats[1:4]):
        if prev.count_out:
            assert f"{compute_stage_ratio(prev.count_out, cur.count_out):+.2f}" in out
    assert (run_dir / "manifest.jsonl").exists()
    assert all(p.startswith("out") or p in {"config.yaml", "sources.jsonl"} or p.startswith("img")
               for p in tree(tmp_path))

    # stats subcommand reproduces the table
    assert cli.main(["--config", str(cfg), "stats", run_id]) == 0
    table = capsys.readouterr().out
    assert table.strip() in out
    assert cli.main(["stats", "--stats-file", str(run_dir / "stage_stats.json")]) == 0
    assert capsys.readouterr().out == table


def test_curate_resume_identical(tmp_path, capsys):
    make_sources(tmp_path, 5)
    cfg = write_config(tmp_path)
    assert cli.main(["--config", str(cfg), "--mock", "curate"]) == 0
    run_id = capsys.readouterr().out.splitlines()[0].split()[1]
    manifest = tmp_path / "out" / "runs" / run_id / "manifest.jsonl"
    before = manifest.read_bytes()
    assert cli.main(["--config", str(cfg), "--mock", "curate", "--resume", run_id]) == 0
    assert manifest.read_bytes() == before
    assert cli.main(["--config", str(cfg), "--mock", "curate", "--resume", "nosuchrun"]) == 2


def test_resume_only_for_curate(tmp_path, capsys):
    assert cli.main(["--config", str(write_config(tmp_path)), "--resume", "x", "bench"]) == 2


def test_curate_missing_editor_exits_2(tmp_path, capsys):
    make_sources(tmp_path, 2)
    cfg = write_config(tmp_path, endpoints={"generator": {"base_url": "http://g.invalid"},
                                            "verifier": {"base_url": "http://v.invalid"}})
    assert cli.main(["--config", str(cfg), "curate"]) == 2
    err = last_error(capsys)
    assert err["error"] == "ConfigInvalid" and "editor" in err["message"]
    assert not (tmp_path / "out").exists()


# -- verify -------------------------------------------------------------------


def test_verify_mock(tmp_path, capsys):
    make_sources(tmp_path, 4)
    cfg = write_config(tmp_path)
    assert cli.main(["--config", str(cfg), "--mock", "curate"]) == 0
    run_id = capsys.readouterr().out.splitlines()[0].split()[1]
    manifest = tmp_path / "out" / "runs" / run_id / "manifest.jsonl"
    assert cli.main(["--config", str(cfg), "--mock", "verify", "--manifest", str(manifest), "--ssim-baseline"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "ssim_no_edit_flags" in summary
    assert (tmp_path / "out" / "verify" / "manifest" / "summary.json").exists()


def test_verify_bad_manifest_exits_2(tmp_path, capsys):
    bad = tmp_path / "t.jsonl"
    bad.write_text('{"id": "x"}\n', encoding="utf-8")
    assert cli.main(["--config", str(write_config(tmp_path)), "--mock", "verify", "--manifest", str(bad)]) == 2


# -- bench --------------------------------------------------------------------


def test_bench_mock(tmp_path, capsys):
    make_bench_manifest(tmp_path, per_subtask=1, only={"color_alteration", "style_transfer", "subject_addition",
                                                       "background_change", "spatial_reasoning",
                                                       "lens_zooming", "counting_change", "texture_editing",
                                                       "subject_removal", "relation_change"})
    cfg = write_config(tmp_path)
    args = ["--config", str(cfg), "--mock", "bench", "--model", "demo/v1"]
    assert cli.main(args) == 0
    out = capsys.readouterr().out
    out_dir = tmp_path / "out" / "bench" / "demo_v1"
    assert {p.name for p in out_dir.iterdir()} == {"report.json", "overall.csv", "per_category.csv",
                                                  "per_subtask.csv", "radar.csv"}
    assert "model: demo/v1" in out and "| 10" in out
    first = {p.name: p.read_bytes() for p in out_dir.iterdir()}
    assert cli.main(args) == 0
    assert {p.name: p.read_bytes() for p in out_dir.iterdir()} == first

    assert cli.main(args + ["--canonical"]) == 2
    assert last_error(capsys)["error"] == "ShapeViolation"

    # report re-export
    assert cli.main(["--config", str(cfg), "report", str(out_dir / "report.json")]) == 0
    again = tmp_path / "out" / "reports" / "demo_v1"
    assert (again / "overall.csv").read_bytes() == first["overall.csv"]


def test_bench_missing_judge_exits_2(tmp_path, capsys):
    make_bench_manifest(tmp_path, per_subtask=1, only={"color_alteration"})
    cfg = write_config(tmp_path, endpoints={"editor": {"base_url": "http://e.invalid"}})
    assert cli.main(["--config", str(cfg), "bench"]) == 2
    assert "judge" in last_error(capsys)["message"]


def test_bench_unreachable_endpoint_exits_1(tmp_path, capsys):
    make_bench_manifest(tmp_path, per_subtask=1, only={"color_alteration"})
    cfg = write_config(tmp_path, endpoints={
        "editor": {"base_url": "http://127.0.0.1:9", "max_retries": 0, "timeout": 0.5},
        "judge": {"base_url": "http://127.0.0.1:9", "max_retries": 0, "timeout": 0.5}})
    assert cli.main(["--config", str(cfg), "bench"]) == 1
    assert last_error(capsys)["error"] == "NoScoredCases"


# -- audit --------------------------------------------------------------------


def pair_line(beta, w, rw, l, rl, cid="p"):
    return json.dumps({"context_id": cid, "beta": beta, "logp_theta_w": w, "logp_ref_w": rw,
                       "logp_theta_l": l, "logp_ref_l": rl})


def test_audit_symmetric_pairs(tmp_path, capsys):
    path = tmp_path / "pairs.jsonl"
    path.write_text("\n".join(pair_line(0.1, -3.0, -3.0, -5.0, -5.0, f"p{i}") for i in range(5)) + "\n")
    summary = cli.audit_pairs(path)
    assert summary["mean_loss"] == pytest.approx(math.log(2), abs=1e-12)
    assert cli.main(["audit-d2po", str(path)]) == 0
    assert "0.69314718056" in capsys.readouterr().out


def test_audit_random_pairs_pass(tmp_path):
    rng = random.Random(7)
    lines = [pair_line(rng.uniform(0.05, 1.0), *(-rng.uniform(0.5, 20) for _ in range(4)), f"p{i}")
             for i in range(1000)]
    path = tmp_path / "pairs.jsonl"
    path.write_text("\n".join(lines) + "\n")
    summary = cli.audit_pairs(path)
    assert summary["pairs"] == 1000 and summary["gradient_pass_rate"] == 1.0


def test_audit_skips_malformed(tmp_path, capsys):
    path = tmp_path / "pairs.jsonl"
    path.write_text("\n".join([pair_line(0.1, -1, -2, -3, -4), "{not json", pair_line(0.1, 3, -2, -3, -4),
                               pair_line(0.2, -1, -1, -1, -1)]) + "\n")
    summary = cli.audit_pairs(path)
    assert summary["pairs"] == 2 and summary["skipped"] == 2 and summary["skipped_lines"] == [2, 3]
    cfg = write_config(tmp_path, paths={"pairs": "pairs.jsonl"})
    assert cli.main(["--config", str(cfg), "audit-d2po"]) == 0
    written = json.loads((tmp_path / "out" / "audit" / "pairs_summary.json").read_text())
    assert written["skipped"] == 2


def test_audit_no_valid_pairs(tmp_path, capsys):
    path = tmp_path / "pairs.jsonl"
    path.write_text("garbage\n")
    assert cli.main(["audit-d2po", str(path)]) == 2
    assert cli.main(["audit-d2po", str(tmp_path / "missing.jsonl")]) == 2
    assert cli.main(["audit-d2po"]) == 2


# -- dry run ------------------------------------------------------------------


def test_dry_run_writes_nothing(tmp_path, capsys):
    make_sources(tmp_path, 3)
    make_bench_manifest(tmp_path, per_subtask=1, only={"color_alteration"})
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text(pair_line(0.1, -1, -2, -3, -4) + "\n")
    triplets = tmp_path / "triplets.jsonl"
    triplets.write_text("")
    cfg = write_config(tmp_path, paths={"source_manifest": "sources.jsonl", "bench_manifest": "bench.jsonl",
                                        "triplet_manifest": "triplets.jsonl", "pairs": "pairs.jsonl"})
    stats = tmp_path / "stats.json"
    stats.write_text(json.dumps({"stages": [{"stage": "initial", "method": "-", "count_in": 3,
                                             "count_out": 3}]}))
    report = tmp_path / "report.json"
    report.write_text(json.dumps({"schema_version": 1, "model": "m", "metadata": {}, "locales": {}}))
    before = tree(tmp_path)
    for argv in (["curate"], ["verify"], ["bench"], ["audit-d2po"], ["stats", "--stats-file", str(stats)],
                 ["report", str(report)]):
        assert cli.main(["--config", str(cfg), "--dry-run", *argv]) == 0, argv
        # flags are also accepted after the subcommand
        assert cli.main(["--config", str(cfg), argv[0], "--dry-run", *argv[1:]]) == 0, argv
    assert tree(tmp_path) == before
    assert "dry run" in capsys.readouterr().out


def test_stats_bad_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "stats.json"
    bad.write_text(json.dumps({"stages": [{"stage": "nonsense", "count_in": 1, "count_out": 1}]}))
    assert cli.main(["stats", "--stats-file", str(bad)]) == 2
    assert last_error(capsys)["error"] == "SchemaViolation"
