import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from editforge.gateway import ArtifactStore
from editforge.models import ImageRef
from editforge.taxonomy import default_taxonomy


def write_png(path: Path, arr: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG")
    return path


def make_sources(root: Path, n: int, size=(16, 16), seed: int = 0, wide_every: int = 0) -> Path:
    """Write ``n`` random RGB PNGs plus a source manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        w, h = size
        if wide_every and i % wide_every == 0:
            w = 2 * w
        write_png(root / "img" / f"{i:04d}.png", rng.integers(0, 256, (h, w, 3)))
        lines.append(json.dumps({"id": f"img{i:04d}", "uri": f"img/{i:04d}.png"}))
    manifest = root / "sources.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def digest_int(*parts) -> int:
    return int(hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest(), 16)


@pytest.fixture
def taxonomy():
    return default_taxonomy()


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path / "store")


@pytest.fixture
def png_ref(tmp_path):
    """Factory: ImageRef of a random RGB PNG written under tmp_path."""
    counter = iter(range(10_000))

    def make(w=16, h=16, seed=None) -> ImageRef:
        i = next(counter)
        rng = np.random.default_rng(i if seed is None else seed)
        return ImageRef.from_path(write_png(tmp_path / "refs" / f"{i}.png", rng.integers(0, 256, (h, w, 3))))

    return make


# -- benchmark fixtures -------------------------------------------------------

DIMENSION_TITLES = {
    "Instruction Following": "IF",
    "Non-Edited Region Consistency": "NC",
    "Visual Quality": "VQ",
    "Reasoning Accuracy": "RA",
}


def judge_score(case_id: str, dim: str) -> int:
    """Scripted verdict: a fixed pseudo-random integer in [0, 10], rarely zero."""
    v = digest_int(case_id, dim) % 41
    return 0 if v == 0 else 1 + v % 10


def prompt_dimension(text: str) -> str:
    head = text.split("\n", 3)
    for title, dim in DIMENSION_TITLES.items():
        if any(title in line for line in head):
            return dim
    raise AssertionError("judge prompt without a recognizable dimension title")


def scripted_judge(req):
    text = req.text
    case_id = text.split("[case ", 1)[1].split("]", 1)[0]
    dim = prompt_dimension(text.split("Edited Image:", 1)[-1].strip())
    return json.dumps({"score": judge_score(case_id, dim), "reason": f"scripted {dim}"})


def make_bench_manifest(root: Path, per_subtask: int = 2, cn: bool = True, only=None) -> Path:
    """Manifest with ``per_subtask`` cases for each sub-task; instructions embed the case id."""
    rng = np.random.default_rng(42)
    lines = []
    for s in default_taxonomy():
        if only is not None and s.key not in only:
            continue
        for j in range(per_subtask):
            cid = f"{s.key}-{j}"
            write_png(root / "img" / f"{cid}.png", rng.integers(0, 256, (16, 16, 3)))
            rec = {"id": cid, "image": f"img/{cid}.png", "subtask": s.name,
                   "instruction_en": f"[case {cid}] apply {s.name.lower()}"}
            if cn:
                rec["instruction_cn"] = f"[case {cid}] 编辑 {s.name}"
            if s.is_complex:
                rec["reasoning_points"] = [f"target of {cid}", "operation", "expected visual change"]
            lines.append(json.dumps(rec, ensure_ascii=False))
    path = root / "bench.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
