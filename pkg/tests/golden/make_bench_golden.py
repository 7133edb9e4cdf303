"""Regenerate bench_44.json: expected tables for the 44-case scripted benchmark.

Independent of the package's scoring code: the taxonomy is read from the data
file, means are exact fractions and per-case geometric means use mpmath at 40
digits. Run from the tests directory: ``python3 golden/make_bench_golden.py``.
"""
import json
import sys
from fractions import Fraction
from pathlib import Path

import mpmath

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from conftest import judge_score  # noqa: E402

mpmath.mp.dps = 40
TAXONOMY = Path(__file__).resolve().parents[2] / "src" / "editforge" / "data" / "taxonomy.json"
CATEGORY_NAMES = {"object_editing": "Object Editing", "attribute_editing": "Attribute Editing",
                  "scene_editing": "Scene Editing", "reasoning_editing": "Reasoning Editing"}


def geo(values):
    if 0 in values:
        return mpmath.mpf(0)
    return mpmath.fprod(values) ** (mpmath.mpf(1) / len(values))


def four(x):
    if x is None:
        return "-"
    v = x if not isinstance(x, Fraction) else mpmath.mpf(x.numerator) / x.denominator
    q = mpmath.floor(v * 10000 + mpmath.mpf("0.5"))
    return f"{int(q) // 10000}.{int(q) % 10000:04d}"


def row(cases):
    out = {}
    for dim in ("IF", "NC", "VQ", "RA"):
        vals = [c["scores"][dim] for c in cases if dim in c["scores"]]
        out[dim] = four(Fraction(sum(vals), len(vals))) if vals else "-"
    out["Overall"] = four(mpmath.fsum(c["geo"] for c in cases) / len(cases))
    out["n"] = len(cases)
    return out


def main():
    tax = json.loads(TAXONOMY.read_text(encoding="utf-8"))["subtasks"]
    cases = []
    for s in tax:
        dims = ["IF", "NC", "VQ"] + (["RA"] if s["complexity"] == "complex" else [])
        for j in range(2):
            cid = f"{s['key']}-{j}"
            scores = {d: judge_score(cid, d) for d in dims}
            cases.append({"id": cid, "subtask": s, "scores": scores, "geo": geo([scores[d] for d in dims])})
    golden = {"per_case": {c["id"]: four(c["geo"]) for c in cases}, "per_subtask": {}, "per_category": {}}
    for s in tax:
        golden["per_subtask"][s["display_name"]] = row([c for c in cases if c["subtask"] is s])
    for cat, name in CATEGORY_NAMES.items():
        golden["per_category"][name] = row([c for c in cases if c["subtask"]["category"] == cat])
    golden["overall"] = row(cases)
    out = Path(__file__).with_name("bench_44.json")
    out.write_text(json.dumps(golden, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
