import json
from collections import Counter

import pytest

from editforge.errors import UnknownSubTask
from editforge.taxonomy import (
    BASIC_METRICS,
    COMPLEX_METRICS,
    Category,
    Complexity,
    Metric,
    Taxonomy,
    classify_subtask,
    load_taxonomy,
    metric_set_for,
    normalize_name,
)


def test_twenty_two_subtasks_split_by_category(taxonomy):
    assert len(taxonomy) == 22
    counts = Counter(s.category for s in taxonomy)
    assert [counts[c] for c in Category] == [7, 5, 5, 5]


def test_names_distinct_after_normalization(taxonomy):
    keys = [normalize_name(s.name) for s in taxonomy]
    assert len(set(keys)) == 22
    assert all(s.key == normalize_name(s.name) for s in taxonomy)


def test_complex_split(taxonomy):
    complex_names = {s.name for s in taxonomy if s.is_complex}
    reasoning = {s.name for s in taxonomy.by_category(Category.REASONING)}
    assert complex_names == reasoning | {"Viewpoint Transformation", "Lens Zooming"}


@pytest.mark.parametrize("name,expected", [
    ("Color Alteration", BASIC_METRICS),
    ("Spatial Reasoning", COMPLEX_METRICS),
    ("Subject Removal", BASIC_METRICS),
])
def test_metric_set_examples(name, expected):
    assert metric_set_for(classify_subtask(name)) == expected


def test_ra_iff_complex(taxonomy):
    for s in taxonomy:
        assert (Metric.RA in metric_set_for(s)) == (s.complexity is Complexity.COMPLEX)


def test_classify_examples():
    s = classify_subtask("Style Transfer")
    assert (s.category, s.complexity) == (Category.SCENE, Complexity.BASIC)
    s = classify_subtask("implicit change edits")
    assert (s.category, s.complexity) == (Category.REASONING, Complexity.COMPLEX)
    with pytest.raises(UnknownSubTask):
        classify_subtask("Teleportation")


def test_classify_case_insensitive_and_idempotent(taxonomy):
    for s in taxonomy:
        assert classify_subtask(s.name.upper()) == s
        assert classify_subtask(s.name.lower()) == s
        assert classify_subtask(classify_subtask(s.name).name) == s
        assert classify_subtask(s.key) == s


def test_unknown_subtask_is_keyerror_with_readable_message():
    with pytest.raises(KeyError) as info:
        classify_subtask("nope")
    assert "nope" in str(info.value)


def test_data_file_round_trip(taxonomy, tmp_path):
    p = tmp_path / "tax.json"
    p.write_text(json.dumps(taxonomy.to_dict()), encoding="utf-8")
    again = load_taxonomy(p)
    assert list(again) == list(taxonomy)
    assert again.version == taxonomy.version


def test_alternative_split_from_file(taxonomy, tmp_path):
    doc = taxonomy.to_dict()
    for rec in doc["subtasks"]:
        if rec["key"] == "lens_zooming":
            rec["complexity"] = "basic"
    p = tmp_path / "tax.json"
    p.write_text(json.dumps(doc), encoding="utf-8")
    alt = load_taxonomy(p)
    assert metric_set_for(alt.get("Lens Zooming")) == BASIC_METRICS


def test_duplicate_names_rejected(taxonomy):
    subs = list(taxonomy)
    with pytest.raises(ValueError):
        Taxonomy(subs + [subs[0]])


def test_bad_schema_version(taxonomy):
    doc = taxonomy.to_dict()
    doc["schema_version"] = 99
    with pytest.raises(ValueError):
        Taxonomy.from_dict(doc)


def test_render_lists_every_subtask(taxonomy):
    text = taxonomy.render()
    assert all(s.name in text for s in taxonomy)
