import copy
import json
from collections import Counter
from importlib import resources

import pytest

from psydef.catalog import (
    CatalogError, catalog_from_dict, definitions_for_label, load_dmrs_catalog, load_supplementary_definitions,
)


@pytest.fixture
def doc():
    return json.loads(resources.files("psydef.data").joinpath("dmrs_mini.json").read_text("utf-8"))


def test_bundled_catalog_cardinalities(catalog):
    assert len(catalog.levels) == 7
    assert len(catalog.mechanisms) == 30
    assert len(catalog.indicators) == 150
    assert set(Counter(catalog.indicator_mechanism).values()) == {5}
    assert {lv.id for lv in catalog.levels} == set(catalog.mechanism_level)
    assert all(len(m.exemplars) >= 3 for m in catalog.mechanisms)


def test_149_indicators_reported(doc):
    doc["indicators"].pop()
    with pytest.raises(CatalogError, match="expected 150 indicators, found 149"):
        catalog_from_dict(doc)


def test_29_mechanisms_reported(doc):
    doc["mechanisms"].pop()
    with pytest.raises(CatalogError, match="expected 30 mechanisms, found 29"):
        catalog_from_dict(doc)


def test_dangling_indicator_reference(doc):
    doc["indicators"][3]["mechanism"] = "M99"
    with pytest.raises(CatalogError, match="unknown mechanism 'M99'"):
        catalog_from_dict(doc)


def test_dangling_level_reference(doc):
    doc["mechanisms"][0]["level"] = 9
    with pytest.raises(CatalogError, match="unknown level 9"):
        catalog_from_dict(doc)


def test_too_few_exemplars(doc):
    doc["mechanisms"][0]["exemplars"] = doc["mechanisms"][0]["exemplars"][:2]
    with pytest.raises(CatalogError, match="3 non-empty exemplars"):
        catalog_from_dict(doc)


def test_fingerprint_tracks_content_and_generation_view_ignores_indicators(doc):
    base = catalog_from_dict(doc)
    edited = copy.deepcopy(doc)
    edited["indicators"][0]["statement"] += " (revised)"
    other = catalog_from_dict(edited)
    assert other.fingerprint != base.fingerprint
    assert other.generation_view() == base.generation_view()
    assert catalog_from_dict(copy.deepcopy(doc)).fingerprint == base.fingerprint


def test_load_from_path_and_missing_file(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert load_dmrs_catalog(p).fingerprint == load_dmrs_catalog().fingerprint
    with pytest.raises(FileNotFoundError):
        load_dmrs_catalog(tmp_path / "missing.json")
    p.write_text("{oops")
    with pytest.raises(CatalogError, match="not valid JSON"):
        load_dmrs_catalog(p)


def test_definitions_per_label(catalog, supplementary):
    assert [d.mechanism_name for d in definitions_for_label(3, catalog, supplementary)] == \
        [m.name for m in catalog.mechanisms_for_level(3)]
    [no_def] = definitions_for_label(0, catalog, supplementary)
    assert no_def.level == 0 and len(no_def.exemplars) >= 3
    [info] = definitions_for_label(8, catalog, supplementary)
    assert info.level == 8
    with pytest.raises(KeyError):
        definitions_for_label(9, catalog, supplementary)


def test_supplementary_must_cover_0_and_8(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"definitions": []}))
    with pytest.raises(CatalogError, match=r"\[0, 8\]"):
        load_supplementary_definitions(p)
